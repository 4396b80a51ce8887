"""Image-folder to GLDS conversion.

Expects the EuroSAT/PatternNet directory layout (one subdirectory per class,
RGB-decodable images inside).  Each image is resized to the target size with
bilinear resampling, scaled to [0, 1], and normalized per channel with the
standard mean/std; the manifest records the exact emission order so a GLTL
export from the same manifest stays index-aligned.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .formats import BridgeError, write_glds

NORM_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
NORM_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class ConversionManifest:
    source_dir: str
    class_to_label: dict[str, int]
    target_size: int = 64
    mean: list[float] = field(default_factory=lambda: NORM_MEAN.tolist())
    std: list[float] = field(default_factory=lambda: NORM_STD.tolist())
    seed: int = 0
    samples: list[dict] = field(default_factory=list)   # emission order
    skipped: list[str] = field(default_factory=list)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "ConversionManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _preprocess(img: Image.Image, size: int) -> np.ndarray:
    """(3, size, size) float32: bilinear resize, [0,1] scale, normalize."""
    rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0          # (H, W, 3)
    arr = (arr - NORM_MEAN) / NORM_STD
    return arr.transpose(2, 0, 1)


def build_manifest(src_dir: str, target_size: int = 64,
                   seed: int = 0) -> ConversionManifest:
    """Scan a directory-per-class tree into a manifest (sorted, no decoding)."""
    root = Path(src_dir)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise BridgeError(f"{src_dir}: no class subdirectories found")
    manifest = ConversionManifest(
        source_dir=str(root),
        class_to_label={name: i for i, name in enumerate(classes)},
        target_size=target_size, seed=seed)
    for name in classes:
        files = sorted(p for p in (root / name).iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise BridgeError(f"{root / name}: class directory has no images")
        for f in files:
            manifest.samples.append(
                {"path": str(f.relative_to(root)),
                 "label": manifest.class_to_label[name]})
    return manifest


def convert_images(src_dir: str, out_glds: str,
                   manifest: ConversionManifest | None = None,
                   manifest_path: str | None = None) -> ConversionManifest:
    """Convert per the manifest (built from the tree when not given); write
    the GLDS file and, optionally, the manifest JSON next to it."""
    if manifest is None:
        manifest = build_manifest(src_dir)
    root = Path(src_dir)
    images, labels, kept = [], [], []
    for entry in manifest.samples:
        full = root / entry["path"]
        try:
            with Image.open(full) as img:
                images.append(_preprocess(img, manifest.target_size))
        except (UnidentifiedImageError, OSError) as exc:
            warnings.warn(f"skipping undecodable image {full}: {exc}")
            manifest.skipped.append(entry["path"])
            continue
        labels.append(entry["label"])
        kept.append(entry)
    if not images:
        raise BridgeError(f"{src_dir}: no decodable images")
    manifest.samples = kept
    names = [name for name, _ in
             sorted(manifest.class_to_label.items(), key=lambda kv: kv[1])]
    write_glds(np.stack(images), np.asarray(labels),
               len(manifest.class_to_label), out_glds, class_names=names)
    if manifest_path:
        manifest.save(manifest_path)
    return manifest
