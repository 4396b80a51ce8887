"""Writers for the GLDS and GLTL binary formats.

Byte layouts (little-endian throughout):

GLDS: b"GLDS" | u32 version=1 | u32 N | u32 K | u16 C | u16 H | u16 W
      then per sample: u32 label | C*H*W float32 (CHW order).
      An optional sidecar ``<path>.classes`` holds one class name per line.

GLTL: b"GLTL" | u32 version=1 | u32 N | u32 K | u32 name_len | name bytes
      then N*K float32 logits in dataset order.
"""

from __future__ import annotations

import struct

import numpy as np

GLDS_MAGIC = b"GLDS"
GLTL_MAGIC = b"GLTL"


class BridgeError(Exception):
    """Raised for any conversion or format violation."""


def write_glds(images: np.ndarray, labels: np.ndarray, num_classes: int,
               path: str, class_names: list[str] | None = None) -> None:
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 4:
        raise BridgeError(f"images must be (N, C, H, W), got {images.shape}")
    if len(labels) != len(images):
        raise BridgeError(
            f"{len(labels)} labels for {len(images)} images")
    if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
        raise BridgeError(f"labels must lie in [0, {num_classes})")
    n, c, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(GLDS_MAGIC)
        fh.write(struct.pack("<III", 1, n, num_classes))
        fh.write(struct.pack("<HHH", c, h, w))
        for i in range(n):
            fh.write(struct.pack("<I", int(labels[i])))
            fh.write(images[i].astype("<f4").tobytes())
    if class_names:
        with open(path + ".classes", "w") as fh:
            fh.write("\n".join(class_names) + "\n")


def write_gltl(logits: np.ndarray, teacher_name: str, path: str) -> None:
    logits = np.asarray(logits, dtype=np.float32)
    if logits.ndim != 2:
        raise BridgeError(f"logits must be (N, K), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise BridgeError("logits must be finite")
    name = teacher_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GLTL_MAGIC)
        fh.write(struct.pack("<III", 1, logits.shape[0], logits.shape[1]))
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(logits.astype("<f4").tobytes())
