"""On-disk formats: GLDS datasets, GLTL teacher logits, GLCK checkpoints,
plain-text run configs, plus the procedural synthetic dataset generator.

All binary formats are little-endian and round-trip bit-exactly.  Malformed
files raise FormatError naming the byte offset where parsing failed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .backbone import ModelGraph, build_model
from .errors import FormatError, ParameterError
from .layers import BatchNorm2d

GLDS_MAGIC = b"GLDS"
GLTL_MAGIC = b"GLTL"
GLCK_MAGIC = b"GLCK"

# producer-side normalization constants (applied before writing GLDS)
NORM_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
NORM_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass
class LabeledDataset:
    images: np.ndarray              # (N, C, H, W) float32
    labels: np.ndarray              # (N,) int64
    num_classes: int
    class_names: list[str] | None = None

    def __len__(self) -> int:
        return len(self.labels)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated at byte {self.pos} "
                f"(needed {n} more bytes, file has {len(self.data)})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f32(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).copy()


def _expect_magic(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise FormatError(
            f"{r.path}: bad magic at byte 0: expected {magic!r}, got {got!r}")


# -- GLDS ------------------------------------------------------------------------


def write_dataset(ds: LabeledDataset, path: str) -> None:
    n, c, h, w = ds.images.shape
    if ds.labels.min(initial=0) < 0 or (n and ds.labels.max() >= ds.num_classes):
        raise FormatError("labels must lie in [0, num_classes)")
    with open(path, "wb") as fh:
        fh.write(GLDS_MAGIC)
        fh.write(struct.pack("<III", 1, n, ds.num_classes))
        fh.write(struct.pack("<HHH", c, h, w))
        for i in range(n):
            fh.write(struct.pack("<I", int(ds.labels[i])))
            fh.write(ds.images[i].astype("<f4").tobytes())
    if ds.class_names:
        with open(path + ".classes", "w") as fh:
            fh.write("\n".join(ds.class_names) + "\n")


def read_dataset(path: str) -> LabeledDataset:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    _expect_magic(r, GLDS_MAGIC)
    version = r.u32()
    if version != 1:
        raise FormatError(f"{path}: unsupported GLDS version {version}")
    n, k = r.u32(), r.u32()
    c, h, w = r.u16(), r.u16(), r.u16()
    images = np.empty((n, c, h, w), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    per = c * h * w
    for i in range(n):
        label_offset = r.pos
        labels[i] = r.u32()
        if labels[i] >= k:
            raise FormatError(
                f"{path}: label {labels[i]} >= num_classes {k} "
                f"at byte {label_offset}")
        images[i] = r.f32(per).reshape(c, h, w)
    if r.pos != len(r.data):
        raise FormatError(
            f"{path}: {len(r.data) - r.pos} trailing bytes after byte {r.pos}")
    names = None
    try:
        with open(path + ".classes") as fh:
            names = [ln for ln in fh.read().splitlines() if ln]
    except FileNotFoundError:
        pass
    return LabeledDataset(images, labels, k, names)


def split_dataset(ds: LabeledDataset, seed: int,
                  train_frac: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test index split by seeded permutation."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_train = int(round(train_frac * len(ds)))
    return perm[:n_train], perm[n_train:]


# -- GLTL -------------------------------------------------------------------------


def write_logits(logits: np.ndarray, teacher_name: str, path: str) -> None:
    logits = np.asarray(logits, dtype=np.float32)
    if logits.ndim != 2:
        raise FormatError(f"logits must be (N, K), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise FormatError("logits must be finite")
    name = teacher_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GLTL_MAGIC)
        fh.write(struct.pack("<III", 1, logits.shape[0], logits.shape[1]))
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(logits.astype("<f4").tobytes())


def read_logits(path: str, expected_n: int | None = None,
                expected_k: int | None = None) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    _expect_magic(r, GLTL_MAGIC)
    version = r.u32()
    if version != 1:
        raise FormatError(f"{path}: unsupported GLTL version {version}")
    n, k = r.u32(), r.u32()
    name = r.take(r.u32()).decode("utf-8")
    if expected_n is not None and n != expected_n:
        raise FormatError(
            f"{path}: logit file has {n} samples, dataset has {expected_n}")
    if expected_k is not None and k != expected_k:
        raise FormatError(
            f"{path}: logit file has K={k}, dataset has K={expected_k}")
    table = r.f32(n * k).reshape(n, k)
    if not np.all(np.isfinite(table)):
        raise FormatError(f"{path}: non-finite logits")
    return table, name


# -- GLCK --------------------------------------------------------------------------


def save_checkpoint(m: ModelGraph, path: str) -> None:
    entries = [(name, t.data) for name, t in m.named_params()]
    entries += [(name, np.asarray(buf)) for name, buf in m.named_buffers()]
    kind = m.attention_kind.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(GLCK_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<H", len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<IIBQ", m.num_classes, m.r,
                             1 if m.bn_enabled else 0, m.seed))
        fh.write(struct.pack("<I", m.blocks_per_stage))
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path: str) -> ModelGraph:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    _expect_magic(r, GLCK_MAGIC)
    version = r.u32()
    if version != 1:
        raise FormatError(f"{path}: unsupported GLCK version {version}")
    kind = r.take(r.u16()).decode("ascii")
    k, red = r.u32(), r.u32()
    bn = bool(r.u8())
    seed = r.u64()
    blocks_per_stage = r.u32()
    m = build_model(kind, k, red, bn, seed=seed, blocks_per_stage=blocks_per_stage)
    params = dict(m.named_params())
    buffers = {name: None for name, _ in m.named_buffers()}
    count = r.u32()
    for _ in range(count):
        name = r.take(r.u16()).decode("ascii")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        data = r.f32(int(np.prod(shape)) if shape else 1).reshape(shape)
        if name in params:
            if params[name].shape != shape:
                raise FormatError(
                    f"{path}: tensor {name!r} has shape {shape}, "
                    f"model expects {params[name].shape}")
            params[name].data = data.astype(np.float32)
        elif name in buffers:
            _set_model_buffer(m, name, data)
        else:
            raise FormatError(f"{path}: unknown tensor {name!r}")
    if r.pos != len(r.data):
        raise FormatError(
            f"{path}: {len(r.data) - r.pos} trailing bytes after byte {r.pos}")
    return m


def _set_model_buffer(m: ModelGraph, name: str, data: np.ndarray) -> None:
    owner: BatchNorm2d | None = None
    if name.startswith("stem_bn"):
        owner = m.stem_bn
    else:
        prefix = name.split(".")[0]
        attr = name.split(".")[1]
        owner = getattr(m.blocks[int(prefix[5:])], attr)
    if owner is None:
        raise FormatError(f"buffer {name!r} has no owner in this model")
    owner.set_buffer(name, data)


# -- run config ----------------------------------------------------------------------


RUN_CONFIG_DEFAULTS: dict[str, str] = {
    "seed": "0",
    "data": "",
    "attention": "gluse",
    "classes": "0",                 # 0 = take from dataset
    "reduction": "4",
    "bn": "true",
    "tau": "5",
    "delta": "0.6",
    "w_min": "0.1",
    "batch_size": "64",
    "lr": "0.00025",
    "weight_decay": "0.0005",
    "max_epochs": "100",
    "early_stop_patience": "10",
    "scheduler_patience": "5",
    "scheduler_factor": "0.5",
    "t1_logits": "",
    "t2_logits": "",
}


def read_run_config(path: str) -> dict[str, str]:
    cfg = dict(RUN_CONFIG_DEFAULTS)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in RUN_CONFIG_DEFAULTS:
                raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = value
    return cfg


# -- synthetic dataset -----------------------------------------------------------------


@dataclass
class SynthSpec:
    num_classes: int = 4
    per_class: int = 50
    size: int = 32
    texture_amplitude: float = 0.45
    noise_std: float = 0.35

    def __post_init__(self):
        if not (2 <= self.num_classes <= 10):
            raise ParameterError("num_classes must be in [2, 10]")
        if self.size not in (32, 64):
            raise ParameterError("size must be 32 or 64")


_PALETTE = np.array([
    [0.65, 0.40, 0.35], [0.35, 0.60, 0.40], [0.40, 0.40, 0.65],
    [0.60, 0.60, 0.35], [0.55, 0.35, 0.60], [0.35, 0.60, 0.60],
    [0.70, 0.50, 0.50], [0.45, 0.65, 0.45], [0.50, 0.50, 0.70],
    [0.60, 0.55, 0.45],
], dtype=np.float64)


def _texture(family: int, variant: int, size: int,
             rng: np.random.Generator) -> np.ndarray:
    """One [−1, 1]-ish grayscale texture with per-sample jitter."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if family == 0:                      # oriented stripes
        theta = np.pi * (0.15 + 0.3 * variant) + rng.uniform(-0.1, 0.1)
        freq = 2 * np.pi * (3 + variant) / size
        phase = rng.uniform(0, 2 * np.pi)
        return np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    if family == 1:                      # checkerboard
        cell = max(2, size // (6 + 2 * variant))
        ox, oy = rng.integers(0, cell, size=2)
        return np.where((((xx + ox) // cell) + ((yy + oy) // cell)) % 2 == 0,
                        1.0, -1.0)
    if family == 2:                      # linear gradient
        theta = np.pi * (0.1 + 0.4 * variant) + rng.uniform(-0.15, 0.15)
        ramp = (xx * np.cos(theta) + yy * np.sin(theta)) / size
        return 2.0 * (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-9) - 1.0
    # family 3: gaussian blobs
    tex = -np.ones((size, size))
    for _ in range(2 + variant):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        s = size * (0.10 + 0.04 * variant)
        tex += 2.5 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return np.clip(tex, -1.0, 1.5)


def _texture_window(size: int, rng: np.random.Generator) -> np.ndarray:
    """Soft disk of random center and radius; texture lives inside it."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    r = rng.uniform(0.22, 0.32) * size
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return 1.0 / (1.0 + np.exp((dist - r) / (0.05 * size)))


def synth_dataset(spec: SynthSpec, seed: int) -> LabeledDataset:
    """Procedural texture classes.  Classes pair up on a shared palette, so
    color only narrows the label down to a pair; the texture family
    (stripes / checker / gradient / blobs) disambiguates within the pair, and
    each sample's texture is confined to a random soft window, with phase,
    offsets, and noise drawn per sample.  Channel values are normalized with
    the standard producer mean/std, matching real GLDS files."""
    rng = np.random.default_rng(seed)
    n = spec.num_classes * spec.per_class
    images = np.empty((n, 3, spec.size, spec.size), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for k in range(spec.num_classes):
        family, variant = k % 4, k // 4
        base = _PALETTE[k // 2]
        for _ in range(spec.per_class):
            tex = _texture(family, variant, spec.size, rng)
            tex = tex * _texture_window(spec.size, rng)
            img = np.empty((3, spec.size, spec.size))
            for ch in range(3):
                chan = base[ch] + spec.texture_amplitude * tex * (0.6 + 0.4 * (ch == k % 3))
                chan = chan + rng.normal(0.0, spec.noise_std, size=tex.shape)
                img[ch] = np.clip(chan, 0.0, 1.0)
            img = (img - NORM_MEAN[:, None, None]) / NORM_STD[:, None, None]
            images[i] = img.astype(np.float32)
            labels[i] = k
            i += 1
    names = [f"class_{k}" for k in range(spec.num_classes)]
    return LabeledDataset(images, labels, spec.num_classes, names)
