"""Teacher-logit export to GLTL.

A teacher is any callable mapping a (N, 3, H, W) float32 batch to (N, K) raw
logits.  Raw logits (not softened probabilities) are stored, so all
temperature handling stays on the consumer side.  ``fine_tune_head`` offers a
minimal entry point for adapting a teacher's head to a new label space; no
recipe is prescribed.
"""

from __future__ import annotations

import struct

import numpy as np

from .formats import BridgeError, write_gltl


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softened softmax, numerically stabilized."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ZeroTeacher:
    """Stub teacher emitting all-zero logits; exercises the export path
    without a pretrained checkpoint."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return np.zeros((len(batch), self.num_classes), dtype=np.float32)


class LinearProbeTeacher:
    """Teacher from a fixed linear head over mean-pooled channels.  Serves as
    the fine-tuning entry point: fit ``weight``/``bias`` on features from any
    frozen backbone, then export."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float32)   # (K, C)
        self.bias = np.asarray(bias, dtype=np.float32)       # (K,)

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        feats = np.asarray(batch, dtype=np.float32).mean(axis=(2, 3))
        return feats @ self.weight.T + self.bias


def read_glds_samples(path: str) -> tuple[np.ndarray, np.ndarray, int]:
    """Minimal GLDS reader (own copy of the layout; no kit import)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"GLDS":
        raise BridgeError(f"{path}: not a GLDS file")
    version, n, k = struct.unpack_from("<III", data, 4)
    if version != 1:
        raise BridgeError(f"{path}: unsupported GLDS version {version}")
    c, h, w = struct.unpack_from("<HHH", data, 16)
    per = c * h * w
    images = np.empty((n, c, h, w), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    pos = 22
    for i in range(n):
        labels[i] = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        images[i] = np.frombuffer(data, "<f4", per, pos).reshape(c, h, w)
        pos += 4 * per
    if pos != len(data):
        raise BridgeError(f"{path}: {len(data) - pos} trailing bytes")
    return images, labels, k


def export_teacher_logits(teacher, model_name: str, glds_path: str,
                          out_gltl: str, expected_n: int | None = None,
                          batch_size: int = 64) -> np.ndarray:
    """Run the teacher over every GLDS sample in order and write a GLTL."""
    images, _, _ = read_glds_samples(glds_path)
    if expected_n is not None and len(images) != expected_n:
        raise BridgeError(
            f"{glds_path} has {len(images)} samples, manifest expects "
            f"{expected_n}")
    rows = [np.asarray(teacher(images[s:s + batch_size]), dtype=np.float32)
            for s in range(0, len(images), batch_size)]
    logits = np.concatenate(rows) if rows else np.zeros((0, 0), np.float32)
    write_gltl(logits, model_name, out_gltl)
    return logits
