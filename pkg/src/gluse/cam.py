"""Grad-CAM heatmaps from the deepest residual stage.

The tap point is the last block's post-attention main-path activations
(64 x H/4 x W/4 for the 3-block student).  Channel weights are the spatial
means of the target-logit gradient; the weighted channel sum is relu'd,
min-max normalized to [0,1] (all-zeros when degenerate), and upsampled to the
input resolution by nearest neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ModelGraph
from .errors import ContractError
from .tensor import Tensor


@dataclass
class Heatmap:
    values: np.ndarray       # (H, W) in [0, 1]
    sample_id: int = -1
    target_class: int = -1


def gradcam(m: ModelGraph, x, target_class: int, sample_id: int = -1) -> Heatmap:
    if not (0 <= target_class < m.num_classes):
        raise ContractError(
            f"target class {target_class} outside [0, {m.num_classes})")
    x = np.asarray(x, dtype=m.dtype)
    if x.ndim != 3:
        raise ContractError(f"gradcam takes one (3,H,W) sample, got {x.shape}")
    h_in, w_in = x.shape[1:]

    m.zero_grad()
    logits, feats = m.forward(Tensor(x[None]), mode="eval", capture_stage3=True)
    onehot = np.zeros_like(logits.data)
    onehot[0, target_class] = 1.0
    target = (logits * Tensor(onehot)).sum()
    target.backward()

    a = feats.data[0]                       # (C, h, w)
    grad = feats.grad[0]
    m.zero_grad()                           # leave the model clean for training
    weights = grad.mean(axis=(1, 2))        # GAP of d logit / dA per channel
    cam = np.maximum((weights[:, None, None] * a).sum(axis=0), 0.0)

    lo, hi = cam.min(), cam.max()
    if hi > lo:
        cam = (cam - lo) / (hi - lo)
    else:
        cam = np.zeros_like(cam)

    # nearest-neighbor upsample to the input resolution
    rows = (np.arange(h_in) * cam.shape[0] // h_in).clip(0, cam.shape[0] - 1)
    cols = (np.arange(w_in) * cam.shape[1] // w_in).clip(0, cam.shape[1] - 1)
    up = cam[np.ix_(rows, cols)]
    return Heatmap(np.clip(up, 0.0, 1.0).astype(np.float64), sample_id, target_class)


def export_heatmap(h: Heatmap, path: str, fmt: str = "pgm") -> None:
    """Write an 8-bit binary PGM (P5) or a CSV of the raw [0,1] values."""
    if fmt == "pgm":
        hh, ww = h.values.shape
        pixels = np.round(h.values * 255).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{ww} {hh}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            for row in h.values:
                fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
    else:
        raise ContractError(f"unknown heatmap format {fmt!r}")


def read_pgm(path: str) -> np.ndarray:
    """Binary-PGM reader for round-trip tests."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, _, rest = data.partition(b"255\n")
    fields = header.split()
    if fields[0] != b"P5":
        raise ContractError("not a binary PGM file")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(rest[:w * h], dtype=np.uint8).reshape(h, w)
