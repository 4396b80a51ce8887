"""Classification metrics: accuracy, weighted precision/recall, confusion matrix.

Precision and recall are weighted by true-class counts N_k.  Weighted recall
is algebraically identical to accuracy (sum_k (N_k/N)(TP_k/N_k) = sum TP_k/N);
both are reported anyway to mirror the usual tabulation.  Classes that are
never predicted (TP_k + FP_k = 0) contribute 0 to precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class EvalResult:
    accuracy: float
    precision: float
    recall: float
    matrix: np.ndarray  # (K, K) counts, rows = true class, cols = predicted


def confusion_matrix(preds, labels, k: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    mat = np.zeros((k, k), dtype=np.int64)
    np.add.at(mat, (labels, preds), 1)
    return mat


def evaluate(preds, labels, k: int) -> EvalResult:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1 or len(preds) == 0:
        raise ContractError(
            f"need equal-length non-empty vectors, got {preds.shape} and {labels.shape}")
    if preds.min() < 0 or preds.max() >= k or labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"class ids must lie in [0, {k})")
    n = len(labels)
    mat = confusion_matrix(preds, labels, k)
    tp = np.diag(mat).astype(np.float64)
    n_k = mat.sum(axis=1).astype(np.float64)        # true counts per class
    pred_k = mat.sum(axis=0).astype(np.float64)     # predicted counts per class

    accuracy = float(tp.sum() / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec_k = np.where(pred_k > 0, tp / pred_k, 0.0)
        rec_k = np.where(n_k > 0, tp / n_k, 0.0)
    precision = float((n_k * prec_k).sum() / n)
    recall = float((n_k * rec_k).sum() / n)
    return EvalResult(accuracy, precision, recall, mat)


def write_confusion_csv(mat: np.ndarray, path: str) -> None:
    with open(path, "w") as fh:
        for row in mat:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
