"""Dual-teacher knowledge distillation with confidence-driven dynamic weights.

Per batch: soften student and teacher logits at temperature tau, compute each
teacher's confidence (batch mean of its max softened probability), pick the
(alpha, beta) teacher weights from the branch ladder below, then minimize

    total = (1 - w) * CE + w * KD,     w = (alpha + beta) / 2
    KD    = tau^2 * (alpha * KL(T1 -> S) + beta * KL(T2 -> S))

where KL(T -> S) = sum_j P_T,j * log(P_T,j / P_S,j), batch-averaged, and CE
uses unsoftened (tau = 1) student probabilities.  Standard supervised
training is the same loop with no teachers, so the two are trajectory-
identical whenever the weight ladder lands in the ignored branch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import ModelGraph
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass
class DistillConfig:
    tau: float = 5.0
    delta: float = 0.6
    w_min: float = 0.1
    hard_floor: float = 0.4
    batch_size: int = 64
    lr: float = 0.00025
    weight_decay: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    scheduler_threshold: float = 1e-4
    min_lr: float = 1e-6
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.tau > 0):
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if not (0 < self.w_min < 0.5 <= self.delta < 1):
            raise ParameterError(
                f"need 0 < w_min < 0.5 <= delta < 1, got "
                f"w_min={self.w_min}, delta={self.delta}")
        if not (self.hard_floor < self.delta):
            raise ParameterError("hard_floor must be below delta")


@dataclass
class WeightDecision:
    alpha: float
    beta: float
    branch: str  # ignored | both_soft | prioritize_t2 | prioritize_t1 | equal


# -- teacher providers -----------------------------------------------------------


class ModelTeacher:
    """Teacher backed by an in-kit model, evaluated without tape recording."""

    def __init__(self, model: ModelGraph, mode: str = "eval"):
        self.model = model
        self.mode = mode

    def logits(self, batch: np.ndarray, indices: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.model.forward(Tensor(batch), mode=self.mode).data


class LogitTableTeacher:
    """Teacher backed by a precomputed (N, K) logit table aligned with the
    dataset's sample indices."""

    def __init__(self, table: np.ndarray, name: str = ""):
        self.table = np.asarray(table, dtype=np.float32)
        self.name = name
        if self.table.ndim != 2:
            raise DimensionError(f"logit table must be 2D, got {self.table.shape}")

    def logits(self, batch: np.ndarray, indices: np.ndarray) -> np.ndarray:
        return self.table[indices]


class SelfTeacher:
    """Teacher that mirrors the student exactly (same model, same mode), so
    its softened outputs equal the student's every batch."""

    def __init__(self, model: ModelGraph, mode: str = "train"):
        self.model = model
        self.mode = mode


# -- loss pieces ------------------------------------------------------------------


def soften(logits, tau: float) -> Tensor:
    return T.softmax(logits, temperature=tau)


def teacher_confidence(probs_batch: np.ndarray) -> float:
    probs_batch = np.asarray(probs_batch)
    if probs_batch.ndim != 2 or probs_batch.shape[0] == 0:
        raise ContractError(
            f"confidence needs a non-empty (N,K) batch, got {probs_batch.shape}")
    return float(probs_batch.max(axis=1).mean())


def dynamic_weights(c1: float, c2: float, delta: float, w_min: float,
                    hard_floor: float = 0.4) -> WeightDecision:
    """Branch ladder of the dynamic weighting algorithm, in order."""
    if c1 < hard_floor and c2 < hard_floor:
        return WeightDecision(0.0, 0.0, "ignored")
    if c1 < delta and c2 < delta:
        alpha = max(0.5 - (delta - c1), w_min)
        beta = max(0.5 - (delta - c2), w_min)
        return WeightDecision(alpha, beta, "both_soft")
    if c1 < delta:
        return WeightDecision(0.3, 0.7, "prioritize_t2")
    if c2 < delta:
        return WeightDecision(0.7, 0.3, "prioritize_t1")
    return WeightDecision(0.5, 0.5, "equal")


def _kl_to_student(p_teacher: np.ndarray, p_student: Tensor) -> Tensor:
    """Batch-mean KL from a fixed teacher distribution to the student's,
    sum_j P_T,j * (log P_T,j - log P_S,j)."""
    pt = np.maximum(p_teacher, PROB_FLOOR)
    log_ps = T.tlog(T.clip_min(p_student, PROB_FLOOR))
    const = float((pt * np.log(pt)).sum(axis=-1).mean())
    cross = T.tmean(T.tsum(Tensor(pt.astype(p_student.dtype)) * log_ps, axis=-1))
    return const - cross


def kd_loss(p_s: Tensor, p_t1: np.ndarray, p_t2: np.ndarray,
            alpha: float, beta: float, tau: float) -> Tensor:
    """tau^2-scaled weighted KL divergence from both teachers to the student.

    Teacher probabilities are constants; gradients flow through p_s only."""
    if alpha == 0.0 and beta == 0.0:
        return Tensor(np.zeros((), dtype=p_s.dtype))
    terms = 0.0
    if alpha != 0.0:
        terms = terms + alpha * _kl_to_student(np.asarray(p_t1), p_s)
    if beta != 0.0:
        terms = terms + beta * _kl_to_student(np.asarray(p_t2), p_s)
    return tau * tau * terms


def ce_loss(p_s: Tensor, y_onehot: np.ndarray) -> Tensor:
    """Batch-mean negative log-likelihood of the true class under p_s."""
    y = np.asarray(y_onehot, dtype=p_s.dtype)
    if y.shape != p_s.shape:
        raise DimensionError(f"one-hot shape {y.shape} != probs {p_s.shape}")
    log_ps = T.tlog(T.clip_min(p_s, PROB_FLOOR))
    nll = -T.tsum(Tensor(y) * log_ps, axis=-1)
    return T.tmean(nll) if y.ndim > 1 else nll


def total_loss(ce: Tensor, kd: Tensor, alpha: float, beta: float) -> Tensor:
    w = (alpha + beta) / 2.0
    if w == 0.0:
        return ce
    return (1.0 - w) * ce + w * kd


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


# -- optimizer / scheduler ----------------------------------------------------------


class AdamW:
    """AdamW with decoupled weight decay."""

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise ContractError(
                    "non-finite gradient encountered; training aborted")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
                      - self.lr * self.weight_decay * p.data).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adamw_step(params: list[Tensor], opt: AdamW) -> None:
    opt.step()


class PlateauScheduler:
    """Reduce-on-plateau: halve the lr (down to min_lr) after `patience`
    consecutive epochs without improvement beyond `threshold`."""

    def __init__(self, optimizer: AdamW, factor: float = 0.5, patience: int = 5,
                 threshold: float = 1e-4, min_lr: float = 1e-6):
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, monitored: float) -> float:
        if monitored < self.best - self.threshold:
            self.best = monitored
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.opt.lr


# -- training loops ------------------------------------------------------------------

BRANCHES = ("ignored", "both_soft", "prioritize_t2", "prioritize_t1", "equal")

HISTORY_HEADER = ("epoch,train_loss,val_loss,val_acc,lr,alpha_mean,beta_mean,"
                  + ",".join(f"n_{b}" for b in BRANCHES))


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    alpha_mean: float
    beta_mean: float
    branch_counts: dict[str, int] = field(default_factory=dict)

    def csv_row(self) -> str:
        counts = ",".join(str(self.branch_counts.get(b, 0)) for b in BRANCHES)
        return (f"{self.epoch},{self.train_loss:.6f},{self.val_loss:.6f},"
                f"{self.val_acc:.6f},{self.lr:.8f},{self.alpha_mean:.4f},"
                f"{self.beta_mean:.4f},{counts}")


def _teacher_probs(teacher, model_probs: Tensor, batch_x, indices, tau):
    if isinstance(teacher, SelfTeacher):
        return model_probs.data
    logits = teacher.logits(batch_x, indices)
    with T.no_grad():
        return T.softmax(Tensor(logits), temperature=tau).data


def _evaluate_model(model: ModelGraph, images: np.ndarray, labels: np.ndarray,
                    k: int, batch_size: int) -> tuple[float, float]:
    """(mean CE loss, accuracy) in eval mode."""
    losses, correct = [], 0
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            xb = images[start:start + batch_size]
            yb = labels[start:start + batch_size]
            logits = model.forward(Tensor(xb), mode="eval")
            probs = T.softmax(logits).data
            floored = np.maximum(probs[np.arange(len(yb)), yb], PROB_FLOOR)
            losses.append(-np.log(floored))
            correct += int((probs.argmax(axis=1) == yb).sum())
    return float(np.concatenate(losses).mean()), correct / len(images)


def distill_epoch(student: ModelGraph, t1, t2, images: np.ndarray,
                  labels: np.ndarray, indices: np.ndarray, k: int,
                  cfg: DistillConfig, opt: AdamW,
                  order: np.ndarray) -> dict:
    """One pass over the training subset in the given order.  ``t1``/``t2``
    may be None (pure supervised), in which case the loss graph is exactly
    the CE graph."""
    batch_losses, alphas, betas = [], [], []
    branch_counts = {b: 0 for b in BRANCHES}
    correct = 0
    for start in range(0, len(order), cfg.batch_size):
        sel = order[start:start + cfg.batch_size]
        if len(sel) < 2 and start > 0:
            continue    # drop a trailing singleton: train-mode BN needs >= 2
        xb = images[sel]
        yb = labels[sel]
        idx = indices[sel]

        logits = student.forward(Tensor(xb), mode="train")
        probs = T.softmax(logits)
        ce = ce_loss(probs, one_hot(yb, k))

        if t1 is not None:
            ps_soft = T.softmax(logits, temperature=cfg.tau)
            pt1 = _teacher_probs(t1, ps_soft, xb, idx, cfg.tau)
            pt2 = _teacher_probs(t2, ps_soft, xb, idx, cfg.tau)
            c1 = teacher_confidence(pt1)
            c2 = teacher_confidence(pt2)
            wd = dynamic_weights(c1, c2, cfg.delta, cfg.w_min, cfg.hard_floor)
            branch_counts[wd.branch] += 1
            alphas.append(wd.alpha)
            betas.append(wd.beta)
            if wd.alpha == 0.0 and wd.beta == 0.0:
                loss = ce
            else:
                kd = kd_loss(ps_soft, pt1, pt2, wd.alpha, wd.beta, cfg.tau)
                loss = total_loss(ce, kd, wd.alpha, wd.beta)
        else:
            loss = ce

        opt.zero_grad()
        loss.backward()
        opt.step()
        batch_losses.append(float(loss.data))
        correct += int((probs.data.argmax(axis=1) == yb).sum())

    return {"train_loss": float(np.mean(batch_losses)),
            "train_acc": correct / len(order),
            "alpha_mean": float(np.mean(alphas)) if alphas else 0.0,
            "beta_mean": float(np.mean(betas)) if betas else 0.0,
            "branch_counts": branch_counts}


def _check_teacher(teacher, n: int, k: int, name: str) -> None:
    if isinstance(teacher, LogitTableTeacher):
        if teacher.table.shape[0] < n:
            raise ContractError(
                f"{name} logit rows ({teacher.table.shape[0]}) do not cover "
                f"the dataset ({n} rows needed)")
        if teacher.table.shape[1] != k:
            raise ContractError(
                f"{name} class count ({teacher.table.shape[1]}) does not match "
                f"dataset classes ({k})")


def train(student: ModelGraph, train_images, train_labels, train_indices,
          val_images, val_labels, k: int, cfg: DistillConfig,
          t1=None, t2=None, history_path: str | None = None,
          verbose: bool = False):
    """Shared training loop.  With teachers this is dual-teacher distillation;
    without, conventional supervised training.  Early-stops on validation
    accuracy; returns (history, best_params) with the best-epoch snapshot."""
    if (t1 is None) != (t2 is None):
        raise ContractError("provide both teachers or neither")
    n = len(train_images)
    if t1 is not None:
        full_n = int(train_indices.max()) + 1 if len(train_indices) else n
        _check_teacher(t1, max(full_n, n), k, "teacher 1")
        _check_teacher(t2, max(full_n, n), k, "teacher 2")

    params = student.params()
    opt = AdamW(params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    sched = PlateauScheduler(opt, cfg.scheduler_factor, cfg.scheduler_patience,
                             cfg.scheduler_threshold, cfg.min_lr)
    rng = np.random.default_rng(cfg.seed)

    history: list[EpochReport] = []
    best_acc = -1.0
    best_state = None
    stale = 0
    lines = [HISTORY_HEADER]
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        rep = distill_epoch(student, t1, t2, train_images, train_labels,
                            train_indices, k, cfg, opt, order)
        val_loss, val_acc = _evaluate_model(student, val_images, val_labels,
                                            k, cfg.batch_size)
        lr = sched.step(val_loss)
        report = EpochReport(epoch, rep["train_loss"], val_loss, val_acc, lr,
                             rep["alpha_mean"], rep["beta_mean"],
                             rep["branch_counts"])
        history.append(report)
        lines.append(report.csv_row())
        if verbose:
            print(report.csv_row())
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = [(name, p.data.copy()) for name, p in student.named_params()]
            best_state += [(name, np.array(buf, copy=True))
                           for name, buf in student.named_buffers()]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    if history_path is not None:
        with open(history_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return history, best_state


def restore_state(model: ModelGraph, state: list[tuple[str, np.ndarray]]) -> None:
    params = dict(model.named_params())
    buffer_owners = _buffer_owners(model)
    for name, arr in state:
        if name in params:
            params[name].data = arr.astype(params[name].dtype)
        elif name in buffer_owners:
            buffer_owners[name].set_buffer(name, arr)
        else:
            raise ContractError(f"state entry {name!r} not found in model")


def _buffer_owners(model: ModelGraph) -> dict:
    owners = {}
    if model.stem_bn is not None:
        for bname, _ in model.stem_bn.named_buffers("stem_bn"):
            owners[bname] = model.stem_bn
    for i, block in enumerate(model.blocks):
        for attr in ("bn1", "bn2", "down_bn"):
            bn = getattr(block, attr)
            if bn is not None:
                for bname, _ in bn.named_buffers(f"block{i}.{attr}"):
                    owners[bname] = bn
    return owners


def train_standard(student: ModelGraph, train_images, train_labels,
                   val_images, val_labels, k: int, cfg: DistillConfig,
                   history_path: str | None = None, verbose: bool = False):
    """CE-only training with the same optimizer/scheduler/early-stop stack."""
    idx = np.arange(len(train_images))
    return train(student, train_images, train_labels, idx, val_images,
                 val_labels, k, cfg, None, None, history_path, verbose)
