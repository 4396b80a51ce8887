"""Dense tensors with a reverse-mode differentiation tape.

Tensors wrap a numpy array plus an optional gradient slot.  Every operation
that involves a gradient-requiring input records its parents and a backward
closure; ``Tensor.backward()`` walks the resulting graph once in reverse
topological order.  Convolution uses the cross-correlation convention (no
kernel flip).  Gradients accumulate across backward calls until ``zero_grad``
is invoked, so the training loop owns accumulation.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, ParameterError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (teacher/eval forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # grad arrays are never mutated in place, so adopting g is safe
        if self.grad is None:
            self.grad = g if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            self.grad = self.grad + g

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"],
              backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self) -> None:
        """Backpropagate from a scalar node, filling ``grad`` of every node
        reached.  Repeated calls accumulate into existing gradients."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss; got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return tlog(self)

    def exp(self):
        return texp(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcastable(a_shape, b_shape):
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise DimensionError(
            f"shapes {a_shape} and {b_shape} are not broadcast-compatible") from None


# -- elementwise ops --------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_broadcastable(a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_broadcastable(a.shape, b.shape)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(-_unbroadcast(g, b.shape))

    return Tensor._make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_broadcastable(a.shape, b.shape)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._make(out_data, (a, b), backward)


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale each channel of a (C,H,W) or (N,C,H,W) map by a per-channel
    weight vector of shape (C,) or (N,C)."""
    x = _as_tensor(x)
    s = _as_tensor(s, x.dtype)
    if x.data.ndim == 3:
        if s.shape != (x.shape[0],):
            raise DimensionError(
                f"channel weights {s.shape} do not match map {x.shape}")
        return mul(x, reshape(s, (x.shape[0], 1, 1)))
    if x.data.ndim == 4:
        if s.shape != x.shape[:2]:
            raise DimensionError(
                f"channel weights {s.shape} do not match batch map {x.shape}")
        return mul(x, reshape(s, (*s.shape, 1, 1)))
    raise DimensionError(f"channel_scale expects a 3D or 4D map, got {x.shape}")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "broadcast-scale-per-channel": channel_scale,
}


def elementwise(op_kind: str, a, b) -> Tensor:
    if op_kind not in _ELEMENTWISE:
        raise ParameterError(f"unknown elementwise op {op_kind!r}")
    if op_kind != "broadcast-scale-per-channel":
        a = _as_tensor(a)
        b2 = _as_tensor(b, a.dtype)
        if b2.data.ndim != 0 and a.shape != b2.shape:
            raise DimensionError(f"shape mismatch: {a.shape} vs {b2.shape}")
    return _ELEMENTWISE[op_kind](a, b)


# -- activations --------------------------------------------------------------

def relu(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return Tensor._make(out_data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # overflow on the far-negative tail saturates cleanly to 0
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._make(out_data, (x,), backward)


def tlog(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return Tensor._make(out_data, (x,), backward)


def texp(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data)

    return Tensor._make(out_data, (x,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "log": tlog}


def activation(kind: str, x) -> Tensor:
    if kind not in _ACTIVATIONS:
        raise ParameterError(f"unknown activation {kind!r}")
    return _ACTIVATIONS[kind](x)


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    x = _as_tensor(x)
    out_data = np.maximum(x.data, floor)

    def backward(g):
        x._accumulate(g * (x.data > floor))

    return Tensor._make(out_data, (x,), backward)


# -- reductions / reshaping ---------------------------------------------------

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype))
        else:
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(gg, x.shape).astype(x.dtype))

    return Tensor._make(out_data, (x,), backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor._make(out_data, (x,), backward)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    return Tensor._make(out_data, (a, b), backward)


# -- convolution ---------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride,
                                  j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int,
            ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation.  ``x`` is (C,H,W) or (N,C,H,W); ``w`` is
    (C_out, C_in, k, k); ``bias`` is (C_out,) or None."""
    x = _as_tensor(x)
    w = _as_tensor(w, x.dtype)
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    squeeze = x.data.ndim == 3
    x4 = reshape(x, (1, *x.shape)) if squeeze else x
    n, c_in, h, wdt = x4.shape
    c_out, c_in_w, k, k2 = w.shape
    if k != k2:
        raise DimensionError(f"kernel must be square, got {w.shape}")
    if c_in != c_in_w:
        raise DimensionError(
            f"input channels {c_in} do not match kernel channels {c_in_w}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wdt + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"convolution output would be empty: input {h}x{wdt}, "
            f"kernel {k}, stride {stride}, padding {padding}")
    if bias is not None:
        bias = _as_tensor(bias, x.dtype)
        if bias.shape != (c_out,):
            raise DimensionError(
                f"bias shape {bias.shape} does not match {c_out} output channels")

    wm = w.data.reshape(c_out, c_in * k * k)

    if k == 1 and padding == 0:
        # 1x1 conv is a channel-mixing matmul; no im2col needed
        xs = x4.data[:, :, ::stride, ::stride] if stride > 1 else x4.data
        cols = np.ascontiguousarray(xs).reshape(n, c_in, ho * wo)
    else:
        if padding:
            xp = np.zeros((n, c_in, h + 2 * padding, wdt + 2 * padding),
                          dtype=x4.dtype)
            xp[:, :, padding:padding + h, padding:padding + wdt] = x4.data
        else:
            xp = x4.data
        cols = _im2col(xp, k, stride, ho, wo)          # (N, C_in*k*k, Ho*Wo)

    out_data = np.matmul(wm, cols)                     # (N, C_out, Ho*Wo)
    if bias is not None:
        out_data += bias.data[None, :, None]
    out_data = out_data.reshape(n, c_out, ho, wo)

    parents = (x4, w) if bias is None else (x4, w, bias)

    def backward(g):
        gm = g.reshape(n, c_out, ho * wo)
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accumulate(gm.sum(axis=(0, 2)))
        if w.requires_grad or w._parents:
            dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(dw.reshape(w.shape))
        if x4.requires_grad or x4._parents:
            dcols = np.matmul(wm.T, gm)                # (N, C_in*k*k, Ho*Wo)
            if k == 1 and padding == 0:
                if stride == 1:
                    x4._accumulate(dcols.reshape(x4.shape))
                else:
                    dx = np.zeros(x4.shape, dtype=dcols.dtype)
                    dx[:, :, ::stride, ::stride] = dcols.reshape(n, c_in, ho, wo)
                    x4._accumulate(dx)
            else:
                x4._accumulate(
                    _col2im(dcols, x4.shape, k, stride, padding, ho, wo))

    out = Tensor._make(out_data, parents, backward)
    return reshape(out, (c_out, ho, wo)) if squeeze else out


def global_avg_pool(x) -> Tensor:
    """Mean over spatial dimensions: (C,H,W)->(C,) or (N,C,H,W)->(N,C)."""
    x = _as_tensor(x)
    if x.data.ndim == 3:
        return tmean(x, axis=(1, 2))
    if x.data.ndim == 4:
        return tmean(x, axis=(2, 3))
    raise DimensionError(f"global_avg_pool expects a 3D or 4D map, got {x.shape}")


# -- softmax -------------------------------------------------------------------

def softmax(logits, temperature: float = 1.0) -> Tensor:
    """Temperature-scaled softmax along the last axis, max-subtracted for
    numerical stability."""
    logits = _as_tensor(logits)
    if not (temperature > 0):
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    if not np.all(np.isfinite(logits.data)):
        raise DomainError("softmax requires finite logits")
    z = logits.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        logits._accumulate(out_data * (g - dot) / temperature)

    return Tensor._make(out_data, (logits,), backward)


# -- gradient checking ----------------------------------------------------------

def _coord_error(evaluate, flat, i, an_i, eps, floor, refine):
    """Central-difference error for one coordinate of ``flat``.

    ``evaluate`` recomputes the scalar loss from the current contents of
    ``flat``.  A probe that straddles a ReLU-style kink averages the slopes on
    both sides and reports a spurious mismatch, so when the first pass
    disagrees the coordinate is re-probed with the step shrunk 8x (up to
    ``refine`` times); a kink artifact shrinks with the step while a genuine
    gradient bug does not.  Returns the smallest relative error observed.
    """
    best = float("inf")
    for _ in range(1 + refine):
        orig = flat[i]
        flat[i] = orig + eps
        hi = evaluate()
        flat[i] = orig - eps
        lo = evaluate()
        flat[i] = orig
        fd = (hi - lo) / (2 * eps)
        denom = max(abs(fd), abs(an_i), floor)
        best = min(best, abs(fd - an_i) / denom)
        if best < 1e-6:
            break
        eps /= 8.0
    return best


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor,
                            eps: float = 1e-5, floor: float = 1e-8,
                            refine: int = 0) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` against central
    finite differences, coordinate by coordinate.  Returns the worst relative
    error.  ``floor`` bounds the denominator from below; for deep graphs,
    raise it toward the FD noise scale (~|f|*1e-16/eps) so coordinates whose
    true gradient sits under that noise do not dominate the score.  ``refine``
    allows that many retries at 8x smaller steps for coordinates that land on
    an activation kink (see ``_coord_error``)."""
    x.zero_grad()
    y = f(x)
    if y.data.size != 1:
        raise ContractError("finite_difference_check requires a scalar function")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    an = analytic.reshape(-1)

    def evaluate():
        with no_grad():
            return float(f(x).data)

    worst = 0.0
    for i in range(flat.size):
        worst = max(worst, _coord_error(evaluate, flat, i, an[i], eps,
                                        floor, refine))
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor],
                      params: Iterable[Tensor],
                      eps: float = 1e-5,
                      max_coords_per_tensor: int | None = None,
                      rng: np.random.Generator | None = None,
                      floor: float = 1e-8,
                      refine: int = 0) -> float:
    """Finite-difference check of ``loss_fn`` against tape gradients of
    ``params`` (optionally on a random coordinate subset per tensor).
    ``floor`` and ``refine`` behave as in ``finite_difference_check``."""
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    def evaluate():
        with no_grad():
            return float(loss_fn().data)

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            idx = rng.choice(flat.size, size=max_coords_per_tensor, replace=False)
        for i in idx:
            worst = max(worst, _coord_error(evaluate, flat, i, an_flat[i],
                                            eps, floor, refine))
    return worst
