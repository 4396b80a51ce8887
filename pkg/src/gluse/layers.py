"""Composable neural layers: conv, batch norm, linear, residual block.

Layers are plain classes holding parameter Tensors; calling them builds the
autograd graph.  Parameter initialization is fan-in-scaled uniform from a
caller-supplied numpy Generator so builds are reproducible given a seed.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvLayer:
    """k x k convolution with bias.  3x3 kernels use padding 1 (spatial size
    preserved at stride 1); 1x1 kernels use padding 0."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32, zero_bias: bool = False):
        if k not in (1, 3):
            raise DimensionError(f"kernel size must be 1 or 3, got {k}")
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.padding = 1 if k == 3 else 0
        fan_in = c_in * k * k
        self.weight = Tensor(_uniform(rng, (c_out, c_in, k, k), fan_in, dtype),
                             requires_grad=True)
        bias = np.zeros(c_out, dtype=dtype) if zero_bias else \
            _uniform(rng, (c_out,), fan_in, dtype)
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def named_params(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def named_buffers(self, prefix: str):
        return []


class LinearLayer:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(_uniform(rng, (n_out, n_in), n_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(_uniform(rng, (n_out,), n_in, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        # x: (N, n_in) -> (N, n_out)
        return T.matmul(x, _wt(self.weight)) + self.bias

    def named_params(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def named_buffers(self, prefix: str):
        return []


def _wt(w: Tensor) -> Tensor:
    """Transpose view of a 2D parameter as a graph op."""
    out_data = w.data.T.copy()

    def backward(g):
        w._accumulate(g.T)

    return Tensor._make(out_data, (w,), backward)


class BatchNorm2d:
    """Per-channel batch normalization over (N, C, H, W).

    Train mode normalizes with batch statistics (biased variance) and updates
    running statistics with the configured momentum (unbiased variance, the
    usual convention).  Eval mode uses running statistics only, so it is a
    deterministic pure function.
    """

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        self.c = c
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        if x.data.ndim != 4:
            raise DimensionError(f"BatchNorm2d expects (N,C,H,W), got {x.shape}")
        if x.shape[1] != self.c:
            raise DimensionError(
                f"channel mismatch: input has {x.shape[1]}, layer has {self.c}")
        if mode == "train":
            return self._train_forward(x)
        if mode == "eval":
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = T.reshape(self.gamma * Tensor(inv.astype(x.dtype)), (1, self.c, 1, 1))
            shift = T.reshape(
                self.beta - self.gamma * Tensor((self.running_mean * inv).astype(x.dtype)),
                (1, self.c, 1, 1))
            return x * scale + shift
        raise ContractError(f"unknown mode {mode!r}")

    def _train_forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if n < 2:
            raise ContractError("train-mode batch norm requires a batch of >= 2")
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        xm = x.data - mean[None, :, None, None]
        var = np.mean(xm * xm, axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xm * inv_std[None, :, None, None]
        out_data = self.gamma.data[None, :, None, None] * xhat \
            + self.beta.data[None, :, None, None]

        self.running_mean = ((1 - self.momentum) * self.running_mean
                             + self.momentum * mean).astype(self.running_mean.dtype)
        unbiased = var * m / max(m - 1, 1)
        self.running_var = ((1 - self.momentum) * self.running_var
                            + self.momentum * unbiased).astype(self.running_var.dtype)

        gamma, beta = self.gamma, self.beta

        def backward(g):
            if beta.requires_grad or beta._parents:
                beta._accumulate(g.sum(axis=(0, 2, 3)))
            if gamma.requires_grad or gamma._parents:
                gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
            if x.requires_grad or x._parents:
                dxhat = g * gamma.data[None, :, None, None]
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
                x._accumulate(dx.astype(x.dtype))

        return Tensor._make(out_data, (x, gamma, beta), backward)

    def named_params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def named_buffers(self, prefix: str):
        return [(f"{prefix}.running_mean", self.running_mean),
                (f"{prefix}.running_var", self.running_var)]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name.endswith("running_mean"):
            self.running_mean = value.astype(self.running_mean.dtype)
        elif name.endswith("running_var"):
            self.running_var = value.astype(self.running_var.dtype)
        else:
            raise ContractError(f"unknown buffer {name!r}")


def batchnorm_forward(bn: BatchNorm2d, x: Tensor, mode: str) -> Tensor:
    return bn(x, mode)


class ResidualBlock:
    """conv-bn-relu-conv-bn (+ attention) with a skip connection; relu after
    the sum.  A 1x1 conv + bn projects the skip when the stride or channel
    count changes."""

    def __init__(self, c_in: int, c_out: int, stride: int, attention,
                 rng: np.random.Generator, bn_enabled: bool = True,
                 dtype=np.float32):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.bn_enabled = bn_enabled
        self.conv1 = ConvLayer(c_in, c_out, 3, stride, rng, dtype)
        self.bn1 = BatchNorm2d(c_out, dtype=dtype) if bn_enabled else None
        self.conv2 = ConvLayer(c_out, c_out, 3, 1, rng, dtype)
        self.bn2 = BatchNorm2d(c_out, dtype=dtype) if bn_enabled else None
        if stride != 1 or c_in != c_out:
            self.down_conv = ConvLayer(c_in, c_out, 1, stride, rng, dtype)
            self.down_bn = BatchNorm2d(c_out, dtype=dtype) if bn_enabled else None
        else:
            self.down_conv = None
            self.down_bn = None
        self.attention = attention  # None or an attention block

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        c = x.shape[1] if x.data.ndim == 4 else x.shape[0]
        if c != self.c_in:
            raise DimensionError(
                f"block expects {self.c_in} input channels, got {c}")
        y = self.conv1(x)
        if self.bn1 is not None:
            y = self.bn1(y, mode)
        y = T.relu(y)
        y = self.conv2(y)
        if self.bn2 is not None:
            y = self.bn2(y, mode)
        if self.attention is not None:
            y = self.attention(y)
        if self.down_conv is not None:
            skip = self.down_conv(x)
            if self.down_bn is not None:
                skip = self.down_bn(skip, mode)
        else:
            skip = x
        return T.relu(y + skip)

    def named_params(self, prefix: str):
        out = []
        out += self.conv1.named_params(f"{prefix}.conv1")
        if self.bn1 is not None:
            out += self.bn1.named_params(f"{prefix}.bn1")
        out += self.conv2.named_params(f"{prefix}.conv2")
        if self.bn2 is not None:
            out += self.bn2.named_params(f"{prefix}.bn2")
        if self.down_conv is not None:
            out += self.down_conv.named_params(f"{prefix}.down_conv")
            if self.down_bn is not None:
                out += self.down_bn.named_params(f"{prefix}.down_bn")
        if self.attention is not None:
            out += self.attention.named_params(f"{prefix}.attention")
        return out

    def named_buffers(self, prefix: str):
        out = []
        for name, bn in (("bn1", self.bn1), ("bn2", self.bn2),
                         ("down_bn", self.down_bn)):
            if bn is not None:
                out += bn.named_buffers(f"{prefix}.{name}")
        return out


def residual_forward(block: ResidualBlock, x: Tensor, mode: str = "train") -> Tensor:
    return block(x, mode)
