"""Channel-recalibration blocks: SE, Gated SE, and GLUSE.

All three share the squeeze/excitation core

    z = GAP(x),   s = sigmoid(W2 relu(W1 z))

and differ in how the recalibration is applied:

    SE:       out = x * s                    (static per-channel scale)
    Gated SE: g = sigmoid(Wg * s),  out = x * g
    GLUSE:    h = Wh * x, g = sigmoid(Wg * x),  out = x * s + h * g

The GLU branch's 1x1 convolutions act on the full feature map, so its gate
varies spatially while SE's scale does not.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .layers import ConvLayer, _uniform, _wt
from .tensor import Tensor

ATTENTION_KINDS = ("none", "se", "gated_se", "gluse")


def _check_channels(x: Tensor, c: int) -> Tensor:
    """Promote (C,H,W) to (N,C,H,W) and verify the channel count."""
    if x.data.ndim == 3:
        x = T.reshape(x, (1, *x.shape))
        squeeze = True
    elif x.data.ndim == 4:
        squeeze = False
    else:
        raise DimensionError(f"attention expects a 3D or 4D map, got {x.shape}")
    if x.shape[1] != c:
        raise DimensionError(
            f"block built for {c} channels, input has {x.shape[1]}")
    return x, squeeze


class SEBlock:
    def __init__(self, c: int, r: int, rng: np.random.Generator, dtype=np.float32):
        if c % r != 0:
            raise ParameterError(f"channels {c} not divisible by reduction {r}")
        self.c, self.r = c, r
        hidden = c // r
        self.w1 = Tensor(_uniform(rng, (hidden, c), c, dtype), requires_grad=True)
        self.b1 = Tensor(_uniform(rng, (hidden,), c, dtype), requires_grad=True)
        self.w2 = Tensor(_uniform(rng, (c, hidden), hidden, dtype), requires_grad=True)
        self.b2 = Tensor(_uniform(rng, (c,), hidden, dtype), requires_grad=True)

    def scales(self, x4: Tensor) -> Tensor:
        """Per-channel recalibration vector s, shape (N, C)."""
        z = T.global_avg_pool(x4)                       # (N, C)
        u = T.relu(T.matmul(z, _wt(self.w1)) + self.b1)  # (N, C/r)
        return T.sigmoid(T.matmul(u, _wt(self.w2)) + self.b2)

    def __call__(self, x: Tensor) -> Tensor:
        x4, squeeze = _check_channels(x, self.c)
        out = T.channel_scale(x4, self.scales(x4))
        return T.reshape(out, out.shape[1:]) if squeeze else out

    def named_params(self, prefix: str):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


class GatedSEBlock:
    """SE whose channel scales pass through an extra 1x1 conv + sigmoid gate
    before being applied to the input."""

    def __init__(self, c: int, r: int, rng: np.random.Generator, dtype=np.float32):
        self.c, self.r = c, r
        self.se = SEBlock(c, r, rng, dtype)
        # gate bias starts at 0 so the gate opens at 0.5
        self.gate = ConvLayer(c, c, 1, 1, rng, dtype, zero_bias=True)

    def __call__(self, x: Tensor) -> Tensor:
        x4, squeeze = _check_channels(x, self.c)
        s = self.se.scales(x4)                          # (N, C)
        s_map = T.reshape(s, (*s.shape, 1, 1))          # (N, C, 1, 1)
        g = T.sigmoid(self.gate(s_map))                 # (N, C, 1, 1)
        out = T.channel_scale(x4, T.reshape(g, s.shape))
        return T.reshape(out, out.shape[1:]) if squeeze else out

    def named_params(self, prefix: str):
        return self.se.named_params(f"{prefix}.se") + \
            self.gate.named_params(f"{prefix}.gate")


class GLUSEBlock:
    """SE recalibration plus a GLU branch: two parallel 1x1 convolutions on
    the full map, combined multiplicatively, added to the SE output."""

    def __init__(self, c: int, r: int, rng: np.random.Generator, dtype=np.float32):
        self.c, self.r = c, r
        self.se = SEBlock(c, r, rng, dtype)
        self.linear = ConvLayer(c, c, 1, 1, rng, dtype)
        self.gate = ConvLayer(c, c, 1, 1, rng, dtype, zero_bias=True)

    def __call__(self, x: Tensor) -> Tensor:
        x4, squeeze = _check_channels(x, self.c)
        x_se = T.channel_scale(x4, self.se.scales(x4))
        h = self.linear(x4)
        g = T.sigmoid(self.gate(x4))
        out = x_se + h * g
        return T.reshape(out, out.shape[1:]) if squeeze else out

    def named_params(self, prefix: str):
        return self.se.named_params(f"{prefix}.se") + \
            self.linear.named_params(f"{prefix}.linear") + \
            self.gate.named_params(f"{prefix}.gate")


def make_attention(kind: str, c: int, r: int, rng: np.random.Generator,
                   dtype=np.float32):
    if kind == "none":
        return None
    if kind == "se":
        return SEBlock(c, r, rng, dtype)
    if kind == "gated_se":
        return GatedSEBlock(c, r, rng, dtype)
    if kind == "gluse":
        return GLUSEBlock(c, r, rng, dtype)
    raise ParameterError(f"unknown attention kind {kind!r}")


def se_forward(block: SEBlock, x: Tensor) -> Tensor:
    return block(x)


def gated_se_forward(block: GatedSEBlock, x: Tensor) -> Tensor:
    return block(x)


def gluse_forward(block: GLUSEBlock, x: Tensor) -> Tensor:
    return block(x)


def attention_param_inventory(kind: str, c: int, r: int) -> int:
    """Learnable-scalar count of one attention block at channel width c."""
    if kind not in ATTENTION_KINDS:
        raise ParameterError(f"unknown attention kind {kind!r}")
    if kind == "none":
        return 0
    if c % r != 0:
        raise ParameterError(f"channels {c} not divisible by reduction {r}")
    se = 2 * c * c // r + c // r + c     # W1, W2 plus their biases
    if kind == "se":
        return se
    if kind == "gated_se":
        return se + c * c + c            # 1x1 gate conv + bias
    return se + 2 * (c * c + c)          # gluse: linear + gate 1x1 convs
