"""Lightweight ResNet builder with a pluggable channel-attention kind.

The student ("ResNet-8") is: 3x3 stem conv (3->16, stride 1) + BN + relu,
then one residual block per stage (16->16 s1, 16->32 s2, 32->64 s2), global
average pooling, and a single 64->K linear head.  The stem keeps stride 1 so
stage feature maps on a 64x64 input are 64^2 / 32^2 / 16^2, which is the
configuration under which the attention FLOP deltas reproduce exactly.

``blocks_per_stage=2`` yields the deeper 6-block variant used as an in-kit
distillation teacher.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import ATTENTION_KINDS, attention_param_inventory, make_attention
from .errors import DimensionError, ParameterError
from .layers import BatchNorm2d, ConvLayer, LinearLayer, ResidualBlock
from .tensor import Tensor

STAGE_CHANNELS = (16, 32, 64)


class ModelGraph:
    def __init__(self, attention_kind: str, num_classes: int, r: int,
                 bn_enabled: bool, seed: int, dtype=np.float32,
                 blocks_per_stage: int = 1):
        if attention_kind not in ATTENTION_KINDS:
            raise ParameterError(f"unknown attention kind {attention_kind!r}")
        if num_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {num_classes}")
        self.attention_kind = attention_kind
        self.num_classes = num_classes
        self.r = r
        self.bn_enabled = bn_enabled
        self.seed = seed
        self.dtype = dtype
        self.blocks_per_stage = blocks_per_stage

        rng = np.random.default_rng(seed)
        self.stem = ConvLayer(3, STAGE_CHANNELS[0], 3, 1, rng, dtype)
        self.stem_bn = BatchNorm2d(STAGE_CHANNELS[0], dtype=dtype) if bn_enabled else None
        self.blocks: list[ResidualBlock] = []
        c_in = STAGE_CHANNELS[0]
        for stage, c_out in enumerate(STAGE_CHANNELS):
            for b in range(blocks_per_stage):
                stride = (1 if stage == 0 else 2) if b == 0 else 1
                att = make_attention(attention_kind, c_out, r, rng, dtype)
                self.blocks.append(
                    ResidualBlock(c_in, c_out, stride, att, rng, bn_enabled, dtype))
                c_in = c_out
        self.head = LinearLayer(STAGE_CHANNELS[-1], num_classes, rng, dtype)

    # -- forward ----------------------------------------------------------

    def forward(self, x: Tensor, mode: str = "train",
                capture_stage3: bool = False):
        """Logits for a batch (N,3,H,W) or sample (3,H,W).

        With ``capture_stage3`` also returns the post-attention main-path
        output Tensor of the last residual block (the Grad-CAM tap)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim == 3:
            x = T.reshape(x, (1, *x.shape))
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected (N,3,H,W) input, got {x.shape}")
        y = self.stem(x)
        if self.stem_bn is not None:
            y = self.stem_bn(y, mode)
        y = T.relu(y)
        captured = None
        for i, block in enumerate(self.blocks):
            if capture_stage3 and i == len(self.blocks) - 1:
                y, captured = self._block_forward_captured(block, y, mode)
            else:
                y = block(y, mode)
        pooled = T.global_avg_pool(y)          # (N, 64)
        logits = self.head(pooled)
        if capture_stage3:
            return logits, captured
        return logits

    @staticmethod
    def _block_forward_captured(block: ResidualBlock, x: Tensor, mode: str):
        """Residual forward that exposes the main-path tensor after the
        attention block (before the skip-sum)."""
        y = block.conv1(x)
        if block.bn1 is not None:
            y = block.bn1(y, mode)
        y = T.relu(y)
        y = block.conv2(y)
        if block.bn2 is not None:
            y = block.bn2(y, mode)
        if block.attention is not None:
            y = block.attention(y)
        captured = y
        if block.down_conv is not None:
            skip = block.down_conv(x)
            if block.down_bn is not None:
                skip = block.down_bn(skip, mode)
        else:
            skip = x
        return T.relu(y + skip), captured

    __call__ = forward

    # -- parameter access ----------------------------------------------------

    def named_params(self):
        out = self.stem.named_params("stem")
        if self.stem_bn is not None:
            out += self.stem_bn.named_params("stem_bn")
        for i, block in enumerate(self.blocks):
            out += block.named_params(f"block{i}")
        out += self.head.named_params("head")
        return out

    def named_buffers(self):
        out = []
        if self.stem_bn is not None:
            out += self.stem_bn.named_buffers("stem_bn")
        for i, block in enumerate(self.blocks):
            out += block.named_buffers(f"block{i}")
        return out

    def params(self):
        return [t for _, t in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def build_model(attention_kind: str, num_classes: int, r: int = 4,
                bn_enabled: bool = True, seed: int = 0, dtype=np.float32,
                blocks_per_stage: int = 1) -> ModelGraph:
    return ModelGraph(attention_kind, num_classes, r, bn_enabled, seed, dtype,
                      blocks_per_stage)


def model_forward(m: ModelGraph, batch, mode: str = "eval") -> Tensor:
    return m.forward(batch, mode)


# -- layer table -----------------------------------------------------------------


def _conv_row(name, layer: ConvLayer, h, w):
    ho = (h + 2 * layer.padding - layer.k) // layer.stride + 1
    wo = (w + 2 * layer.padding - layer.k) // layer.stride + 1
    params = layer.weight.size + layer.bias.size
    macs = ho * wo * layer.c_out * layer.c_in * layer.k * layer.k
    return {"name": name, "output_shape": (layer.c_out, ho, wo),
            "params": params, "flops": macs,
            "breakdown": {"mac": macs, "elementwise": 0, "pooling": 0}}, ho, wo


def _bn_row(name, bn: BatchNorm2d, c, h, w):
    # one multiply per element (the gamma/inv-std scale); adds excluded
    ew = c * h * w
    return {"name": name, "output_shape": (c, h, w),
            "params": 2 * c, "flops": ew,
            "breakdown": {"mac": 0, "elementwise": ew, "pooling": 0}}


def _attention_row(name, kind, c, r, h, w):
    hw = h * w
    params = attention_param_inventory(kind, c, r)
    if kind == "se":
        mac = 2 * c * c // r
        ew = hw * c                     # channel-scale multiplies
        pool = hw * c                   # GAP adds
    elif kind == "gated_se":
        mac = 2 * c * c // r + c * c    # SE FCs + 1x1 gate conv on s
        ew = 2 * hw * c                 # SE scale + gate scale
        pool = hw * c
    elif kind == "gluse":
        mac = 2 * c * c // r + 2 * hw * c * c   # SE FCs + two full-map 1x1 convs
        ew = 2 * hw * c                 # SE scale + gate multiply
        pool = hw * c
    else:
        raise ParameterError(f"no attention row for kind {kind!r}")
    return {"name": name, "output_shape": (c, h, w),
            "params": params, "flops": mac + ew + pool,
            "breakdown": {"mac": mac, "elementwise": ew, "pooling": pool}}


def describe(m: ModelGraph, input_shape=(3, 64, 64)) -> list[dict]:
    """Per-layer table of (name, output shape, params, FLOPs) under the kit's
    counting convention: 1 FLOP per multiply-accumulate in conv/FC, 1 per
    elementwise multiply in recalibration, HWC adds per global average pool;
    activations and skip-adds excluded."""
    c, h, w = input_shape
    if c != 3:
        raise DimensionError(f"expected 3 input channels, got {c}")
    rows = []
    row, h, w = _conv_row("stem.conv", m.stem, h, w)
    rows.append(row)
    if m.stem_bn is not None:
        rows.append(_bn_row("stem.bn", m.stem_bn, STAGE_CHANNELS[0], h, w))
    for i, block in enumerate(m.blocks):
        p = f"block{i}"
        row, h, w = _conv_row(f"{p}.conv1", block.conv1, h, w)
        rows.append(row)
        if block.bn1 is not None:
            rows.append(_bn_row(f"{p}.bn1", block.bn1, block.c_out, h, w))
        row, h, w = _conv_row(f"{p}.conv2", block.conv2, h, w)
        rows.append(row)
        if block.bn2 is not None:
            rows.append(_bn_row(f"{p}.bn2", block.bn2, block.c_out, h, w))
        if block.down_conv is not None:
            # acts on the block input; recompute from the block's stride
            hin, win = h * block.stride, w * block.stride
            row, _, _ = _conv_row(f"{p}.down", block.down_conv, hin, win)
            rows.append(row)
            if block.down_bn is not None:
                rows.append(_bn_row(f"{p}.down_bn", block.down_bn,
                                    block.c_out, h, w))
        if block.attention is not None:
            rows.append(_attention_row(f"{p}.attention", m.attention_kind,
                                       block.c_out, m.r, h, w))
    pool = STAGE_CHANNELS[-1] * h * w
    rows.append({"name": "global_avg_pool", "output_shape": (STAGE_CHANNELS[-1],),
                 "params": 0, "flops": pool,
                 "breakdown": {"mac": 0, "elementwise": 0, "pooling": pool}})
    head_macs = m.head.n_in * m.head.n_out
    rows.append({"name": "head", "output_shape": (m.num_classes,),
                 "params": m.head.weight.size + m.head.bias.size,
                 "flops": head_macs,
                 "breakdown": {"mac": head_macs, "elementwise": 0, "pooling": 0}})
    return rows
