"""Parameter and FLOP accounting.

Counting convention (reverse-engineered so the published attention deltas
reproduce exactly): one FLOP per multiply-accumulate in convolutions and
fully connected layers, one FLOP per elementwise multiply in recalibration
or gating applications, and H*W*C adds per global average pool.  Residual
skip-adds and activations are excluded.  Note that "FLOP" conventions in the
literature differ by up to 2x; deltas between attention variants are the
calibrated quantities here, absolute totals are best-effort.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backbone import ModelGraph, describe
from .errors import ParameterError


@dataclass
class CostReport:
    rows: list[dict] = field(default_factory=list)
    total_params: int = 0
    total_flops: int = 0

    def as_text(self) -> str:
        width = max(len(r["name"]) for r in self.rows) + 2
        lines = [f"{'layer':<{width}}{'output':<16}{'params':>10}{'flops':>14}"]
        for r in self.rows:
            shape = "x".join(str(d) for d in r["output_shape"])
            lines.append(f"{r['name']:<{width}}{shape:<16}"
                         f"{r['params']:>10}{r['flops']:>14}")
        lines.append(f"{'TOTAL':<{width}}{'':<16}"
                     f"{self.total_params:>10}{self.total_flops:>14}")
        return "\n".join(lines)

    def as_keyvalues(self) -> str:
        lines = [f"total_params={self.total_params}",
                 f"total_flops={self.total_flops}"]
        for r in self.rows:
            lines.append(f"{r['name']}.params={r['params']}")
            lines.append(f"{r['name']}.flops={r['flops']}")
        return "\n".join(lines) + "\n"


def count_params(m: ModelGraph) -> int:
    """Exact count of learnable scalars (BN running stats excluded)."""
    return sum(t.size for _, t in m.named_params())


def count_flops(m: ModelGraph, input_shape=(3, 64, 64)) -> int:
    return sum(r["flops"] for r in describe(m, input_shape))


def cost_report(m: ModelGraph, input_shape=(3, 64, 64)) -> CostReport:
    rows = describe(m, input_shape)
    return CostReport(rows=rows,
                      total_params=sum(r["params"] for r in rows),
                      total_flops=sum(r["flops"] for r in rows))


def asymptotic_cost(kind: str, c: int, h: int, w: int, r: int) -> dict[str, int]:
    """Dominant-term inventory of one attention site, as symbol -> value."""
    hw = h * w
    if kind == "plain":
        return {"HWC^2": hw * c * c}
    if kind == "se":
        return {"HWC": hw * c, "C^2/r": c * c // r}
    if kind == "gated_se":
        return {"HWC": hw * c, "C^2/r": c * c // r, "C^2": c * c}
    if kind == "gluse":
        return {"HWC": hw * c, "C^2/r": c * c // r, "2C^2": 2 * c * c}
    raise ParameterError(f"unknown structure kind {kind!r}")
