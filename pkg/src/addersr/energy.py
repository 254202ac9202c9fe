"""Operation counts per layer and the pJ energy model.

A conv layer costs k^2 c_in c_out h w multiplications and as many additions.
An adder layer costs twice that in additions (subtract, then accumulate) and
no multiplications. With ``include_overhead`` the self-shortcut adds
c_out h w additions and the learnable power activation c_out h w
multiplications.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import ConfigurationError
from .models import NetworkSpec

MUL_PJ = 3.7
ADD_PJ = 0.9
CONVENTIONS = ("mul-plus-add", "mul-only")


@dataclass(frozen=True)
class LayerCount:
    name: str
    kind: str
    n_mul: int
    n_add: int


def count_ops(spec: NetworkSpec, h: int, w: int, include_overhead: bool = True) -> list[LayerCount]:
    if h < 1 or w < 1:
        raise ConfigurationError(f"feature extents must be positive, got {h}x{w}")
    hw = h * w
    rows = []
    for i, l in enumerate(spec.layers):
        macs = l.k * l.k * l.c_in * l.c_out * hw
        if l.is_adder:
            n_mul, n_add = 0, 2 * macs
            if include_overhead:
                if l.has_shortcut:
                    n_add += l.c_out * hw
                if l.activation == "power_relu":
                    n_mul += l.c_out * hw
        else:
            n_mul = n_add = macs
        rows.append(LayerCount(f"layer{i}", l.kind, n_mul, n_add))
    return rows


@dataclass(frozen=True)
class EnergyRow:
    name: str
    n_mul: int
    n_add: int
    pj: float


@dataclass(frozen=True)
class EnergyReport:
    rows: tuple[EnergyRow, ...]
    n_mul: int
    n_add: int
    pj: float
    convention: str

    def format_table(self) -> str:
        lines = [f"{'layer':<12}{'#mul (G)':>14}{'#add (G)':>14}{'energy (G pJ)':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<12}{r.n_mul / 1e9:>14.4f}{r.n_add / 1e9:>14.4f}{r.pj / 1e9:>16.4f}")
        lines.append(f"{'total':<12}{self.n_mul / 1e9:>14.4f}{self.n_add / 1e9:>14.4f}{self.pj / 1e9:>16.4f}")
        lines.append(f"pricing: {self.convention} (mul {MUL_PJ} pJ, add {ADD_PJ} pJ)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["layer", "n_mul", "n_add", "pj"])
        for r in self.rows:
            wr.writerow([r.name, r.n_mul, r.n_add, repr(r.pj)])
        wr.writerow(["total", self.n_mul, self.n_add, repr(self.pj)])
        return buf.getvalue()


def _price(n_mul, n_add, convention):
    if convention == "mul-only":
        return MUL_PJ * n_mul
    return MUL_PJ * n_mul + ADD_PJ * n_add


def energy(counts, cnn_convention: str = "mul-plus-add") -> EnergyReport:
    """Price counts at 3.7 pJ per multiplication and 0.9 pJ per addition.

    ``mul-only`` prices multiplications alone, a common shorthand for
    all-convolution baselines where additions are ignored.
    """
    if cnn_convention not in CONVENTIONS:
        raise ConfigurationError(f"unknown convention {cnn_convention!r}")
    rows = tuple(EnergyRow(c.name, c.n_mul, c.n_add, _price(c.n_mul, c.n_add, cnn_convention))
                 for c in counts)
    n_mul = sum(r.n_mul for r in rows)
    n_add = sum(r.n_add for r in rows)
    return EnergyReport(rows, n_mul, n_add, _price(n_mul, n_add, cnn_convention), cnn_convention)
