"""Analytic floating-point operation accounting and trace post-processing.

The operation counts compare one reduced-dimension iteration against its
full-dimension counterpart: the primal saving comes from multiplying the
transposed reduced block instead of the full stacked block, the dual saving
from the largest group's reduced constraint evaluation replacing the full
one.  Counts are exact integers; ratios are kept as exact rationals and
rendered at two decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class FlopsReport:
    """Per-iteration operation savings of the reduced-dimension engine.

    ``primal_saved`` / ``dual_saved`` are exact counts; the ``*_ratio``
    fields are exact fractions of the full-dimension cost.
    """

    n: int
    d: int
    K: int
    v: int
    v_m: int
    r: int
    primal_saved: int
    primal_ratio: Fraction
    dual_saved: int
    dual_ratio: Fraction

    @property
    def primal_pct(self) -> float:
        return round(float(self.primal_ratio) * 100.0, 2)

    @property
    def dual_pct(self) -> float:
        return round(float(self.dual_ratio) * 100.0, 2)

    def summary(self) -> str:
        return (
            f"primal: {self.primal_saved:,} flops saved ({self.primal_pct:.2f}%)  "
            f"dual: {self.dual_saved:,} flops saved ({self.dual_pct:.2f}%)"
        )

    def csv_row(self) -> str:
        return (
            f"{self.n},{self.d},{self.K},{self.v},{self.v_m},{self.r},"
            f"{self.primal_saved},{self.primal_pct:.2f},"
            f"{self.dual_saved},{self.dual_pct:.2f}"
        )

    CSV_HEADER = "n,d,K,v,v_m,r,primal_saved,primal_pct,dual_saved,dual_pct"


def flops_report(n: int, d: int, K: int, v: int, v_m: int, r: int) -> FlopsReport:
    """Exact per-iteration savings for the given problem dimensions.

    Primal: ``2 d K^2`` saved out of ``(2nK - 1)K + 4K^2 - K`` per agent.
    Dual: ``(2vn - 2 v_m (n - d)) K^2 - K (n - d)`` saved out of
    ``2 v n K^2`` for the busiest group (size ``v_m``).
    """
    if not 0 <= d < n:
        raise ValueError("d must satisfy 0 <= d < n")
    if K < 1 or v < 1 or r < 1:
        raise ValueError("K, v and r must be positive")
    if not 1 <= v_m <= v:
        raise ValueError("largest group size must lie in [1, v]")
    h = n - d
    primal_saved = 2 * d * K * K
    primal_full = (2 * n * K - 1) * K + 4 * K * K - K
    primal_ratio = Fraction(primal_saved, primal_full)
    dual_saved = (2 * v * n - 2 * v_m * h) * K * K - K * h
    dual_full = 2 * v * n * K * K
    dual_ratio = Fraction(dual_saved, dual_full)
    return FlopsReport(
        n=n, d=d, K=K, v=v, v_m=v_m, r=r,
        primal_saved=primal_saved, primal_ratio=primal_ratio,
        dual_saved=dual_saved, dual_ratio=dual_ratio,
    )


def max_reduction_flops(n: int, K: int, v: int, v_m: int, r: int) -> FlopsReport:
    """Savings at the largest admissible dimension reduction for ``r`` groups."""
    import math

    d = n - math.ceil(n / r)
    return flops_report(n, d, K, v, v_m, r)


def flatness_metrics(total_load: np.ndarray) -> dict[str, float]:
    """Shape statistics of an aggregate demand curve over the service window."""
    load = np.asarray(total_load, dtype=float)
    peak = float(load.max())
    trough = float(load.min())
    return {
        "variance": float(load.var()),
        "peak": peak,
        "peak_to_trough": peak / trough if trough > 0 else float("inf"),
        "load_factor": float(load.mean()) / peak if peak > 0 else float("nan"),
    }
