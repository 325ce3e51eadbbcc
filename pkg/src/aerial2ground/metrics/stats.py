"""Wilcoxon signed-rank test for paired per-sample metric differences."""

from itertools import product
from typing import Literal

import numpy as np
from pydantic import BaseModel
from scipy.stats import norm, rankdata

from aerial2ground.errors import DataError

EXACT_MAX_N = 12
_TOL = 1e-9


class WilcoxonResult(BaseModel):
    statistic: float  # W⁺, the sum of ranks of positive differences
    p_value: float
    n: int  # nonzero differences
    method: Literal["exact", "normal"]


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    signs = np.array(list(product((0.0, 1.0), repeat=ranks.size)))
    dist = signs @ ranks
    lower = np.mean(dist <= w_plus + _TOL)
    upper = np.mean(dist >= w_plus - _TOL)
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_p(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.size
    _, counts = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(z)))


def wilcoxon_signed_rank(deltas: np.ndarray | list[float], *, min_nonzero: int = 5) -> WilcoxonResult:
    """Two-sided test; zeros dropped, ties get average ranks.

    Exact sign enumeration for n ≤ 12, normal approximation with tie and
    continuity corrections above.
    """
    d = np.asarray(deltas, dtype=np.float64)
    d = d[d != 0.0]
    if d.size == 0:
        raise DataError("all paired differences are zero")
    if d.size < min_nonzero:
        raise DataError(f"need ≥ {min_nonzero} nonzero differences, got {d.size}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if d.size <= EXACT_MAX_N:
        return WilcoxonResult(statistic=w_plus, p_value=_exact_p(ranks, w_plus), n=d.size, method="exact")
    return WilcoxonResult(statistic=w_plus, p_value=_normal_p(ranks, w_plus), n=d.size, method="normal")
