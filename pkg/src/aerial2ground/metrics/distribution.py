"""Set-level metrics over classifier outputs: KID and Inception Score."""

import numpy as np
from scipy.special import rel_entr

from aerial2ground.errors import DataError, ShapeError


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """k(u, v) = (uᵀv / d + 1)³."""
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m, n = x.shape[0], y.shape[0]
    k_xx = polynomial_kernel(x, x)
    k_yy = polynomial_kernel(y, y)
    k_xy = polynomial_kernel(x, y)
    xx = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    yy = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    return float(xx + yy - 2.0 * k_xy.mean())


def kid(
    features_gen: np.ndarray,
    features_real: np.ndarray,
    *,
    subsets: int = 10,
    subset_size: int = 100,
    seed: int = 0,
) -> float:
    """Unbiased squared MMD with the cubic polynomial kernel, averaged over seeded subsets.

    May be slightly negative when both sets come from the same distribution.
    """
    x = np.asarray(features_gen, dtype=np.float64)
    y = np.asarray(features_real, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"feature sets must be N×d with equal d, got {x.shape} and {y.shape}")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise DataError("KID needs at least two features in each set")
    size = min(x.shape[0], y.shape[0], subset_size)
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(subsets):
        xi = rng.choice(x.shape[0], size, replace=False)
        yi = rng.choice(y.shape[0], size, replace=False)
        values.append(mmd2_unbiased(x[xi], y[yi]))
    return float(np.mean(values))


def inception_score(probabilities: np.ndarray, splits: int = 10) -> float:
    """exp(E_x KL(p(y|x) ‖ p(y))), averaged over splits of the set."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected N×classes probabilities, got {p.shape}")
    if p.shape[0] == 0:
        raise DataError("inception score of an empty set")
    # Each split must be able to hold every class once.
    n_splits = max(1, min(splits, p.shape[0] // p.shape[1]))
    scores = []
    for part in np.array_split(p, n_splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = max(float(rel_entr(part, marginal).sum(axis=1).mean()), 0.0)
        scores.append(np.exp(kl))
    return float(np.mean(scores))
