"""Finite-sample-valid cost limits from weighted full conformal prediction.

For a decision ``k`` and context ``z`` the limit is the largest candidate cost
``y`` on a grid over 𝒴 whose residual |y - μ| does not exceed the (1 - α)
quantile of the weighted residual distribution, where μ is the weighted mean of
the training costs augmented with the candidate itself.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from robust_policy.config import SearchStrategy
from robust_policy.dataset import CostRange, Dataset
from robust_policy.errors import DatasetError, NotFittedError
from robust_policy.weights import NormalizedWeights, WeightModel, normalized_weights

logger = logging.getLogger(__name__)

# Slack when comparing accumulated probability mass against a quantile level.
MASS_TOLERANCE = 1e-12


class CostGrid(BaseModel):
    """Uniform grid over the cost range, both endpoints included."""

    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float
    points: int = Field(2001, ge=2)

    @classmethod
    def from_range(cls, cost_range: CostRange, points: int = 2001) -> "CostGrid":
        if not math.isfinite(cost_range.lo):
            raise DatasetError("a cost grid needs a finite lower bound")
        return cls(lo=cost_range.lo, hi=cost_range.hi, points=points)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.points - 1)

    def refined(self) -> "CostGrid":
        """Grid with halved spacing; every point of ``self`` stays on it."""
        return CostGrid(lo=self.lo, hi=self.hi, points=2 * self.points - 1)


@dataclass(frozen=True, eq=False)
class WeightedCDF:
    """Right-continuous step function over non-negative residual scores."""

    scores: np.ndarray
    masses: np.ndarray

    def __call__(self, s: float) -> float:
        return float(self.masses[self.scores <= s].sum())

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(s), float(m)) for s, m in zip(self.scores, self.masses)]


@dataclass(frozen=True)
class ConformalLimit:
    """y_α(k, z) with the diagnostics used to obtain it."""

    decision: int
    value: float
    test_mass: float
    quantile_at_value: float
    saturated: bool

    def to_dict(self) -> dict[str, object]:
        return {
            "decision": self.decision,
            "value": self.value,
            "saturated": self.saturated,
            "test_mass": self.test_mass,
            "quantile": self.quantile_at_value,
        }


def augmented_mean(p_vec: np.ndarray, costs: np.ndarray, p_test: float, y_cand: float) -> float:
    """Weighted mean of the training costs augmented with the candidate, μ0 + p_test·y."""
    return float(np.dot(p_vec, costs)) + p_test * y_cand


def score(y: float, mu: float) -> float:
    """Absolute residual non-conformity score."""
    return abs(y - mu)


def build_cdf(scores: np.ndarray, p_vec: np.ndarray, test_score: float, p_test: float) -> WeightedCDF:
    """Weighted empirical distribution of the training scores plus the test score.

    Zero-mass training entries are dropped and equal scores merged.
    """
    scores = np.asarray(scores, dtype=float)
    p_vec = np.asarray(p_vec, dtype=float)
    if scores.shape != p_vec.shape:
        raise DatasetError("scores and weights must have the same length")
    keep = p_vec > 0
    all_scores = np.append(scores[keep], test_score)
    all_masses = np.append(p_vec[keep], p_test)
    atoms, inverse = np.unique(all_scores, return_inverse=True)
    masses = np.bincount(inverse.ravel(), weights=all_masses, minlength=atoms.shape[0])
    return WeightedCDF(scores=atoms, masses=masses)


def cdf_quantile(cdf: WeightedCDF, level: float) -> float:
    """Smallest atom ``s`` with F(s) >= level; level 1 gives the largest atom."""
    if not 0.0 < level <= 1.0:
        raise ValueError(f"quantile level must lie in (0, 1], got {level}")
    cumulative = np.cumsum(cdf.masses)
    reached = np.flatnonzero(cumulative >= level - MASS_TOLERANCE)
    if reached.size == 0:
        return float(cdf.scores[-1])
    return float(cdf.scores[reached[0]])


def membership(
    costs: np.ndarray,
    p_vec: np.ndarray,
    p_test: float,
    y_cand: float,
    alpha: float,
    conservative: bool = False,
) -> tuple[bool, float]:
    """Whether ``y_cand`` qualifies for the limit set, and the quantile it was tested against.

    Every score, training and test, is a residual against the same augmented mean.
    In conservative mode the test mass sits at +inf instead of at its own score.
    """
    mu = augmented_mean(p_vec, costs, p_test, y_cand)
    test_score = score(y_cand, mu)
    train_scores = np.abs(costs - mu)
    if conservative:
        cdf = build_cdf(train_scores, p_vec, math.inf, p_test)
    else:
        cdf = build_cdf(train_scores, p_vec, test_score, p_test)
    quantile = cdf_quantile(cdf, 1.0 - alpha)
    return test_score <= quantile, quantile


def _grid_scan(member: "_Membership", points: int) -> Optional[int]:
    best: Optional[int] = None
    for j in range(points):
        if member(j)[0]:
            best = j
    return best


def _interval_halving(member: "_Membership", values: np.ndarray, start: float) -> Optional[int]:
    """Largest qualifying index, assuming qualification is contiguous above ``start``.

    Returns None when no grid point next to ``start`` qualifies.
    """
    last = values.shape[0] - 1
    if member(last)[0]:
        return last
    below = int(np.clip(np.searchsorted(values, start, side="right") - 1, 0, last))
    lo: Optional[int] = None
    for j in (below, min(below + 1, last)):
        if member(j)[0]:
            lo = j
            break
    if lo is None:
        return None
    hi = last
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if member(mid)[0]:
            lo = mid
        else:
            hi = mid
    return lo


class _Membership:
    """Memoized membership test over grid indices."""

    def __init__(
        self, costs: np.ndarray, p_vec: np.ndarray, p_test: float, values: np.ndarray,
        alpha: float, conservative: bool,
    ) -> None:
        self.costs = costs
        self.p_vec = p_vec
        self.p_test = p_test
        self.values = values
        self.alpha = alpha
        self.conservative = conservative
        self._cache: dict[int, tuple[bool, float]] = {}

    def __call__(self, j: int) -> tuple[bool, float]:
        if j not in self._cache:
            self._cache[j] = membership(
                self.costs, self.p_vec, self.p_test, float(self.values[j]),
                self.alpha, self.conservative,
            )
        return self._cache[j]


def conformal_limit_from_weights(
    costs: np.ndarray,
    p_vec: np.ndarray,
    p_test: float,
    alpha: float,
    grid: CostGrid,
    strategy: SearchStrategy = SearchStrategy.INTERVAL_HALVING,
    conservative: bool = False,
    decision: int = 0,
) -> ConformalLimit:
    """The limit for already-normalized weights.

    Saturates at ``grid.hi`` when the test point carries more than ``alpha`` of the
    mass or when no grid point qualifies. Interval halving falls back to a full scan when the test
    mass is at least 1/2, where the qualifying set need not be contiguous.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    costs = np.asarray(costs, dtype=float)
    p_vec = np.asarray(p_vec, dtype=float)
    values = grid.values

    if p_test >= 1.0 - MASS_TOLERANCE:
        return ConformalLimit(decision, grid.hi, float(p_test), 0.0, saturated=True)

    keep = p_vec > 0
    member = _Membership(costs[keep], p_vec[keep], p_test, values, alpha, conservative)

    # Training mass below 1 - alpha: the quantile never falls short of the test score.
    if p_test > alpha + MASS_TOLERANCE:
        return ConformalLimit(decision, grid.hi, float(p_test), member(grid.points - 1)[1], saturated=True)

    index: Optional[int]
    if strategy == SearchStrategy.INTERVAL_HALVING and p_test < 0.5:
        mu0 = float(np.dot(p_vec[keep], costs[keep]))
        index = _interval_halving(member, values, mu0 / (1.0 - p_test))
        if index is None:
            index = _grid_scan(member, grid.points)
    else:
        index = _grid_scan(member, grid.points)

    if index is None:
        logger.debug("No grid point qualifies for decision %d; saturating", decision)
        return ConformalLimit(decision, grid.hi, float(p_test), member(grid.points - 1)[1], saturated=True)

    value = float(values[index])
    return ConformalLimit(
        decision=decision,
        value=value,
        test_mass=float(p_test),
        quantile_at_value=member(index)[1],
        saturated=index == grid.points - 1,
    )


def conformal_limit(
    ds: Dataset,
    wm: WeightModel,
    k: int,
    z: np.ndarray,
    alpha: float,
    grid: CostGrid,
    strategy: SearchStrategy = SearchStrategy.INTERVAL_HALVING,
    conservative: bool = False,
    weights: Optional[NormalizedWeights] = None,
) -> ConformalLimit:
    """y_α(k, z): the largest grid cost whose residual is within the weighted (1 - α) quantile.

    ``weights`` may carry precomputed :func:`normalized_weights` for ``(k, z)``.
    """
    if wm.decision_count != ds.decision_count:
        raise NotFittedError(
            f"weight model covers {wm.decision_count} decisions, dataset has {ds.decision_count}"
        )
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != ds.d:
        raise DatasetError(f"context has dimension {z.shape[0]}, dataset has d={ds.d}")

    if weights is None:
        weights = normalized_weights(wm, k, ds, z)
    limit = conformal_limit_from_weights(
        ds.y, weights.p_vec, weights.p_test, alpha, grid, strategy, conservative, decision=k
    )
    if limit.saturated:
        logger.debug("Limit for decision %d saturated at %g (test mass %.3g)", k, grid.hi, weights.p_test)
    return limit
