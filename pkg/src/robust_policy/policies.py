"""Robust policies that pick the decision with the smallest conformal cost limit,
and the mean-optimal linear baseline."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from robust_policy.config import SearchStrategy
from robust_policy.conformal import ConformalLimit, CostGrid, conformal_limit
from robust_policy.dataset import Dataset
from robust_policy.errors import DatasetError, ModelFitError
from robust_policy.weights import (
    WeightModel,
    normalize_log_weights,
    normalized_weights,
    training_log_weights,
)

logger = logging.getLogger(__name__)

# (contexts, rng) -> one decision per context row
DecisionRule = Callable[[np.ndarray, np.random.Generator], np.ndarray]

RIDGE_LAMBDA = 1e-8


@dataclass(frozen=True)
class PolicyDecision:
    """The chosen decision, its certificate and every per-decision limit."""

    decision: int
    certificate: float
    per_arm_limits: tuple[ConformalLimit, ...]
    tied: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "decision": self.decision,
            "certificate": self.certificate,
            "tied": self.tied,
            "limits": [limit.to_dict() for limit in self.per_arm_limits],
        }


class RobustPolicy:
    """π_α(z) = argmin_k y_α(k, z) over a fixed dataset and weight model.

    Ties are broken uniformly at random with a stream derived from ``seed`` and
    the context index, so repeated calls give identical decisions.
    """

    def __init__(
        self,
        dataset: Dataset,
        weights: WeightModel,
        alpha: float,
        grid: CostGrid,
        seed: int = 0,
        strategy: SearchStrategy = SearchStrategy.INTERVAL_HALVING,
        conservative: bool = False,
    ) -> None:
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        if weights.decision_count != dataset.decision_count:
            raise ModelFitError(
                f"weight model covers {weights.decision_count} decisions, "
                f"dataset has {dataset.decision_count}"
            )
        self.dataset = dataset
        self.weights = weights
        self.alpha = alpha
        self.grid = grid
        self.seed = seed
        self.strategy = strategy
        self.conservative = conservative
        self._train_log_weights = [
            training_log_weights(weights, dataset, k) for k in range(dataset.decision_count)
        ]

    @property
    def decision_count(self) -> int:
        return self.dataset.decision_count

    def limits(self, z: np.ndarray, test_log_weights: Optional[np.ndarray] = None) -> tuple[ConformalLimit, ...]:
        """y_α(k, z) for every decision ``k``."""
        out = []
        for k in range(self.decision_count):
            if test_log_weights is None:
                w = normalized_weights(
                    self.weights, k, self.dataset, z, train_log_weights=self._train_log_weights[k]
                )
            elif not self.weights.has_data(k) or not self.dataset.arm_mask(k).any():
                w = normalized_weights(self.weights, k, self.dataset, z)
            else:
                w = normalize_log_weights(self._train_log_weights[k], float(test_log_weights[k]))
            out.append(
                conformal_limit(
                    self.dataset, self.weights, k, z, self.alpha, self.grid,
                    self.strategy, self.conservative, weights=w,
                )
            )
        return tuple(out)

    def _choose(self, limits: tuple[ConformalLimit, ...], index: int) -> PolicyDecision:
        values = np.array([limit.value for limit in limits])
        best = values.min()
        # limits within one grid step of the best are tied
        minimizers = np.flatnonzero(values <= best + self.grid.step * (1.0 + 1e-9))
        rng = np.random.default_rng([self.seed, index])
        decision = int(minimizers[rng.integers(minimizers.shape[0])]) if minimizers.shape[0] > 1 else int(minimizers[0])
        return PolicyDecision(
            decision=decision,
            certificate=limits[decision].value,
            per_arm_limits=limits,
            tied=minimizers.shape[0] > 1,
        )

    def decide(self, z: np.ndarray, index: int = 0) -> PolicyDecision:
        """Decision and certificate for one context; ``index`` keys the tie-break stream."""
        z = np.asarray(z, dtype=float).ravel()
        if z.shape[0] != self.dataset.d:
            raise DatasetError(f"context has dimension {z.shape[0]}, dataset has d={self.dataset.d}")
        return self._choose(self.limits(z), index)

    def decide_batch(self, contexts: np.ndarray, start_index: int = 0) -> list[PolicyDecision]:
        """Decisions for every row of ``contexts``; test weights are evaluated in one pass."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        if contexts.shape[1] != self.dataset.d:
            raise DatasetError(
                f"contexts have dimension {contexts.shape[1]}, dataset has d={self.dataset.d}"
            )
        test_lw = np.column_stack([
            self.weights.log_weights(contexts, k) if self.weights.has_data(k)
            else np.full(contexts.shape[0], np.inf)
            for k in range(self.decision_count)
        ])
        return [
            self._choose(self.limits(z, test_lw[i]), start_index + i)
            for i, z in enumerate(contexts)
        ]

    def __call__(self, contexts: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return np.array([d.decision for d in self.decide_batch(contexts)], dtype=np.int64)


def robust_decide(policy: RobustPolicy, z: np.ndarray, index: int = 0) -> PolicyDecision:
    """Evaluate every decision's limit at ``z`` and pick the smallest."""
    return policy.decide(z, index)


# ==================== Mean-optimal baseline ====================


@dataclass(frozen=True, eq=False)
class LinearPolicy:
    """Per-decision linear models of the mean cost, γ_k = (intercept, slopes)."""

    coefficients: np.ndarray
    available: np.ndarray

    @property
    def decision_count(self) -> int:
        return int(self.coefficients.shape[0])

    def predict(self, z: np.ndarray) -> np.ndarray:
        """Predicted mean cost of every decision, shape (m, decision_count)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.coefficients.shape[1] - 1:
            raise DatasetError(
                f"context has dimension {z.shape[1]}, model expects {self.coefficients.shape[1] - 1}"
            )
        design = np.column_stack([np.ones(z.shape[0]), z])
        predictions = design @ self.coefficients.T
        return np.where(self.available, predictions, np.inf)

    def __call__(self, contexts: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return np.argmin(self.predict(contexts), axis=1).astype(np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {"coefficients": self.coefficients.tolist(), "available": self.available.tolist()}


def _least_squares(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    if design.shape[0] >= design.shape[1] and np.linalg.matrix_rank(design) == design.shape[1]:
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return coef
    gram = design.T @ design + RIDGE_LAMBDA * np.eye(design.shape[1])
    return np.linalg.solve(gram, design.T @ y)


def fit_linear_baseline(ds: Dataset) -> LinearPolicy:
    """Ordinary least squares of cost on (1, z) separately for every decision.

    Singular or short designs fall back to ridge with λ = 1e-8; empty arms are
    marked unavailable and never chosen.
    """
    counts = ds.arm_counts()
    if not np.any(counts):
        raise ModelFitError("every decision is empty; nothing to regress")
    coefficients = np.zeros((ds.decision_count, ds.d + 1))
    for k in range(ds.decision_count):
        mask = ds.arm_mask(k)
        if not mask.any():
            logger.info("Decision %d has no records; the baseline never selects it", k)
            continue
        design = np.column_stack([np.ones(int(mask.sum())), ds.z[mask]])
        coefficients[k] = _least_squares(design, ds.y[mask])
    return LinearPolicy(coefficients=coefficients, available=counts > 0)


def linear_decide(lp: LinearPolicy, z: np.ndarray) -> int:
    """argmin_k of the predicted mean cost; ties go to the smallest id."""
    return int(np.argmin(lp.predict(z)[0]))
