"""Generative models of past decisions and the probability weights built from them.

The weight of a record hypothesized to receive decision ``k`` is

    w_k(x, z) = 1{x = k} p(z) / (p(z | x) p(x)),   p(z) = Σ_j p(z | j) p(j)

or, given a propensity model, ``1{x = k} / p(x = k | z)``. Everything is computed
in log space and normalized over the training records plus the test point.
"""

import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Protocol, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.special import log_expit, log_softmax, logsumexp, xlogy
from scipy.stats import multivariate_normal
from sklearn.cluster import kmeans_plusplus
from sklearn.linear_model import LogisticRegression

from robust_policy.config import WeightMode
from robust_policy.dataset import Dataset
from robust_policy.errors import DatasetError, ModelFitError, NotFittedError

logger = logging.getLogger(__name__)

# A log-weight this far below the largest one gets exactly zero mass.
LOG_UNDERFLOW = 700.0
# Allowed round-off decrease of the mean log-likelihood between EM iterations.
EM_MONOTONE_SLACK = 1e-9


class DensityKind(str, Enum):
    """Families available for p̂(z | x = k)."""

    GAUSSIAN = "gaussian"
    GMM = "gmm"
    BERNOULLI = "bernoulli"
    PRODUCT = "product"


class EmSettings(BaseModel):
    """EM protocol for Gaussian mixtures."""

    max_iter: int = Field(200, ge=1, description="Iteration cap")
    tol: float = Field(1e-6, gt=0.0, description="Stop when mean log-likelihood moves less")
    covariance_floor: float = Field(1e-6, gt=0.0, description="Added to covariance diagonals")
    seed: int = Field(0, ge=0, description="k-means++ initialization seed")


class WeightModelConfig(BaseModel):
    """How to fit the per-decision feature models and the weights."""

    kind: DensityKind = Field(DensityKind.GAUSSIAN, description="Feature model family")
    components: int = Field(4, ge=1, description="Mixture components for gmm kinds")
    em: EmSettings = Field(default_factory=EmSettings)
    binary_columns: tuple[int, ...] = Field(
        (), description="Feature columns modelled by Bernoulli factors (product kind)"
    )
    continuous_kind: DensityKind = Field(
        DensityKind.GAUSSIAN, description="Family of the continuous factor (product kind)"
    )
    conditional: bool = Field(
        True, description="Fit the continuous factor separately per binary pattern"
    )
    mode: WeightMode = Field(WeightMode.GENERATIVE, description="Weight construction")

    @model_validator(mode="after")
    def _check_kinds(self) -> "WeightModelConfig":
        if self.kind == DensityKind.PRODUCT and not self.binary_columns:
            raise ValueError("product kind needs at least one binary column")
        if self.continuous_kind not in (DensityKind.GAUSSIAN, DensityKind.GMM):
            raise ValueError("continuous factor must be gaussian or gmm")
        return self


def _as_matrix(z: np.ndarray, dim: int) -> np.ndarray:
    """Coerce a vector or matrix of feature vectors to shape (m, dim)."""
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DatasetError(f"feature dimension mismatch: model has d={dim}, got {arr.shape[-1]}")
    return arr


# ==================== Decision marginal ====================


@dataclass(frozen=True, eq=False)
class CategoricalModel:
    """p̂(x = k), the share of records that received each decision."""

    probs: np.ndarray

    @property
    def decision_count(self) -> int:
        return int(self.probs.shape[0])

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


def fit_decision_marginal(ds: Dataset) -> CategoricalModel:
    """Relative frequency of each decision, count(x_i = k) / n."""
    if ds.n == 0:
        raise ModelFitError("cannot fit the decision marginal of an empty dataset")
    return CategoricalModel(probs=ds.arm_counts() / ds.n)


# ==================== Feature models ====================


class DensityModel(Protocol):
    """A fitted density over feature vectors of fixed dimension."""

    kind: DensityKind

    @property
    def dim(self) -> int: ...

    def log_density(self, z: np.ndarray) -> np.ndarray: ...

    def to_dict(self) -> dict[str, Any]: ...


def _mvn_logpdf(z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    try:
        values = multivariate_normal(mean=mean, cov=cov).logpdf(z)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ModelFitError(f"singular covariance despite flooring: {e}")
    return np.atleast_1d(values).reshape(z.shape[0])


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    """Single multivariate Gaussian."""

    mean: np.ndarray
    cov: np.ndarray
    kind: DensityKind = DensityKind.GAUSSIAN

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def log_density(self, z: np.ndarray) -> np.ndarray:
        return _mvn_logpdf(_as_matrix(z, self.dim), self.mean, self.cov)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianMixtureDensity:
    """Gaussian mixture fitted by EM; keeps its per-iteration log-likelihood trace."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_likelihood_trace: tuple[float, ...] = ()
    converged: bool = True
    kind: DensityKind = DensityKind.GMM

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def components(self) -> int:
        return int(self.weights.shape[0])

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = _as_matrix(z, self.dim)
        return logsumexp(_weighted_component_logpdf(z, self.weights, self.means, self.covs), axis=1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


@dataclass(frozen=True, eq=False)
class BernoulliDensity:
    """Independent Bernoulli factors over binary coordinates."""

    probs: np.ndarray
    kind: DensityKind = DensityKind.BERNOULLI

    @property
    def dim(self) -> int:
        return int(self.probs.shape[0])

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = _as_matrix(z, self.dim)
        binary = np.all((z == 0.0) | (z == 1.0), axis=1)
        with np.errstate(divide="ignore"):
            values = np.sum(xlogy(z, self.probs) + xlogy(1.0 - z, 1.0 - self.probs), axis=1)
        return np.where(binary, values, -np.inf)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "probs": self.probs.tolist()}


@dataclass(frozen=True, eq=False)
class ProductDensity:
    """p̂(z_cont | z_bin) p̂(z_bin) over a declared coordinate split.

    With ``by_pattern`` populated the continuous factor is conditioned on the
    binary pattern; patterns without their own model use ``continuous``.
    """

    continuous_columns: tuple[int, ...]
    binary_columns: tuple[int, ...]
    binary: BernoulliDensity
    continuous: Optional[DensityModel]
    by_pattern: dict[tuple[int, ...], DensityModel] = field(default_factory=dict)
    kind: DensityKind = DensityKind.PRODUCT

    @property
    def dim(self) -> int:
        return len(self.continuous_columns) + len(self.binary_columns)

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = _as_matrix(z, self.dim)
        zb = z[:, list(self.binary_columns)]
        values = self.binary.log_density(zb)
        if self.continuous is None:
            return values

        zc = z[:, list(self.continuous_columns)]
        cont = np.empty(z.shape[0])
        patterns = [tuple(int(v) for v in row) for row in zb]
        for pattern in set(patterns):
            rows = np.array([p == pattern for p in patterns])
            model = self.by_pattern.get(pattern, self.continuous)
            cont[rows] = model.log_density(zc[rows])
        finite = np.isfinite(values)
        return np.where(finite, values + cont, values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "continuous_columns": list(self.continuous_columns),
            "binary_columns": list(self.binary_columns),
            "binary": self.binary.to_dict(),
            "continuous": self.continuous.to_dict() if self.continuous is not None else None,
            "by_pattern": [
                {"pattern": list(pattern), "model": model.to_dict()}
                for pattern, model in sorted(self.by_pattern.items())
            ],
        }


def log_density(model: DensityModel, z: np.ndarray) -> Union[float, np.ndarray]:
    """Natural-log density at a feature vector (float) or at each row of a matrix.

    Zero density is reported as ``-inf``.
    """
    values = model.log_density(z)
    if np.asarray(z).ndim == 1:
        return float(values[0])
    return values


# ==================== Fitting ====================


def fit_gaussian(z: np.ndarray, covariance_floor: float = 1e-6) -> GaussianDensity:
    """Maximum-likelihood Gaussian (divisor n) with a floored covariance."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] == 0:
        raise ModelFitError("cannot fit a Gaussian to zero records")
    mean = z.mean(axis=0)
    diff = z - mean
    cov = diff.T @ diff / z.shape[0] + covariance_floor * np.eye(z.shape[1])
    return GaussianDensity(mean=mean, cov=cov)


def fit_bernoulli(z: np.ndarray) -> BernoulliDensity:
    """Success frequency of every binary coordinate."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] == 0:
        raise ModelFitError("cannot fit a Bernoulli model to zero records")
    if not np.all((z == 0.0) | (z == 1.0)):
        raise ModelFitError("Bernoulli coordinates must contain only 0 and 1")
    return BernoulliDensity(probs=z.mean(axis=0))


def _weighted_component_logpdf(
    z: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray
) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    columns = [_mvn_logpdf(z, means[j], covs[j]) for j in range(weights.shape[0])]
    return np.column_stack(columns) + log_w


def _m_step(
    z: np.ndarray, resp: np.ndarray, floor: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d = z.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = resp.T @ z / nk[:, None]
    covs = np.empty((resp.shape[1], d, d))
    for j in range(resp.shape[1]):
        diff = z - means[j]
        covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + floor * np.eye(d)
    return weights, means, covs


def fit_gmm(z: np.ndarray, components: int, em: Optional[EmSettings] = None) -> GaussianMixtureDensity:
    """Gaussian mixture by EM from a k-means++ hard assignment.

    Iterates until the mean log-likelihood changes by less than ``em.tol`` or
    ``em.max_iter`` is reached.
    """
    em = em or EmSettings()
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    if n < components:
        raise ModelFitError(f"{components} mixture components need at least as many records, got {n}")

    centers, _ = kmeans_plusplus(z, n_clusters=components, random_state=em.seed)
    dist = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((n, components))
    resp[np.arange(n), dist.argmin(axis=1)] = 1.0
    weights, means, covs = _m_step(z, resp, em.covariance_floor)

    trace: list[float] = []
    converged = False
    for iteration in range(em.max_iter):
        log_comp = _weighted_component_logpdf(z, weights, means, covs)
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(log_norm.mean())
        if trace and ll < trace[-1] - EM_MONOTONE_SLACK:
            logger.warning(
                "EM log-likelihood decreased at iteration %d: %.12g -> %.12g",
                iteration, trace[-1], ll,
            )
        if trace and abs(ll - trace[-1]) < em.tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        resp = np.exp(log_comp - log_norm[:, None])
        weights, means, covs = _m_step(z, resp, em.covariance_floor)

    if not converged:
        log_comp = _weighted_component_logpdf(z, weights, means, covs)
        trace.append(float(logsumexp(log_comp, axis=1).mean()))
        logger.info("EM stopped after %d iterations without reaching tol=%g", em.max_iter, em.tol)
    else:
        logger.debug("EM converged after %d iterations (mean ll %.6f)", len(trace), trace[-1])

    return GaussianMixtureDensity(
        weights=weights, means=means, covs=covs, log_likelihood_trace=tuple(trace), converged=converged
    )


def _fit_continuous(z: np.ndarray, config: WeightModelConfig, kind: DensityKind) -> DensityModel:
    if kind == DensityKind.GMM:
        return fit_gmm(z, config.components, config.em)
    return fit_gaussian(z, config.em.covariance_floor)


def _fit_product(z: np.ndarray, config: WeightModelConfig) -> ProductDensity:
    d = z.shape[1]
    binary_columns = tuple(sorted(set(config.binary_columns)))
    if any(c < 0 or c >= d for c in binary_columns):
        raise ModelFitError(f"binary columns {binary_columns} outside feature dimension {d}")
    continuous_columns = tuple(c for c in range(d) if c not in binary_columns)

    zb = z[:, list(binary_columns)]
    binary = fit_bernoulli(zb)
    if not continuous_columns:
        return ProductDensity((), binary_columns, binary, None)

    zc = z[:, list(continuous_columns)]
    pooled = _fit_continuous(zc, config, config.continuous_kind)
    by_pattern: dict[tuple[int, ...], DensityModel] = {}
    if config.conditional:
        minimum = max(2, config.components if config.continuous_kind == DensityKind.GMM else 2)
        patterns = [tuple(int(v) for v in row) for row in zb]
        for pattern in sorted(set(patterns)):
            rows = np.array([p == pattern for p in patterns])
            if rows.sum() >= minimum:
                by_pattern[pattern] = _fit_continuous(zc[rows], config, config.continuous_kind)
    return ProductDensity(continuous_columns, binary_columns, binary, pooled, by_pattern)


def fit_feature_model(ds: Dataset, k: int, config: Optional[WeightModelConfig] = None) -> DensityModel:
    """Fit p̂(z | x = k) on the records of arm ``k``."""
    config = config or WeightModelConfig()
    z = ds.z[ds.arm_mask(k)]
    if z.shape[0] == 0:
        raise ModelFitError(f"decision {k} has no records; treat the arm as having no data")

    if config.kind == DensityKind.GAUSSIAN:
        return fit_gaussian(z, config.em.covariance_floor)
    if config.kind == DensityKind.GMM:
        return fit_gmm(z, config.components, config.em)
    if config.kind == DensityKind.BERNOULLI:
        return fit_bernoulli(z)
    return _fit_product(z, config)


# ==================== Propensity models ====================


class PropensityModel(Protocol):
    """p̂(x | z) as a log-probability matrix of shape (m, decision_count)."""

    def predict_log_proba(self, z: np.ndarray) -> np.ndarray: ...

    def to_dict(self) -> dict[str, Any]: ...


@dataclass(frozen=True, eq=False)
class LogisticPropensity:
    """Multinomial logistic regression of the decision on the features."""

    classes: tuple[int, ...]
    coef: np.ndarray
    intercept: np.ndarray
    decision_count: int

    def predict_log_proba(self, z: np.ndarray) -> np.ndarray:
        z = _as_matrix(z, self.coef.shape[1])
        scores = z @ self.coef.T + self.intercept
        if len(self.classes) == 2 and self.coef.shape[0] == 1:
            s = scores[:, 0]
            class_log_proba = np.column_stack([log_expit(-s), log_expit(s)])
        else:
            class_log_proba = log_softmax(scores, axis=1)
        out = np.full((z.shape[0], self.decision_count), -np.inf)
        out[:, list(self.classes)] = class_log_proba
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "logistic",
            "classes": list(self.classes),
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
            "decision_count": self.decision_count,
        }


@dataclass(frozen=True, eq=False)
class BayesPropensity:
    """p̂(k | z) ∝ p̂(z | k) p̂(k) from a fitted generative model."""

    marginal: CategoricalModel
    per_arm: tuple[Optional[DensityModel], ...]

    def predict_log_proba(self, z: np.ndarray) -> np.ndarray:
        log_joint = _log_joint(self.marginal, self.per_arm, z)
        with np.errstate(invalid="ignore"):
            return log_joint - logsumexp(log_joint, axis=1, keepdims=True)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "bayes"}


@dataclass(frozen=True, eq=False)
class FunctionPropensity:
    """A known past policy, ``fn(z) -> (m, decision_count)`` probabilities."""

    fn: Callable[[np.ndarray], np.ndarray]

    def predict_log_proba(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        with np.errstate(divide="ignore"):
            return np.log(self.fn(z))

    def to_dict(self) -> dict[str, Any]:
        raise NotFittedError("a function propensity cannot be serialized")


def fit_logistic_propensity(ds: Dataset, seed: int = 0) -> LogisticPropensity:
    """Fit p̂(x | z) by (multinomial) logistic regression."""
    present = np.unique(ds.x)
    if present.shape[0] < 2:
        raise ModelFitError("a propensity model needs records from at least two decisions")
    model = LogisticRegression(max_iter=1000, random_state=seed)
    model.fit(ds.z, ds.x)
    return LogisticPropensity(
        classes=tuple(int(c) for c in model.classes_),
        coef=np.asarray(model.coef_, dtype=float),
        intercept=np.asarray(model.intercept_, dtype=float),
        decision_count=ds.decision_count,
    )


# ==================== Weight model ====================


def _log_joint(
    marginal: CategoricalModel, per_arm: tuple[Optional[DensityModel], ...], z: np.ndarray
) -> np.ndarray:
    """log p̂(z | j) + log p̂(j) for every row and decision; arms without data give -inf."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    log_prior = marginal.log_probs()
    columns = []
    for j, model in enumerate(per_arm):
        if model is None or not np.isfinite(log_prior[j]):
            columns.append(np.full(z.shape[0], -np.inf))
        else:
            columns.append(model.log_density(z) + log_prior[j])
    return np.column_stack(columns)


@dataclass(frozen=True, eq=False)
class WeightModel:
    """Fitted p̂(x) and {p̂(z | x = k)}, optionally with a propensity model."""

    marginal: CategoricalModel
    per_arm: tuple[Optional[DensityModel], ...]
    mode: WeightMode = WeightMode.GENERATIVE
    propensity: Optional[PropensityModel] = None

    def __post_init__(self) -> None:
        if len(self.per_arm) != self.marginal.decision_count:
            raise ModelFitError(
                f"{len(self.per_arm)} arm models for {self.marginal.decision_count} decisions"
            )
        if self.mode == WeightMode.PROPENSITY and self.propensity is None:
            raise NotFittedError("propensity mode requires a propensity model")

    @property
    def decision_count(self) -> int:
        return self.marginal.decision_count

    def has_data(self, k: int) -> bool:
        return self.per_arm[k] is not None and self.marginal.probs[k] > 0

    def log_feature_density(self, z: np.ndarray) -> np.ndarray:
        """log p̂(z) = log Σ_j p̂(z | j) p̂(j)."""
        return logsumexp(_log_joint(self.marginal, self.per_arm, z), axis=1)

    def log_weights(self, z: np.ndarray, k: int) -> np.ndarray:
        """Unnormalized log w_k at rows ``z`` that are hypothesized to take decision ``k``.

        Rows with zero estimated probability of ``k`` get ``+inf``.
        """
        if self.mode == WeightMode.PROPENSITY:
            assert self.propensity is not None
            log_w = -self.propensity.predict_log_proba(z)[:, k]
        else:
            log_joint = _log_joint(self.marginal, self.per_arm, z)
            with np.errstate(invalid="ignore"):
                log_w = logsumexp(log_joint, axis=1) - log_joint[:, k]
        return np.where(np.isnan(log_w), np.inf, log_w)

    def with_mode(self, mode: WeightMode, propensity: Optional[PropensityModel] = None) -> "WeightModel":
        return WeightModel(self.marginal, self.per_arm, mode, propensity or self.propensity)

    def to_dict(self) -> dict[str, Any]:
        return {
            "marginal": self.marginal.probs.tolist(),
            "arms": [m.to_dict() if m is not None else None for m in self.per_arm],
            "mode": self.mode.value,
            "propensity": self.propensity.to_dict() if self.propensity is not None else None,
        }


def fit_weight_model(ds: Dataset, config: Optional[WeightModelConfig] = None) -> WeightModel:
    """Fit the decision marginal and one feature model per arm; empty arms get none."""
    config = config or WeightModelConfig()
    marginal = fit_decision_marginal(ds)
    per_arm: list[Optional[DensityModel]] = []
    for k in range(ds.decision_count):
        if not ds.arm_mask(k).any():
            logger.info("Decision %d has no records; its limits will saturate", k)
            per_arm.append(None)
            continue
        per_arm.append(fit_feature_model(ds, k, config))

    propensity: Optional[PropensityModel] = None
    if config.mode == WeightMode.PROPENSITY:
        propensity = fit_logistic_propensity(ds, seed=config.em.seed)
    return WeightModel(marginal, tuple(per_arm), config.mode, propensity)


# ==================== Normalized weights ====================


@dataclass(frozen=True, eq=False)
class NormalizedWeights:
    """Masses of the training records and of the test point; they sum to one."""

    p_vec: np.ndarray
    p_test: float
    degenerate: bool = False


def normalize_log_weights(log_w: np.ndarray, log_w_test: float) -> NormalizedWeights:
    """Normalize unnormalized log-weights over the training records plus the test point.

    Uses a max-shift before exponentiating; entries more than ``LOG_UNDERFLOW``
    below the maximum get exactly zero mass. An infinite test weight, or no
    finite weight at all, puts all mass on the test point.
    """
    log_w = np.asarray(log_w, dtype=float)
    n = log_w.shape[0]
    if np.isposinf(log_w_test):
        return NormalizedWeights(np.zeros(n), 1.0, degenerate=True)

    infinite = np.isposinf(log_w)
    if np.any(infinite):
        masses = infinite / np.count_nonzero(infinite)
        return NormalizedWeights(masses.astype(float), 0.0, degenerate=True)

    all_lw = np.append(log_w, log_w_test)
    finite = np.isfinite(all_lw)
    if not np.any(finite):
        return NormalizedWeights(np.zeros(n), 1.0, degenerate=True)
    shifted = all_lw - np.max(all_lw[finite])
    shifted[shifted < -LOG_UNDERFLOW] = -np.inf
    w = np.exp(shifted)
    masses = w / w.sum()
    return NormalizedWeights(masses[:n], float(masses[n]))


def training_log_weights(wm: WeightModel, ds: Dataset, k: int) -> np.ndarray:
    """Unnormalized log w_k of every training record (``-inf`` off arm ``k``)."""
    out = np.full(ds.n, -np.inf)
    mask = ds.arm_mask(k)
    if mask.any() and wm.has_data(k):
        out[mask] = wm.log_weights(ds.z[mask], k)
    return out


def normalized_weights(
    wm: WeightModel,
    k: int,
    ds: Dataset,
    z_test: np.ndarray,
    train_log_weights: Optional[np.ndarray] = None,
) -> NormalizedWeights:
    """Probability weights of the training records and of a test point taking decision ``k``.

    ``train_log_weights`` may carry a cached :func:`training_log_weights` result.
    """
    if not wm.has_data(k) or not ds.arm_mask(k).any():
        return NormalizedWeights(np.zeros(ds.n), 1.0, degenerate=True)

    lw_train = train_log_weights if train_log_weights is not None else training_log_weights(wm, ds, k)
    lw_test = float(wm.log_weights(np.atleast_2d(z_test), k)[0])
    result = normalize_log_weights(lw_train, lw_test)
    if result.degenerate:
        logger.debug("Weights for decision %d degenerate at z=%s", k, np.asarray(z_test).tolist())
    return result


# ==================== Serialization ====================


def _density_from_dict(data: dict[str, Any]) -> DensityModel:
    kind = DensityKind(data["kind"])
    if kind == DensityKind.GAUSSIAN:
        return GaussianDensity(np.asarray(data["mean"], dtype=float), np.asarray(data["cov"], dtype=float))
    if kind == DensityKind.GMM:
        return GaussianMixtureDensity(
            np.asarray(data["weights"], dtype=float),
            np.asarray(data["means"], dtype=float),
            np.asarray(data["covs"], dtype=float),
        )
    if kind == DensityKind.BERNOULLI:
        return BernoulliDensity(np.asarray(data["probs"], dtype=float))
    continuous = data.get("continuous")
    return ProductDensity(
        continuous_columns=tuple(data["continuous_columns"]),
        binary_columns=tuple(data["binary_columns"]),
        binary=BernoulliDensity(np.asarray(data["binary"]["probs"], dtype=float)),
        continuous=_density_from_dict(continuous) if continuous else None,
        by_pattern={
            tuple(entry["pattern"]): _density_from_dict(entry["model"])
            for entry in data.get("by_pattern", [])
        },
    )


def weight_model_from_dict(data: dict[str, Any]) -> WeightModel:
    """Rebuild a :class:`WeightModel` from its JSON form."""
    marginal = CategoricalModel(np.asarray(data["marginal"], dtype=float))
    per_arm = tuple(_density_from_dict(a) if a is not None else None for a in data["arms"])
    mode = WeightMode(data.get("mode", WeightMode.GENERATIVE.value))

    propensity: Optional[PropensityModel] = None
    saved_propensity = data.get("propensity")
    if saved_propensity is not None and saved_propensity.get("kind") == "logistic":
        propensity = LogisticPropensity(
            classes=tuple(saved_propensity["classes"]),
            coef=np.asarray(saved_propensity["coef"], dtype=float),
            intercept=np.asarray(saved_propensity["intercept"], dtype=float),
            decision_count=int(saved_propensity["decision_count"]),
        )
    elif saved_propensity is not None and saved_propensity.get("kind") == "bayes":
        propensity = BayesPropensity(marginal, per_arm)
    return WeightModel(marginal, per_arm, mode, propensity)


def save_weight_model(wm: WeightModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(wm.to_dict(), f, indent=2)


def load_weight_model(path: str | Path) -> WeightModel:
    with open(path, encoding="utf-8") as f:
        return weight_model_from_dict(json.load(f))
