"""Simulation scenarios: the synthetic blood-pressure study and an IHDP-style outcome model.

Every normal law below is parameterized by its standard deviation.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy import integrate
from scipy.special import expit
from scipy.stats import norm

from robust_policy.dataset import CostRange, Dataset
from robust_policy.errors import DatasetError
from robust_policy.reducer import Reducer, apply_reducer, fit_reducer
from robust_policy.weights import DensityKind, FunctionPropensity, PropensityModel, WeightModelConfig

logger = logging.getLogger(__name__)

ContextSampler = Callable[[int, np.random.Generator], np.ndarray]
OutcomeSampler = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
PastPolicy = Callable[[np.ndarray, np.random.Generator], np.ndarray]


# ==================== Synthetic blood-pressure scenario ====================

# z = (age, female); females are younger on average.
FEMALE_AGE = (30.0, 5.0)
MALE_AGE = (45.0, 5.0)
FEMALE_SHARE = 0.5
FEMALE_TREATMENT_CAP = 0.95
MALE_TREATMENT_CAP = 0.20


class SyntheticConfig(BaseModel):
    """Parameters of the synthetic scenario."""

    n: int = Field(200, ge=1, description="Training records")
    seed: int = Field(0, ge=0, description="Random seed for sample_synthetic")
    sigma1: float = Field(0.2, gt=0.0, description="Cost standard deviation when treated")
    sigma0: float = Field(20.0, gt=0.0, description="Cost standard deviation when untreated")
    clip_costs: bool = Field(True, description="Clip costs to cost_range and count clipped draws")
    older_more_treated: bool = Field(
        False, description="Flip the sigmoid arguments so treatment probability rises with age"
    )
    cost_range: CostRange = Field(default_factory=lambda: CostRange(lo=-30.0, hi=30.0))


def sample_synthetic_contexts(m: int, rng: np.random.Generator) -> np.ndarray:
    """m draws of (age, female) from the population distribution."""
    female = rng.random(m) < FEMALE_SHARE
    age = np.where(
        female,
        rng.normal(FEMALE_AGE[0], FEMALE_AGE[1], m),
        rng.normal(MALE_AGE[0], MALE_AGE[1], m),
    )
    return np.column_stack([age, female.astype(float)])


def treatment_probability(z: np.ndarray, older_more_treated: bool = False) -> np.ndarray:
    """p(x = 1 | z) of the past policy, a sex-specific capped sigmoid in age.

    By default the probability falls with age: 0.95 f(-(age - 20)/6) for women and
    0.20 f(-(age - 45)/2) for men, with f the logistic function.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    age, female = z[:, 0], z[:, 1]
    sign = 1.0 if older_more_treated else -1.0
    p_female = FEMALE_TREATMENT_CAP * expit(sign * (age - 20.0) / 6.0)
    p_male = MALE_TREATMENT_CAP * expit(sign * (age - 45.0) / 2.0)
    return female * p_female + (1.0 - female) * p_male


def synthetic_propensity(older_more_treated: bool = False) -> FunctionPropensity:
    """The true past policy as a propensity model over decisions {0, 1}."""

    def probabilities(z: np.ndarray) -> np.ndarray:
        p1 = treatment_probability(z, older_more_treated)
        return np.column_stack([1.0 - p1, p1])

    return FunctionPropensity(probabilities)


def implied_treated_share(older_more_treated: bool = False) -> float:
    """Population share of treated records, E[p(x = 1 | z)]."""

    def integrand(age: float, female: float, mu: float, sd: float) -> float:
        p = treatment_probability(np.array([age, female]), older_more_treated)[0]
        return float(p * norm.pdf(age, mu, sd))

    share = 0.0
    for female, (mu, sd), weight in ((1.0, FEMALE_AGE, FEMALE_SHARE), (0.0, MALE_AGE, 1.0 - FEMALE_SHARE)):
        value, _ = integrate.quad(integrand, mu - 12 * sd, mu + 12 * sd, args=(female, mu, sd))
        share += weight * value
    return share


def synthetic_mean(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """E[y | x, z]: age - 45 when treated, age - 46 otherwise."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return z[:, 0] - 46.0 + np.asarray(x, dtype=float)


def synthetic_outcome(
    x: Any, z: np.ndarray, rng: np.random.Generator, cfg: Optional[SyntheticConfig] = None
) -> Any:
    """Draw y ~ p(y | x, z); a scalar decision gives a float, an array gives an array."""
    cfg = cfg or SyntheticConfig()
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=np.int64))
    zs = np.atleast_2d(np.asarray(z, dtype=float))
    sd = np.where(xs == 1, cfg.sigma1, cfg.sigma0)
    y = synthetic_mean(xs, zs) + sd * rng.standard_normal(xs.shape[0])
    if cfg.clip_costs:
        y = np.clip(y, cfg.cost_range.lo, cfg.cost_range.hi)
    return float(y[0]) if scalar else y


def _draw_synthetic(cfg: SyntheticConfig, n: int, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """The training set and the same records before any clipping."""
    z = sample_synthetic_contexts(n, rng)
    x = (rng.random(n) < treatment_probability(z, cfg.older_more_treated)).astype(np.int64)
    sd = np.where(x == 1, cfg.sigma1, cfg.sigma0)
    raw_y = synthetic_mean(x, z) + sd * rng.standard_normal(n)
    y, clipped = raw_y, 0
    if cfg.clip_costs:
        clipped = int(np.count_nonzero(~cfg.cost_range.contains(raw_y)))
        y = np.clip(raw_y, cfg.cost_range.lo, cfg.cost_range.hi)
        if clipped:
            logger.info("Clipped %d of %d synthetic costs to [%g, %g]", clipped, n, cfg.cost_range.lo, cfg.cost_range.hi)
    labels = ("untreated", "treated")
    train = Dataset(x=x, y=y, z=z, decision_count=2, labels=labels, diagnostics={"clipped_costs": clipped})
    unclipped = Dataset(x=x, y=raw_y, z=z, decision_count=2, labels=labels)
    return train, unclipped


def sample_synthetic(cfg: SyntheticConfig) -> Dataset:
    """n i.i.d. records (x, y, (age, female)); deterministic given ``cfg.seed``."""
    return _draw_synthetic(cfg, cfg.n, np.random.default_rng(cfg.seed))[0]


# ==================== IHDP-style scenario ====================


class IhdpStyleConfig(BaseModel):
    """Parameters of the IHDP-style outcome model over surrogate covariates."""

    n_train: int = Field(600, ge=1, description="Training records")
    n_test: int = Field(147, ge=1, description="Held-out covariate rows for evaluation")
    raw_dim: int = Field(25, ge=1, description="Raw covariate dimension")
    d_out: int = Field(4, ge=1, description="Policy feature dimension after reduction")
    sigma0: float = Field(5.0, gt=0.0, description="Cost standard deviation when untreated")
    sigma1: float = Field(1.0, gt=0.0, description="Cost standard deviation when treated")
    beta_values: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    beta_probs: tuple[float, ...] = (0.6, 0.1, 0.1, 0.1, 0.1)
    treated_fraction: float = Field(0.186, gt=0.0, lt=1.0, description="Randomized past policy p(x = 1)")
    treated_effect: float = Field(2.0, description="Mean cost drop of treatment among the treated")
    seed: int = Field(0, ge=0)
    covariates_path: Optional[Path] = Field(None, description="CSV of real covariates to use instead")

    @model_validator(mode="after")
    def _check_beta_law(self) -> "IhdpStyleConfig":
        if len(self.beta_values) != len(self.beta_probs):
            raise ValueError("beta_values and beta_probs must have the same length")
        if abs(sum(self.beta_probs) - 1.0) > 1e-9 or min(self.beta_probs) < 0:
            raise ValueError("beta_probs must be a probability vector")
        return self


@dataclass(frozen=True, eq=False)
class IhdpTruth:
    """Coefficients of the outcome model; means are over raw covariates."""

    beta: np.ndarray
    omega: float
    sigma0: float
    sigma1: float

    def mean(self, x: np.ndarray, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        untreated = -np.exp((raw + 0.5) @ self.beta)
        treated = -(raw @ self.beta) - self.omega
        return np.where(np.asarray(x) == 1, treated, untreated)

    def sample(self, x: np.ndarray, raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        sd = np.where(x == 1, self.sigma1, self.sigma0)
        return self.mean(x, raw) + sd * rng.standard_normal(x.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "beta": self.beta.tolist(),
            "omega": self.omega,
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "untreated_mean": "-exp((z + 0.5) . beta)",
            "treated_mean": "-(z . beta) - omega",
        }


@dataclass(frozen=True, eq=False)
class IhdpStyleSample:
    """Training records over raw covariates, held-out contexts and the generating truth."""

    train: Dataset
    test_contexts: np.ndarray
    truth: IhdpTruth
    cost_range: CostRange


def standardize(raw: np.ndarray) -> np.ndarray:
    """Zero mean and unit standard deviation per column; constant columns are only centered."""
    raw = np.asarray(raw, dtype=float)
    sd = raw.std(axis=0)
    return (raw - raw.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def load_covariates(path: str | Path) -> np.ndarray:
    """Numeric covariate matrix from a headed CSV, standardized per column."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DatasetError(f"{path}: cannot read covariates ({e})")
    values = frame.to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DatasetError(f"{path}: covariates must be numeric and complete")
    return standardize(values)


def _treated_offset(beta: np.ndarray, raw_treated: np.ndarray, effect: float) -> float:
    """ω making the mean treated-minus-untreated cost over the treated equal to -effect."""
    return float(np.mean(np.exp((raw_treated + 0.5) @ beta) - raw_treated @ beta) + effect)


def _draw_ihdp(
    cfg: IhdpStyleConfig, rng: np.random.Generator, covariates: Optional[np.ndarray] = None
) -> IhdpStyleSample:
    total = cfg.n_train + cfg.n_test
    if covariates is None:
        pool = standardize(rng.standard_normal((total, cfg.raw_dim)))
    else:
        if covariates.shape[0] < total:
            raise DatasetError(f"need {total} covariate rows, file has {covariates.shape[0]}")
        pool = covariates[rng.permutation(covariates.shape[0])[:total]]
    raw_train, raw_test = pool[: cfg.n_train], pool[cfg.n_train :]

    beta = rng.choice(np.array(cfg.beta_values), size=pool.shape[1], p=np.array(cfg.beta_probs))
    x = (rng.random(cfg.n_train) < cfg.treated_fraction).astype(np.int64)
    treated = raw_train[x == 1]
    if treated.shape[0] == 0:
        logger.warning("No treated records drawn; calibrating the treated offset on all records")
        treated = raw_train
    truth = IhdpTruth(
        beta=beta,
        omega=_treated_offset(beta, treated, cfg.treated_effect),
        sigma0=cfg.sigma0,
        sigma1=cfg.sigma1,
    )
    y = truth.sample(x, raw_train, rng)
    spread = 3.0 * max(cfg.sigma0, cfg.sigma1)
    cost_range = CostRange(lo=float(y.min()) - spread, hi=float(y.max()) + spread)
    train = Dataset(x=x, y=y, z=raw_train, decision_count=2, labels=("untreated", "treated"))
    return IhdpStyleSample(train=train, test_contexts=raw_test, truth=truth, cost_range=cost_range)


def generate_ihdp_style(cfg: IhdpStyleConfig) -> IhdpStyleSample:
    """Training data over standardized raw covariates plus held-out contexts; deterministic given the seed."""
    covariates = load_covariates(cfg.covariates_path) if cfg.covariates_path else None
    return _draw_ihdp(cfg, np.random.default_rng(cfg.seed), covariates)


# ==================== Scenario instances ====================


@dataclass(frozen=True, eq=False)
class ScenarioInstance:
    """One replicate: training data plus the samplers of its generating process.

    Contexts are raw covariates; ``encode`` maps them to the policy features
    that ``train`` and the weight model are expressed in.
    ``propensity`` is the true past policy over encoded features, when known.
    ``baseline_train`` holds unclipped costs for the mean-optimal baseline;
    without it the baseline fits ``raw_train``.
    """

    train: Dataset
    raw_train: Dataset
    cost_range: CostRange
    weight_config: WeightModelConfig
    sample_contexts: ContextSampler
    sample_outcomes: OutcomeSampler
    past_policy: PastPolicy
    encode: Callable[[np.ndarray], np.ndarray] = field(default=lambda raw: np.asarray(raw, dtype=float))
    truth: dict[str, Any] = field(default_factory=dict)
    propensity: Optional[PropensityModel] = None
    baseline_train: Optional[Dataset] = None

    def baseline_records(self) -> Dataset:
        return self.baseline_train if self.baseline_train is not None else self.raw_train


class Scenario(Protocol):
    name: str

    def instance(self, rng: np.random.Generator) -> ScenarioInstance: ...


class SyntheticScenario:
    """Synthetic study: age and sex, uneven overlap, low-variance treatment."""

    name = "synthetic"

    def __init__(
        self, config: Optional[SyntheticConfig] = None, weights: Optional[WeightModelConfig] = None
    ) -> None:
        self.config = config or SyntheticConfig()
        self.weights = weights

    def weight_config(self) -> WeightModelConfig:
        """Gaussian age model conditioned on sex, times a Bernoulli sex model, unless overridden."""
        if self.weights is not None:
            return self.weights
        return WeightModelConfig(
            kind=DensityKind.PRODUCT,
            binary_columns=(1,),
            continuous_kind=DensityKind.GAUSSIAN,
            conditional=True,
        )

    def past_policy(self, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p1 = treatment_probability(contexts, self.config.older_more_treated)
        return (rng.random(p1.shape[0]) < p1).astype(np.int64)

    def instance(self, rng: np.random.Generator) -> ScenarioInstance:
        cfg = self.config
        train, unclipped = _draw_synthetic(cfg, cfg.n, rng)
        return ScenarioInstance(
            train=train,
            raw_train=train,
            cost_range=cfg.cost_range,
            weight_config=self.weight_config(),
            sample_contexts=sample_synthetic_contexts,
            sample_outcomes=lambda x, z, r: np.atleast_1d(synthetic_outcome(x, z, r, cfg)),
            past_policy=self.past_policy,
            propensity=synthetic_propensity(cfg.older_more_treated),
            baseline_train=unclipped,
            truth={"sigma0": cfg.sigma0, "sigma1": cfg.sigma1, "treated_mean": "age - 45", "untreated_mean": "age - 46"},
        )


class IhdpStyleScenario:
    """IHDP-style study: randomized past policy, PCA features, GMM weights."""

    name = "ihdp"

    def __init__(self, config: Optional[IhdpStyleConfig] = None, components: int = 4) -> None:
        self.config = config or IhdpStyleConfig()
        self.components = components
        self._covariates = (
            load_covariates(self.config.covariates_path) if self.config.covariates_path else None
        )

    def weight_config(self) -> WeightModelConfig:
        return WeightModelConfig(kind=DensityKind.GMM, components=self.components)

    def past_policy(self, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m = np.atleast_2d(contexts).shape[0]
        return (rng.random(m) < self.config.treated_fraction).astype(np.int64)

    def propensity(self) -> FunctionPropensity:
        """The randomized past policy as a propensity model; it ignores the features."""
        q = self.config.treated_fraction

        def probabilities(z: np.ndarray) -> np.ndarray:
            return np.tile([1.0 - q, q], (z.shape[0], 1))

        return FunctionPropensity(probabilities)

    def instance(self, rng: np.random.Generator) -> ScenarioInstance:
        sample = _draw_ihdp(self.config, rng, self._covariates)
        reducer: Reducer = fit_reducer(sample.train.z, self.config.d_out)
        test = sample.test_contexts
        truth = sample.truth

        def sample_contexts(m: int, r: np.random.Generator) -> np.ndarray:
            return test[r.integers(test.shape[0], size=m)]

        return ScenarioInstance(
            train=sample.train.with_features(apply_reducer(reducer, sample.train.z)),
            raw_train=sample.train,
            cost_range=sample.cost_range,
            weight_config=self.weight_config(),
            sample_contexts=sample_contexts,
            sample_outcomes=truth.sample,
            past_policy=self.past_policy,
            encode=lambda raw: apply_reducer(reducer, raw),
            propensity=self.propensity(),
            truth=truth.to_dict(),
        )


SCENARIOS = ("synthetic", "ihdp")


def make_scenario(name: str, **options: Any) -> Scenario:
    """Build a scenario by name; ``options`` go to its config model."""
    if name == SyntheticScenario.name:
        return SyntheticScenario(SyntheticConfig(**options))
    if name == IhdpStyleScenario.name:
        return IhdpStyleScenario(IhdpStyleConfig(**options))
    raise ValueError(f"unknown scenario '{name}', expected one of {', '.join(SCENARIOS)}")
