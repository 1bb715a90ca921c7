"""Policy evaluation and Monte-Carlo coverage experiments."""

import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn

from robust_policy.config import SearchStrategy, WeightMode, get_config_dir
from robust_policy.conformal import CostGrid
from robust_policy.errors import DatasetError
from robust_policy.policies import DecisionRule, RobustPolicy
from robust_policy.scenarios import ContextSampler, OutcomeSampler, Scenario
from robust_policy.weights import fit_weight_model

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5)
MIN_COVERAGE_RUNS = 30


@dataclass(frozen=True, eq=False)
class CcdfCurve:
    """Pr{y > threshold} at sorted thresholds."""

    thresholds: np.ndarray
    probabilities: np.ndarray

    def rows(self) -> list[tuple[float, float]]:
        return [(float(t), float(p)) for t, p in zip(self.thresholds, self.probabilities)]


def _as_costs(costs: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(costs, dtype=float).ravel()
    if arr.size == 0:
        raise DatasetError("cost list is empty")
    return arr


def empirical_ccdf(costs: Sequence[float] | np.ndarray, thresholds: Sequence[float] | np.ndarray) -> CcdfCurve:
    """Exact empirical exceedance fraction at every threshold."""
    arr = np.sort(_as_costs(costs))
    t = np.sort(np.asarray(thresholds, dtype=float).ravel())
    at_or_below = np.searchsorted(arr, t, side="right")
    return CcdfCurve(thresholds=t, probabilities=1.0 - at_or_below / arr.size)


def cost_quantile(costs: Sequence[float] | np.ndarray, alpha: float) -> float:
    """Smallest order statistic whose empirical CDF reaches 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    arr = np.sort(_as_costs(costs))
    rank = math.ceil((1.0 - alpha) * arr.size - 1e-9)
    return float(arr[max(rank, 1) - 1])


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    """Costs of m draws from the process a policy induces, with tail summaries."""

    costs: np.ndarray
    decisions: np.ndarray
    curve: CcdfCurve
    alpha: float
    quantile: float
    mean: float

    def decision_shares(self, decision_count: int) -> np.ndarray:
        return np.bincount(self.decisions, minlength=decision_count) / self.decisions.size


def evaluate_policy(
    rule: DecisionRule,
    outcome_sampler: OutcomeSampler,
    context_sampler: ContextSampler,
    m: int,
    seed: int = 0,
    alpha: float = 0.2,
    features: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    thresholds: Optional[np.ndarray] = None,
) -> PolicyEvaluation:
    """Draw m contexts, apply ``rule`` and draw the resulting costs; deterministic given ``seed``.

    ``features`` maps sampled contexts to the inputs ``rule`` expects.
    """
    if m < 1:
        raise ValueError("m must be positive")
    rng = np.random.default_rng(seed)
    contexts = context_sampler(m, rng)
    inputs = features(contexts) if features is not None else contexts
    decisions = np.asarray(rule(inputs, rng), dtype=np.int64)
    costs = np.asarray(outcome_sampler(decisions, contexts, rng), dtype=float)
    if thresholds is None:
        thresholds = np.linspace(costs.min(), costs.max(), 201)
    return PolicyEvaluation(
        costs=costs,
        decisions=decisions,
        curve=empirical_ccdf(costs, thresholds),
        alpha=alpha,
        quantile=cost_quantile(costs, alpha),
        mean=float(costs.mean()),
    )


# ==================== Coverage ====================


@dataclass(frozen=True)
class CoverageRow:
    """Monte-Carlo estimate of Pr{y > certificate} at one alpha."""

    alpha: float
    exceedance: float
    runs: int
    standard_error: float
    mean_certificate: float
    saturated_share: float

    @property
    def bound(self) -> float:
        """alpha plus three binomial standard errors at the nominal level."""
        return self.alpha + 3.0 * math.sqrt(self.alpha * (1.0 - self.alpha) / self.runs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "exceedance": self.exceedance,
            "runs": self.runs,
            "standard_error": self.standard_error,
            "mean_certificate": self.mean_certificate,
            "saturated_share": self.saturated_share,
        }


@dataclass
class CoverageTable:
    scenario: str
    seed: int
    rows: list[CoverageRow] = field(default_factory=list)

    def row(self, alpha: float) -> CoverageRow:
        for r in self.rows:
            if math.isclose(r.alpha, alpha):
                return r
        raise KeyError(alpha)

    def to_dict(self) -> dict[str, Any]:
        return {"scenario": self.scenario, "seed": self.seed, "rows": [r.to_dict() for r in self.rows]}


class CoverageExperiment:
    """Repeated fresh-train / fresh-test replications of a scenario.

    Each run fits the weight model on a new training set, draws one test
    context, decides at every alpha and records whether the realized cost
    exceeds the certificate.
    With ``known_propensity`` the weights come from the true past policy
    instead of a fitted one.
    """

    def __init__(
        self,
        scenario: Scenario,
        alphas: Sequence[float] = DEFAULT_ALPHAS,
        runs: int = 300,
        seed: int = 0,
        grid_points: int = 2001,
        mode: WeightMode = WeightMode.GENERATIVE,
        strategy: SearchStrategy = SearchStrategy.INTERVAL_HALVING,
        conservative: bool = False,
        console: Optional[Console] = None,
        save_cache: bool = False,
        known_propensity: bool = False,
    ) -> None:
        if runs < MIN_COVERAGE_RUNS:
            raise ValueError(f"coverage needs at least {MIN_COVERAGE_RUNS} runs, got {runs}")
        if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
            raise ValueError("alphas must be a non-empty list of levels in (0, 1)")
        self.scenario = scenario
        self.alphas = tuple(alphas)
        self.runs = runs
        self.seed = seed
        self.grid_points = grid_points
        self.mode = mode
        self.strategy = strategy
        self.conservative = conservative
        self.console = console
        self.save_cache = save_cache
        self.known_propensity = known_propensity

    def _replicate(self, run: int, rng: np.random.Generator) -> list[tuple[bool, float, bool]]:
        inst = self.scenario.instance(rng)
        if self.known_propensity:
            if inst.propensity is None:
                raise ValueError(f"scenario '{self.scenario.name}' has no known past policy")
            wm = fit_weight_model(inst.train, inst.weight_config).with_mode(WeightMode.PROPENSITY, inst.propensity)
        else:
            config = inst.weight_config.model_copy(update={"mode": self.mode})
            wm = fit_weight_model(inst.train, config)
        grid = CostGrid.from_range(inst.cost_range, self.grid_points)

        context = inst.sample_contexts(1, rng)
        z = inst.encode(context)[0]
        out = []
        for alpha in self.alphas:
            policy = RobustPolicy(
                inst.train, wm, alpha, grid, seed=self.seed,
                strategy=self.strategy, conservative=self.conservative,
            )
            decision = policy.decide(z, index=run)
            y = float(inst.sample_outcomes(np.array([decision.decision]), context, rng)[0])
            saturated = decision.per_arm_limits[decision.decision].saturated
            out.append((y > decision.certificate, decision.certificate, saturated))
        return out

    def run(self) -> CoverageTable:
        streams = np.random.SeedSequence(self.seed).spawn(self.runs)
        results: list[list[tuple[bool, float, bool]]] = []

        if self.console is None:
            for run, stream in enumerate(streams):
                results.append(self._replicate(run, np.random.default_rng(stream)))
        else:
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
                console=self.console,
            ) as progress:
                task = progress.add_task(f"Replicating {self.scenario.name}...", total=self.runs)
                for run, stream in enumerate(streams):
                    results.append(self._replicate(run, np.random.default_rng(stream)))
                    progress.advance(task)

        table = CoverageTable(scenario=self.scenario.name, seed=self.seed)
        for j, alpha in enumerate(self.alphas):
            hits = np.array([r[j][0] for r in results], dtype=float)
            certificates = np.array([r[j][1] for r in results])
            saturated = np.array([r[j][2] for r in results], dtype=float)
            p = float(hits.mean())
            table.rows.append(
                CoverageRow(
                    alpha=alpha,
                    exceedance=p,
                    runs=self.runs,
                    standard_error=math.sqrt(p * (1.0 - p) / self.runs),
                    mean_certificate=float(certificates.mean()),
                    saturated_share=float(saturated.mean()),
                )
            )
            logger.info("alpha=%.3f exceedance=%.4f over %d runs", alpha, p, self.runs)

        if self.save_cache:
            self._save_cache(table)
        return table

    def _save_cache(self, table: CoverageTable) -> None:
        """Keep the latest table next to the configuration for later reporting."""
        cache_file = get_config_dir() / "last_coverage.json"
        with open(cache_file, "w") as f:
            json.dump(table.to_dict(), f, indent=2)


def coverage_experiment(
    scenario: Scenario,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    runs: int = 300,
    seed: int = 0,
    **options: Any,
) -> CoverageTable:
    """Estimate Pr{y > y_α(z)} for every alpha over ``runs`` fresh replications."""
    return CoverageExperiment(scenario, alphas, runs, seed, **options).run()
