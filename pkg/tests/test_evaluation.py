"""Tests for policy evaluation and coverage experiments."""

import json
import math

import numpy as np
import pytest

from robust_policy.conformal import CostGrid
from robust_policy.dataset import Dataset
from robust_policy.errors import DatasetError
from robust_policy.evaluation import (
    CoverageExperiment,
    coverage_experiment,
    cost_quantile,
    empirical_ccdf,
    evaluate_policy,
)
from robust_policy.policies import RobustPolicy
from robust_policy.scenarios import (
    FEMALE_AGE,
    IhdpStyleConfig,
    IhdpStyleScenario,
    ScenarioInstance,
    SyntheticConfig,
    SyntheticScenario,
    sample_synthetic,
    sample_synthetic_contexts,
    synthetic_outcome,
)
from robust_policy.weights import WeightModelConfig, fit_weight_model


class MenOnlyScenario:
    """Training records of men only, evaluated on women: every arm saturates."""

    name = "men-only"

    def __init__(self) -> None:
        self.base = SyntheticScenario(SyntheticConfig(n=400))

    def instance(self, rng):
        inst = self.base.instance(rng)
        men = inst.train.z[:, 1] == 0
        train = Dataset(
            x=inst.train.x[men], y=inst.train.y[men], z=inst.train.z[men], decision_count=2
        )

        def women(m, r):
            return np.column_stack([r.normal(*FEMALE_AGE, m), np.ones(m)])

        return ScenarioInstance(
            train=train,
            raw_train=train,
            cost_range=inst.cost_range,
            weight_config=inst.weight_config,
            sample_contexts=women,
            sample_outcomes=inst.sample_outcomes,
            past_policy=inst.past_policy,
        )


def _constant(decision):
    return lambda contexts, rng: np.full(len(contexts), decision)


def test_ccdf_examples():
    """Test exceedance fractions at the middle and both extremes."""
    curve = empirical_ccdf([1.0, 2.0, 3.0], [0.0, 2.0, 5.0])
    assert curve.probabilities.tolist() == [1.0, pytest.approx(1 / 3), 0.0]
    assert curve.rows()[1][0] == 2.0


def test_ccdf_matches_rank_oracle():
    """Test the curve against direct counting on random inputs."""
    rng = np.random.default_rng(0)
    for _ in range(100):
        costs = np.round(rng.normal(size=int(rng.integers(1, 30))), 1)
        thresholds = np.round(rng.normal(size=10), 1)
        curve = empirical_ccdf(costs, thresholds)
        expected = [np.mean(costs > t) for t in np.sort(thresholds)]
        assert np.allclose(curve.probabilities, expected)
        assert np.all(np.diff(curve.probabilities) <= 0)


def test_ccdf_rejects_empty_costs():
    with pytest.raises(DatasetError):
        empirical_ccdf([], [0.0])


def test_cost_quantile_examples():
    """Test the order statistic at 0.8 and near the top."""
    costs = [5.0, 1.0, 4.0, 2.0, 3.0]
    assert cost_quantile(costs, 0.2) == 4.0
    assert cost_quantile(costs, 1e-9) == 5.0


def test_cost_quantile_matches_brute_force():
    """Test against a scan for the smallest cost whose CDF reaches 1 - alpha."""
    rng = np.random.default_rng(1)
    for _ in range(200):
        costs = np.round(rng.normal(size=int(rng.integers(1, 12))), 1)
        alpha = float(rng.uniform(0.01, 0.99))
        expected = min(c for c in costs if np.mean(costs <= c) >= 1 - alpha - 1e-12)
        assert cost_quantile(costs, alpha) == expected


def test_cost_quantile_rejects_bad_alpha():
    with pytest.raises(ValueError):
        cost_quantile([1.0], 1.0)


def test_evaluation_is_deterministic():
    """Test identical cost lists for the same seed."""
    args = (_constant(0), lambda x, z, r: synthetic_outcome(x, z, r), sample_synthetic_contexts)
    a = evaluate_policy(*args, m=500, seed=4)
    b = evaluate_policy(*args, m=500, seed=4)
    assert np.array_equal(a.costs, b.costs)
    assert a.decision_shares(2).tolist() == [1.0, 0.0]


def test_constant_policy_mean_cost():
    """Test the untreated mean cost E[age] - 46 under the population law."""
    cfg = SyntheticConfig(clip_costs=False)
    m = 100_000
    evaluation = evaluate_policy(
        _constant(0), lambda x, z, r: synthetic_outcome(x, z, r, cfg), sample_synthetic_contexts, m=m, seed=2
    )
    age_var = 0.5 * 5.0**2 + 0.5 * 5.0**2 + 0.25 * 15.0**2
    se = math.sqrt(20.0**2 + age_var) / math.sqrt(m)
    assert abs(evaluation.mean - (37.5 - 46.0)) <= 4 * se


@pytest.mark.slow
def test_robust_policy_lowers_the_tail():
    """Test that the robust 0.8-quantile beats the past policy in most replications."""
    scenario = SyntheticScenario()
    grid = CostGrid(lo=-30.0, hi=30.0, points=2001)

    def outcomes(x, z, r):
        return synthetic_outcome(x, z, r, scenario.config)

    wins = 0
    for seed in range(10):
        ds = sample_synthetic(SyntheticConfig(n=200, seed=seed))
        policy = RobustPolicy(ds, fit_weight_model(ds, scenario.weight_config()), 0.2, grid, seed=seed)
        robust = evaluate_policy(policy, outcomes, sample_synthetic_contexts, m=10_000, seed=100 + seed)
        past = evaluate_policy(scenario.past_policy, outcomes, sample_synthetic_contexts, m=10_000, seed=100 + seed)
        wins += robust.quantile <= past.quantile
    assert wins >= 8


# ==================== Coverage ====================


def test_coverage_requires_enough_runs():
    with pytest.raises(ValueError):
        CoverageExperiment(SyntheticScenario(), runs=10)
    with pytest.raises(ValueError):
        CoverageExperiment(SyntheticScenario(), alphas=[0.0], runs=30)


def test_coverage_is_deterministic():
    """Test that the same seed gives the same table."""
    scenario = SyntheticScenario(SyntheticConfig(n=60))
    a = coverage_experiment(scenario, alphas=[0.2], runs=30, seed=3, grid_points=401)
    b = coverage_experiment(scenario, alphas=[0.2], runs=30, seed=3, grid_points=401)
    assert a.to_dict() == b.to_dict()
    row = a.row(0.2)
    assert 0.0 <= row.exceedance <= 1.0
    assert row.runs == 30


def test_coverage_cache(tmp_path, monkeypatch):
    """Test that the latest table is kept in the config directory."""
    monkeypatch.setattr("robust_policy.evaluation.get_config_dir", lambda: tmp_path)
    scenario = SyntheticScenario(SyntheticConfig(n=60))
    table = coverage_experiment(scenario, alphas=[0.3], runs=30, seed=1, grid_points=201, save_cache=True)
    cached = json.loads((tmp_path / "last_coverage.json").read_text())
    assert cached == json.loads(json.dumps(table.to_dict()))


def test_saturated_arms_never_exceed():
    """Test that certificates at the range maximum are never exceeded."""
    table = coverage_experiment(MenOnlyScenario(), alphas=[0.999], runs=30, seed=0, grid_points=201)
    row = table.row(0.999)
    assert row.exceedance == 0.0
    assert row.saturated_share == 1.0
    assert row.mean_certificate == 30.0


@pytest.mark.slow
def test_synthetic_coverage_with_misspecified_weights():
    """Test validity at 300 runs with a single joint Gaussian per arm."""
    scenario = SyntheticScenario(weights=WeightModelConfig())
    table = coverage_experiment(scenario, alphas=[0.1, 0.2, 0.3], runs=300, seed=2024)
    for row in table.rows:
        assert row.exceedance <= row.bound


def test_known_propensity_needs_a_past_policy():
    """Test that a scenario without a known past policy is rejected."""
    with pytest.raises(ValueError, match="no known past policy"):
        coverage_experiment(MenOnlyScenario(), alphas=[0.2], runs=30, known_propensity=True, grid_points=201)


def test_known_propensity_coverage_runs():
    """Test a short sweep weighted by the true past policy."""
    scenario = SyntheticScenario(SyntheticConfig(n=60))
    table = coverage_experiment(scenario, alphas=[0.2, 0.3], runs=30, seed=5, grid_points=401, known_propensity=True)
    for row in table.rows:
        assert 0.0 <= row.exceedance <= 1.0
        assert -30.0 <= row.mean_certificate <= 30.0


@pytest.mark.slow
def test_synthetic_coverage_with_known_weights():
    """Test validity at 300 runs when weights come from the true past policy."""
    table = coverage_experiment(
        SyntheticScenario(), alphas=[0.1, 0.2, 0.3], runs=300, seed=2025, known_propensity=True
    )
    for row in table.rows:
        assert row.exceedance <= row.bound


@pytest.mark.slow
def test_synthetic_coverage_is_informative():
    """Test that alpha 0.2 is neither violated nor vacuous."""
    table = coverage_experiment(SyntheticScenario(), alphas=[0.2], runs=300, seed=7)
    row = table.row(0.2)
    assert 0.05 <= row.exceedance <= row.bound


@pytest.mark.slow
def test_ihdp_style_coverage():
    """Test the IHDP-style exceedance at alpha 0.2 over 500 runs."""
    scenario = IhdpStyleScenario(IhdpStyleConfig(sigma0=5.0, sigma1=1.0))
    table = coverage_experiment(scenario, alphas=[0.2], runs=500, seed=11)
    assert 0.10 <= table.row(0.2).exceedance <= 0.226
