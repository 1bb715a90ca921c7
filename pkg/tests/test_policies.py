"""Tests for the robust policy and the linear baseline."""

import numpy as np
import pytest

from robust_policy.conformal import ConformalLimit, CostGrid
from robust_policy.dataset import Dataset
from robust_policy.errors import DatasetError, ModelFitError
from robust_policy.policies import (
    LinearPolicy,
    RobustPolicy,
    fit_linear_baseline,
    linear_decide,
    robust_decide,
)
from robust_policy.scenarios import (
    SyntheticConfig,
    SyntheticScenario,
    sample_synthetic,
    sample_synthetic_contexts,
)
from robust_policy.weights import WeightModelConfig, fit_weight_model


@pytest.fixture
def grid():
    return CostGrid(lo=-30.0, hi=30.0, points=601)


@pytest.fixture
def synthetic_policy(grid):
    """Robust policy at alpha 0.2 over a 200-record synthetic study."""
    ds = sample_synthetic(SyntheticConfig(n=200, seed=21))
    wm = fit_weight_model(ds, SyntheticScenario().weight_config())
    return RobustPolicy(ds, wm, 0.2, grid, seed=5)


def _limit(k, value, saturated=False):
    return ConformalLimit(decision=k, value=value, test_mass=0.1, quantile_at_value=0.0, saturated=saturated)


def test_strict_argmin(synthetic_policy, monkeypatch):
    """Test that limits {3, 5} pick decision 0 with certificate 3."""
    monkeypatch.setattr(synthetic_policy, "limits", lambda z: (_limit(0, 3.0), _limit(1, 5.0)))
    decision = robust_decide(synthetic_policy, np.array([40.0, 0.0]))
    assert decision.decision == 0
    assert decision.certificate == 3.0
    assert not decision.tied


def test_limits_one_step_apart_tie(synthetic_policy, monkeypatch):
    """Test that adjacent grid points count as a tie."""
    step = synthetic_policy.grid.step
    monkeypatch.setattr(synthetic_policy, "limits", lambda z: (_limit(0, 3.0), _limit(1, 3.0 + step)))
    decision = synthetic_policy.decide(np.array([40.0, 0.0]))
    assert decision.tied
    assert decision.decision in (0, 1)


def test_limits_two_steps_apart_do_not_tie(synthetic_policy, monkeypatch):
    step = synthetic_policy.grid.step
    monkeypatch.setattr(synthetic_policy, "limits", lambda z: (_limit(0, 3.0 + 2 * step), _limit(1, 3.0)))
    decision = synthetic_policy.decide(np.array([40.0, 0.0]))
    assert not decision.tied
    assert decision.decision == 1


def test_all_saturated_is_a_tie(grid):
    """Test that a context no arm has data near yields the range maximum."""
    rng = np.random.default_rng(0)
    ds = Dataset(
        x=np.tile([0, 1], 20),
        y=rng.normal(size=40),
        z=np.column_stack([rng.normal(45.0, 5.0, 40), np.zeros(40)]),
        decision_count=2,
    )
    wm = fit_weight_model(ds, SyntheticScenario().weight_config())
    policy = RobustPolicy(ds, wm, 0.2, grid)
    decision = policy.decide(np.array([30.0, 1.0]))
    assert decision.tied
    assert decision.certificate == grid.hi
    assert all(limit.saturated for limit in decision.per_arm_limits)


def test_certificate_is_the_minimum_limit(synthetic_policy):
    """Test certificate consistency across a batch of contexts."""
    contexts = sample_synthetic_contexts(20, np.random.default_rng(1))
    for d in synthetic_policy.decide_batch(contexts):
        values = [limit.value for limit in d.per_arm_limits]
        assert d.certificate == d.per_arm_limits[d.decision].value
        assert d.certificate <= min(values) + synthetic_policy.grid.step + 1e-9


def test_batch_matches_single_decisions(synthetic_policy):
    """Test that batched and one-at-a-time decisions agree."""
    contexts = sample_synthetic_contexts(10, np.random.default_rng(2))
    batch = synthetic_policy.decide_batch(contexts)
    for i, z in enumerate(contexts):
        single = synthetic_policy.decide(z, index=i)
        assert single.decision == batch[i].decision
        assert single.certificate == pytest.approx(batch[i].certificate, abs=synthetic_policy.grid.step)


def test_decisions_are_deterministic(grid):
    """Test that the same seed repeats decisions, ties included."""
    ds = sample_synthetic(SyntheticConfig(n=200, seed=3))
    wm = fit_weight_model(ds, SyntheticScenario().weight_config())
    contexts = np.vstack([sample_synthetic_contexts(10, np.random.default_rng(4)), [[30.0, 5.0]] * 3])
    first = RobustPolicy(ds, wm, 0.2, grid, seed=9).decide_batch(contexts)
    second = RobustPolicy(ds, wm, 0.2, grid, seed=9).decide_batch(contexts)
    assert [d.decision for d in first] == [d.decision for d in second]
    assert [d.certificate for d in first] == [d.certificate for d in second]


def test_common_cost_shift_leaves_decisions_unchanged(grid):
    """Test that shifting every cost moves limits by the shift and keeps the argmin."""
    ds = sample_synthetic(SyntheticConfig(n=200, seed=6, clip_costs=False))
    wm = fit_weight_model(ds, SyntheticScenario().weight_config())
    shift = 10 * grid.step
    wide = CostGrid(lo=-60.0, hi=60.0, points=2 * grid.points - 1)
    shifted_grid = CostGrid(lo=wide.lo + shift, hi=wide.hi + shift, points=wide.points)
    base = RobustPolicy(ds, wm, 0.2, wide, seed=1)
    moved = RobustPolicy(ds.shifted(shift), wm, 0.2, shifted_grid, seed=1)
    contexts = sample_synthetic_contexts(15, np.random.default_rng(7))
    for a, b in zip(base.decide_batch(contexts), moved.decide_batch(contexts)):
        for la, lb in zip(a.per_arm_limits, b.per_arm_limits):
            assert lb.value - la.value == pytest.approx(shift, abs=wide.step + 1e-9)
        values = sorted(limit.value for limit in a.per_arm_limits)
        if values[1] - values[0] > 3.5 * wide.step:
            assert a.decision == b.decision


def test_context_dimension_mismatch(synthetic_policy):
    with pytest.raises(DatasetError):
        synthetic_policy.decide(np.array([40.0]))


def test_policy_rejects_bad_alpha(grid):
    ds = sample_synthetic(SyntheticConfig(n=50, seed=1))
    wm = fit_weight_model(ds, SyntheticScenario().weight_config())
    with pytest.raises(ValueError):
        RobustPolicy(ds, wm, 1.5, grid)


def test_policy_is_a_decision_rule(synthetic_policy):
    """Test the callable form used by policy evaluation."""
    contexts = sample_synthetic_contexts(5, np.random.default_rng(8))
    decisions = synthetic_policy(contexts, np.random.default_rng(0))
    assert decisions.dtype == np.int64
    assert decisions.shape == (5,)


def _treated_count(z: np.ndarray, older_more_treated: bool) -> int:
    grid = CostGrid(lo=-30.0, hi=30.0, points=2001)
    treated = 0
    for seed in range(100):
        ds = sample_synthetic(SyntheticConfig(n=200, seed=seed, older_more_treated=older_more_treated))
        wm = fit_weight_model(ds, SyntheticScenario().weight_config())
        treated += RobustPolicy(ds, wm, 0.2, grid, seed=seed).decide(z).decision == 1
    return treated


@pytest.mark.slow
def test_males_around_47_are_treated():
    """Test that a man of 47 mostly gets the low-variance treatment at alpha 0.2."""
    assert _treated_count(np.array([47.0, 0.0]), older_more_treated=False) >= 50


@pytest.mark.slow
def test_males_around_47_are_treated_when_older_men_are_treated_more():
    """Test the treatment frequency when the past policy treats older men more often."""
    assert _treated_count(np.array([47.0, 0.0]), older_more_treated=True) >= 80


# ==================== Linear baseline ====================


def test_two_point_line():
    """Test that two records give the exact line through them."""
    ds = Dataset(x=[0, 0], y=[1.0, 3.0], z=[[0.0], [1.0]], decision_count=1)
    lp = fit_linear_baseline(ds)
    assert lp.coefficients[0] == pytest.approx([1.0, 2.0], abs=1e-12)


def test_duplicate_context_fits_the_mean():
    """Test least squares over repeated contexts."""
    ds = Dataset(x=[0, 0, 0], y=[1.0, 3.0, 8.0], z=[[2.0], [2.0], [4.0]], decision_count=1)
    lp = fit_linear_baseline(ds)
    assert lp.predict(np.array([2.0]))[0, 0] == pytest.approx(2.0)


def test_singular_design_uses_ridge():
    """Test that a single record still yields finite coefficients."""
    ds = Dataset(x=[0], y=[5.0], z=[[1.0]], decision_count=1)
    lp = fit_linear_baseline(ds)
    assert np.all(np.isfinite(lp.coefficients))
    assert lp.predict(np.array([1.0]))[0, 0] == pytest.approx(5.0, abs=1e-6)


def test_identical_predictions_pick_smallest_id():
    lp = LinearPolicy(coefficients=np.array([[1.0, 2.0], [1.0, 2.0]]), available=np.array([True, True]))
    assert linear_decide(lp, np.array([3.0])) == 0


def test_negated_costs_flip_the_choice():
    """Test that negating every cost flips a two-arm decision."""
    ds = Dataset(
        x=[0, 0, 1, 1], y=[1.0, 2.0, 4.0, 5.0], z=[[0.0], [1.0], [0.0], [1.0]], decision_count=2
    )
    z = np.array([0.5])
    assert linear_decide(fit_linear_baseline(ds), z) == 0
    negated = Dataset(x=ds.x, y=-ds.y, z=ds.z, decision_count=2)
    assert linear_decide(fit_linear_baseline(negated), z) == 1


def test_empty_arm_is_never_chosen():
    ds = Dataset(x=[0, 0], y=[100.0, 100.0], z=[[0.0], [1.0]], decision_count=2)
    lp = fit_linear_baseline(ds)
    assert not lp.available[1]
    assert linear_decide(lp, np.array([0.5])) == 0


def test_all_arms_empty_is_an_error():
    ds = Dataset(x=np.zeros(0, dtype=int), y=[], z=np.zeros((0, 1)), decision_count=2)
    with pytest.raises(ModelFitError):
        fit_linear_baseline(ds)


def test_baseline_slope_on_synthetic_data():
    """Test that the untreated arm recovers age - 46."""
    ds = sample_synthetic(SyntheticConfig(n=500_000, seed=0, clip_costs=False))
    lp = fit_linear_baseline(ds)
    assert lp.coefficients[0, 1] == pytest.approx(1.0, abs=0.1)
    assert lp.coefficients[0, 0] == pytest.approx(-46.0, abs=1.5)


def test_mean_optimal_policy_does_not_treat():
    """Test that the well-specified baseline leaves nearly everyone untreated."""
    ds = sample_synthetic(SyntheticConfig(n=100_000, seed=1, clip_costs=False))
    lp = fit_linear_baseline(ds)
    decisions = lp(sample_synthetic_contexts(1000, np.random.default_rng(2)))
    assert np.mean(decisions == 0) >= 0.99


def _no_treat_share(seed: int, clip_costs: bool) -> float:
    ds = sample_synthetic(SyntheticConfig(n=2000, seed=seed, clip_costs=clip_costs))
    decisions = fit_linear_baseline(ds)(sample_synthetic_contexts(1000, np.random.default_rng(1000 + seed)))
    return float(np.mean(decisions == 0))


def test_clipping_biases_the_baseline_at_2000_records():
    """Test the n=2000 no-treat criterion on seeds 0-19, with and without clipped costs."""
    clipped = [_no_treat_share(seed, clip_costs=True) for seed in range(20)]
    unclipped = [_no_treat_share(seed, clip_costs=False) for seed in range(20)]
    assert max(unclipped) >= 0.99
    assert np.mean(unclipped) > np.mean(clipped)


def test_scenario_baseline_fits_unclipped_costs():
    """Test that the baseline records match the training set apart from clipping."""
    inst = SyntheticScenario(SyntheticConfig(n=3000)).instance(np.random.default_rng(0))
    records = inst.baseline_records()
    assert np.array_equal(records.x, inst.train.x)
    assert np.array_equal(records.z, inst.train.z)
    inside = np.abs(records.y) <= 30.0
    assert np.array_equal(records.y[inside], inst.train.y[inside])
    assert inst.train.diagnostics["clipped_costs"] == np.count_nonzero(~inside) > 0


def test_mean_optimal_rule_with_true_coefficients():
    """Test predictions {age - 46, age - 45} always choose no treatment."""
    lp = LinearPolicy(
        coefficients=np.array([[-46.0, 1.0, 0.0], [-45.0, 1.0, 0.0]]), available=np.array([True, True])
    )
    contexts = sample_synthetic_contexts(100, np.random.default_rng(3))
    assert np.all(lp(contexts) == 0)


def test_weight_model_override_is_used():
    """Test that a scenario can fit a single joint Gaussian instead."""
    config = WeightModelConfig()
    assert SyntheticScenario(weights=config).weight_config() is config
