"""CLI entry point for robust-policy."""

import json
import logging
from pathlib import Path
from typing import Any, NoReturn, Optional

import numpy as np
import pandas as pd
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel

from robust_policy import __version__
from robust_policy.config import SearchStrategy, WeightMode
from robust_policy.errors import DatasetError, RobustPolicyError

app = typer.Typer(
    name="robust-policy",
    help="Robust Policy - learn decision policies with certified tail-cost limits from observational data",
    add_completion=False,
)
console = Console()
err_console = Console(stderr=True)

FAILURES = (RobustPolicyError, OSError, ValueError)


def _fail(action: str, e: Exception) -> NoReturn:
    err_console.print(f"[red]❌ {action} failed: {e}[/red]")
    raise typer.Exit(1)


def _cost_range(y_min: float, y_max: float) -> Any:
    from robust_policy.dataset import CostRange

    try:
        return CostRange(lo=y_min, hi=y_max)
    except ValidationError as e:
        raise DatasetError(e.errors()[0]["msg"])


def _read_contexts(path: Path) -> np.ndarray:
    """Context vectors, one per CSV row; a non-numeric first row is taken as a header."""
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DatasetError(f"{path} is empty")
    rows = frame.to_numpy()
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        contexts = rows.astype(float)
    except ValueError as e:
        raise DatasetError(f"{path}: non-numeric context value ({e})")
    if contexts.size == 0:
        raise DatasetError(f"{path} contains no contexts")
    return contexts


def _parse_context(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise DatasetError(f"context '{text}' must be comma-separated numbers")


def _scenario(name: str, n: Optional[int], sigma0: Optional[float], sigma1: Optional[float]) -> Any:
    from robust_policy.scenarios import make_scenario

    options: dict[str, Any] = {"sigma0": sigma0, "sigma1": sigma1}
    if name == "synthetic":
        options.update(n=n)
    else:
        options.update(n_train=n)
    return make_scenario(name, **{k: v for k, v in options.items() if v is not None})


@app.command()
def configure(
    alpha: float = typer.Option(0.2, "--alpha", help="Default tail level"),
    grid_points: int = typer.Option(2001, "--grid-points", help="Default cost grid size"),
    seed: int = typer.Option(0, "--seed", help="Default random seed"),
    mode: WeightMode = typer.Option(WeightMode.GENERATIVE, "--mode", help="Weight construction"),
    strategy: SearchStrategy = typer.Option(
        SearchStrategy.INTERVAL_HALVING, "--strategy", help="Cost grid search"
    ),
    conservative_test_mass: bool = typer.Option(
        False, "--conservative-test-mass/--literal-test-mass",
        help="Place the test-point mass at +inf",
    ),
    components: int = typer.Option(4, "--components", help="Gaussian mixture components"),
) -> None:
    """Save default settings to ~/.robust-policy/config.yaml."""
    from robust_policy.config import RobustPolicySettings, get_config_file, save_settings

    try:
        settings = RobustPolicySettings(
            alpha=alpha,
            grid_points=grid_points,
            seed=seed,
            mode=mode,
            strategy=strategy,
            conservative_test_mass=conservative_test_mass,
            components=components,
        )
    except ValueError as e:
        _fail("Configuration", e)
    save_settings(settings)

    console.print("[green]✅ Configuration saved![/green]")
    console.print(f"[dim]{get_config_file()}[/dim]")


@app.command()
def validate(
    data: Path = typer.Argument(..., help="Dataset CSV or JSON"),
    y_min: float = typer.Option(..., "--y-min", help="Smallest attainable cost"),
    y_max: float = typer.Option(..., "--y-max", help="Largest attainable cost"),
    dim: Optional[int] = typer.Option(None, "--dim", help="Expected feature dimension"),
    labels: Optional[Path] = typer.Option(None, "--labels", help="Decision-label YAML/JSON list"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Save the report as JSON"),
) -> None:
    """Check a dataset and count records per decision."""
    from robust_policy.dataset import load_dataset, validate_dataset
    from robust_policy.reporter import ReportGenerator, write_json

    try:
        cost_range = _cost_range(y_min, y_max)
        ds = load_dataset(data, cost_range, labels_path=labels)
        report = validate_dataset(ds, cost_range, expected_dim=dim)
    except FAILURES as e:
        _fail("Validation", e)

    ReportGenerator(console).print_validation(report, ds.labels)
    if output:
        write_json(report.to_dict(), output)
        console.print(f"\n[green]✅ Report saved to {output}[/green]")


@app.command()
def generate(
    scenario: str = typer.Argument(..., help="synthetic or ihdp"),
    output: Path = typer.Option(..., "--output", "-o", help="Training dataset CSV"),
    n: Optional[int] = typer.Option(None, "--n", help="Training records"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    sigma0: Optional[float] = typer.Option(None, "--sigma0", help="Untreated cost standard deviation"),
    sigma1: Optional[float] = typer.Option(None, "--sigma1", help="Treated cost standard deviation"),
    clip: bool = typer.Option(True, "--clip/--no-clip", help="Clip synthetic costs to [-30, 30]"),
    covariates: Optional[Path] = typer.Option(None, "--covariates", help="Real covariate CSV (ihdp)"),
    contexts: Optional[Path] = typer.Option(None, "--contexts", help="Held-out contexts CSV (ihdp)"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="Generating parameters as JSON"),
) -> None:
    """Sample a scenario's training data in the dataset CSV schema."""
    from robust_policy.config import get_settings
    from robust_policy.dataset import write_dataset
    from robust_policy.reporter import write_json
    from robust_policy.scenarios import (
        IhdpStyleConfig,
        SyntheticConfig,
        generate_ihdp_style,
        sample_synthetic,
    )

    try:
        seed = get_settings(seed=seed).seed
        options = {k: v for k, v in {"sigma0": sigma0, "sigma1": sigma1}.items() if v is not None}
        if scenario == "synthetic":
            cfg = SyntheticConfig(seed=seed, clip_costs=clip, **options, **({"n": n} if n else {}))
            ds = sample_synthetic(cfg)
            record: dict[str, Any] = {"scenario": scenario, **cfg.model_dump(mode="json")}
            record["clipped_costs"] = ds.diagnostics.get("clipped_costs", 0)
        elif scenario == "ihdp":
            icfg = IhdpStyleConfig(
                seed=seed, covariates_path=covariates, **options, **({"n_train": n} if n else {})
            )
            sample = generate_ihdp_style(icfg)
            ds = sample.train
            record = {"scenario": scenario, **icfg.model_dump(mode="json"), **sample.truth.to_dict()}
            record["cost_range"] = sample.cost_range.model_dump()
            if contexts:
                frame = pd.DataFrame(
                    sample.test_contexts, columns=[f"z{j + 1}" for j in range(ds.d)]
                )
                frame.to_csv(contexts, index=False, float_format="%.17g")
        else:
            raise ValueError(f"unknown scenario '{scenario}', expected synthetic or ihdp")
        write_dataset(ds, output)
        if truth:
            write_json(record, truth)
    except FAILURES as e:
        _fail("Generation", e)

    counts = ds.arm_counts()
    console.print(f"[green]✅ Wrote {ds.n} records to {output}[/green]")
    console.print(f"[dim]Records per decision: {', '.join(str(c) for c in counts)}[/dim]")


@app.command("fit-weights")
def fit_weights(
    data: Path = typer.Argument(..., help="Dataset CSV or JSON"),
    output: Path = typer.Option(..., "--output", "-o", help="Weight model JSON"),
    kind: str = typer.Option("gaussian", "--kind", help="gaussian, gmm, bernoulli or product"),
    components: Optional[int] = typer.Option(None, "--components", help="Mixture components"),
    binary_columns: Optional[str] = typer.Option(
        None, "--binary-columns", help="Comma-separated 0-based binary feature columns (product)"
    ),
    continuous_kind: str = typer.Option("gaussian", "--continuous-kind", help="gaussian or gmm"),
    mode: Optional[WeightMode] = typer.Option(None, "--mode", help="Weight construction"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Initialization seed"),
) -> None:
    """Fit p(x) and p(z | x) per decision and save the weight model."""
    from robust_policy.config import get_settings
    from robust_policy.dataset import load_dataset
    from robust_policy.weights import (
        DensityKind,
        EmSettings,
        WeightModelConfig,
        fit_weight_model,
        save_weight_model,
    )

    try:
        settings = get_settings(components=components, mode=mode, seed=seed)
        columns = tuple(int(c) for c in binary_columns.split(",")) if binary_columns else ()
        config = WeightModelConfig(
            kind=DensityKind(kind),
            components=settings.components,
            em=EmSettings(
                max_iter=settings.max_iter,
                tol=settings.tol,
                covariance_floor=settings.covariance_floor,
                seed=settings.seed,
            ),
            binary_columns=columns,
            continuous_kind=DensityKind(continuous_kind),
            mode=settings.mode,
        )
        ds = load_dataset(data)
        wm = fit_weight_model(ds, config)
        save_weight_model(wm, output)
    except FAILURES as e:
        _fail("Fitting", e)

    missing = [str(k) for k in range(wm.decision_count) if not wm.has_data(k)]
    console.print(f"[green]✅ Weight model saved to {output}[/green]")
    console.print(f"[dim]Decisions: {wm.decision_count}, mode: {wm.mode.value}[/dim]")
    if missing:
        console.print(f"[yellow]⚠️  No records for decision(s) {', '.join(missing)}; their limits saturate[/yellow]")


@app.command()
def limit(
    data: Path = typer.Argument(..., help="Dataset CSV or JSON"),
    model: Path = typer.Argument(..., help="Weight model JSON"),
    context: str = typer.Option(..., "--context", "-z", help="Comma-separated feature vector"),
    y_min: float = typer.Option(..., "--y-min", help="Smallest attainable cost"),
    y_max: float = typer.Option(..., "--y-max", help="Largest attainable cost"),
    decision: Optional[int] = typer.Option(None, "--decision", "-x", help="Single decision (default: all)"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Tail level"),
    grid_points: Optional[int] = typer.Option(None, "--grid-points", help="Cost grid size"),
    strategy: Optional[SearchStrategy] = typer.Option(None, "--strategy", help="Cost grid search"),
    conservative_test_mass: Optional[bool] = typer.Option(
        None, "--conservative-test-mass/--literal-test-mass", help="Place the test-point mass at +inf"
    ),
    pretty: bool = typer.Option(False, "--pretty", help="Render panels instead of JSON"),
) -> None:
    """Print the conformal cost limit(s) at one context as JSON."""
    from robust_policy.config import get_settings
    from robust_policy.conformal import CostGrid, conformal_limit
    from robust_policy.dataset import load_dataset
    from robust_policy.reporter import ReportGenerator
    from robust_policy.weights import load_weight_model

    try:
        settings = get_settings(
            alpha=alpha, grid_points=grid_points, strategy=strategy,
            conservative_test_mass=conservative_test_mass,
        )
        cost_range = _cost_range(y_min, y_max)
        wm = load_weight_model(model)
        ds = load_dataset(data, cost_range, decision_count=wm.decision_count)
        z = _parse_context(context)
        grid = CostGrid.from_range(cost_range, settings.grid_points)
        decisions = [decision] if decision is not None else list(range(wm.decision_count))
        for k in decisions:
            if not 0 <= k < wm.decision_count:
                raise DatasetError(f"decision {k} outside [0, {wm.decision_count})")
        limits = [
            conformal_limit(
                ds, wm, k, z, settings.alpha, grid, settings.strategy, settings.conservative_test_mass
            )
            for k in decisions
        ]
    except FAILURES as e:
        _fail("Limit", e)

    if pretty:
        reporter = ReportGenerator(console)
        for lim in limits:
            reporter.print_limit(lim)
        return

    records = [
        {"decision": lim.decision, "value": lim.value, "saturated": lim.saturated, "test_mass": lim.test_mass}
        for lim in limits
    ]
    typer.echo(json.dumps(records[0] if decision is not None else records))


@app.command()
def policy(
    data: Path = typer.Argument(..., help="Dataset CSV or JSON"),
    model: Path = typer.Argument(..., help="Weight model JSON"),
    contexts: Path = typer.Argument(..., help="Context vectors CSV, one per row"),
    y_min: float = typer.Option(..., "--y-min", help="Smallest attainable cost"),
    y_max: float = typer.Option(..., "--y-max", help="Largest attainable cost"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Decisions CSV (default: stdout)"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Tail level"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Tie-break seed"),
    grid_points: Optional[int] = typer.Option(None, "--grid-points", help="Cost grid size"),
    conservative_test_mass: Optional[bool] = typer.Option(
        None, "--conservative-test-mass/--literal-test-mass", help="Place the test-point mass at +inf"
    ),
) -> None:
    """Robust decisions with certificates for a batch of contexts."""
    from robust_policy.config import get_settings
    from robust_policy.conformal import CostGrid
    from robust_policy.dataset import load_dataset
    from robust_policy.policies import RobustPolicy
    from robust_policy.reporter import ReportGenerator, write_decisions_csv
    from robust_policy.weights import load_weight_model

    try:
        settings = get_settings(
            alpha=alpha, seed=seed, grid_points=grid_points,
            conservative_test_mass=conservative_test_mass,
        )
        cost_range = _cost_range(y_min, y_max)
        wm = load_weight_model(model)
        ds = load_dataset(data, cost_range, decision_count=wm.decision_count)
        rp = RobustPolicy(
            ds, wm, settings.alpha, CostGrid.from_range(cost_range, settings.grid_points),
            seed=settings.seed, strategy=settings.strategy,
            conservative=settings.conservative_test_mass,
        )
        decisions = rp.decide_batch(_read_contexts(contexts))
    except FAILURES as e:
        _fail("Policy", e)

    if output:
        write_decisions_csv(decisions, output)
        ReportGenerator(console).print_decisions(decisions)
        console.print(f"\n[green]✅ Decisions saved to {output}[/green]")
    else:
        typer.echo("decision,certificate,tied")
        for d in decisions:
            typer.echo(f"{d.decision},{d.certificate!r},{str(d.tied).lower()}")


@app.command()
def ccdf(
    scenario: str = typer.Argument(..., help="synthetic or ihdp"),
    output: Path = typer.Option(..., "--output", "-o", help="Curve CSV (threshold,value)"),
    policies: list[str] = typer.Option(
        ["robust"], "--policy", "-p", help="robust, past or baseline; repeat to compare"
    ),
    draws: int = typer.Option(10_000, "--draws", "-m", help="Evaluation draws"),
    n: Optional[int] = typer.Option(None, "--n", help="Training records"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Tail level"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    grid_points: Optional[int] = typer.Option(None, "--grid-points", help="Cost grid size"),
    mode: Optional[WeightMode] = typer.Option(None, "--mode", help="Weight construction"),
    conservative_test_mass: Optional[bool] = typer.Option(
        None, "--conservative-test-mass/--literal-test-mass", help="Place the test-point mass at +inf"
    ),
    sigma0: Optional[float] = typer.Option(None, "--sigma0", help="Untreated cost standard deviation"),
    sigma1: Optional[float] = typer.Option(None, "--sigma1", help="Treated cost standard deviation"),
) -> None:
    """Complementary CDF of the costs a policy incurs in a scenario."""
    from robust_policy.config import get_settings
    from robust_policy.conformal import CostGrid
    from robust_policy.evaluation import evaluate_policy
    from robust_policy.policies import RobustPolicy, fit_linear_baseline
    from robust_policy.reporter import ReportGenerator, write_curve_csv
    from robust_policy.weights import fit_weight_model

    try:
        settings = get_settings(
            alpha=alpha, seed=seed, grid_points=grid_points, mode=mode,
            conservative_test_mass=conservative_test_mass,
        )
        unknown = sorted(set(policies) - {"robust", "past", "baseline"})
        if unknown:
            raise ValueError(f"unknown policy {', '.join(unknown)}")
        inst = _scenario(scenario, n, sigma0, sigma1).instance(np.random.default_rng(settings.seed))
        thresholds = np.linspace(inst.cost_range.lo, inst.cost_range.hi, settings.grid_points)

        evaluations = {}
        for name in dict.fromkeys(policies):
            features = None
            if name == "robust":
                wm = fit_weight_model(inst.train, inst.weight_config.model_copy(update={"mode": settings.mode}))
                rule: Any = RobustPolicy(
                    inst.train, wm, settings.alpha,
                    CostGrid.from_range(inst.cost_range, settings.grid_points),
                    seed=settings.seed, strategy=settings.strategy,
                    conservative=settings.conservative_test_mass,
                )
                features = inst.encode
            elif name == "baseline":
                rule = fit_linear_baseline(inst.baseline_records())
            else:
                rule = inst.past_policy
            evaluations[name] = evaluate_policy(
                rule, inst.sample_outcomes, inst.sample_contexts, draws,
                seed=settings.seed + 1, alpha=settings.alpha,
                features=features, thresholds=thresholds,
            )

        written = []
        for name, evaluation in evaluations.items():
            path = output if len(evaluations) == 1 else output.with_name(f"{output.stem}_{name}{output.suffix}")
            write_curve_csv(evaluation, path)
            written.append(path)
    except FAILURES as e:
        _fail("Evaluation", e)

    ReportGenerator(console).print_evaluations(evaluations)
    for path in written:
        console.print(f"[green]✅ Curve saved to {path}[/green]")


@app.command()
def coverage(
    scenario: str = typer.Argument(..., help="synthetic or ihdp"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Coverage table CSV"),
    alphas: Optional[list[float]] = typer.Option(None, "--alpha", help="Tail level; repeat for a sweep"),
    runs: int = typer.Option(300, "--runs", help="Monte-Carlo replications"),
    n: Optional[int] = typer.Option(None, "--n", help="Training records per replication"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    grid_points: Optional[int] = typer.Option(None, "--grid-points", help="Cost grid size"),
    mode: Optional[WeightMode] = typer.Option(None, "--mode", help="Weight construction"),
    conservative_test_mass: Optional[bool] = typer.Option(
        None, "--conservative-test-mass/--literal-test-mass", help="Place the test-point mass at +inf"
    ),
    sigma0: Optional[float] = typer.Option(None, "--sigma0", help="Untreated cost standard deviation"),
    sigma1: Optional[float] = typer.Option(None, "--sigma1", help="Treated cost standard deviation"),
    known_propensity: bool = typer.Option(
        False, "--known-propensity", help="Weight by the true past policy instead of fitted models"
    ),
) -> None:
    """Estimate Pr{y > certificate} per alpha by fresh-train, fresh-test replication."""
    from robust_policy.config import get_settings
    from robust_policy.evaluation import DEFAULT_ALPHAS, CoverageExperiment
    from robust_policy.reporter import ReportGenerator, write_coverage_csv

    try:
        settings = get_settings(
            seed=seed, grid_points=grid_points, mode=mode,
            conservative_test_mass=conservative_test_mass,
        )
        experiment = CoverageExperiment(
            _scenario(scenario, n, sigma0, sigma1),
            alphas=alphas or DEFAULT_ALPHAS,
            runs=runs,
            seed=settings.seed,
            grid_points=settings.grid_points,
            mode=settings.mode,
            strategy=settings.strategy,
            conservative=settings.conservative_test_mass,
            console=console,
            save_cache=True,
            known_propensity=known_propensity,
        )
        table = experiment.run()
        if output:
            write_coverage_csv(table, output)
    except FAILURES as e:
        _fail("Coverage", e)

    ReportGenerator(console).print_coverage(table)
    if output:
        console.print(f"\n[green]✅ Table saved to {output}[/green]")


@app.command()
def version() -> None:
    """Show version information."""
    console.print(Panel.fit(
        "[bold cyan]Robust Policy[/bold cyan]\n"
        f"Version: {__version__}",
        title="robust-policy",
    ))


@app.callback(invoke_without_command=True)
def main(
    ctx: typer.Context,
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress and fitting details"),
) -> None:
    """Robust Policy."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )
    if ctx.invoked_subcommand is None:
        console.print(Panel.fit(
            "[bold cyan]Robust Policy[/bold cyan] 🎯\n\n"
            "Choose decisions whose cost stays below a certified limit with probability 1 - α.\n\n"
            "[bold]Quick Start:[/bold]\n"
            "  1. [cyan]robust-policy generate synthetic -o data.csv[/cyan]  - Sample a scenario\n"
            "  2. [cyan]robust-policy fit-weights data.csv -o model.json[/cyan]  - Learn the weights\n"
            "  3. [cyan]robust-policy policy data.csv model.json contexts.csv --y-min -30 --y-max 30[/cyan]\n"
            "  4. [cyan]robust-policy coverage synthetic --runs 300[/cyan]  - Check the limits\n\n"
            "[dim]Use --help on any command for more information[/dim]",
            title="Welcome",
            border_style="cyan",
        ))


if __name__ == "__main__":
    app()
