"""Console tables and plot-ready files for robust-policy results."""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from robust_policy.conformal import ConformalLimit
from robust_policy.dataset import ValidationReport
from robust_policy.evaluation import CoverageTable, PolicyEvaluation
from robust_policy.policies import PolicyDecision


class ReportGenerator:
    """Render validation, decisions, evaluations and coverage tables."""

    def __init__(self, console: Console) -> None:
        self.console = console

    def print_validation(self, report: ValidationReport, labels: Optional[tuple[str, ...]] = None) -> None:
        """Per-arm record counts plus problem tallies."""
        self.console.print()
        table = Table(title="📊 Records per decision", show_header=True, header_style="bold cyan")
        table.add_column("Decision", style="cyan")
        table.add_column("Records", justify="right")
        table.add_column("Share", justify="right")

        for k, count in enumerate(report.arm_counts):
            name = labels[k] if labels else str(k)
            share = count / report.n if report.n else 0.0
            style = "[red]0[/red]" if count == 0 else str(count)
            table.add_row(name, style, f"{share:.1%}")
        self.console.print(table)

        self.console.print()
        if report.is_clean and not report.empty_arms:
            self.console.print("[green]✅ No data problems found[/green]")
            return
        self.console.print("[bold yellow]⚠️  Findings:[/bold yellow]")
        if report.out_of_range_costs:
            self.console.print(f"  • {report.out_of_range_costs} cost(s) outside the declared range")
        if report.dimension_mismatches:
            self.console.print(f"  • {report.dimension_mismatches} record(s) with unexpected feature dimension")
        for k in report.empty_arms:
            self.console.print(f"  • decision {k} has no records; its limits saturate at the range maximum")

    def print_limit(self, limit: ConformalLimit) -> None:
        color = "yellow" if limit.saturated else "green"
        self.console.print(Panel.fit(
            f"[bold]Decision {limit.decision}[/bold]\n"
            f"Limit: [{color}]{limit.value:.4f}[/{color}]"
            f"{' (saturated)' if limit.saturated else ''}\n"
            f"Test-point mass: [dim]{limit.test_mass:.4g}[/dim]",
            border_style=color,
        ))

    def print_decisions(self, decisions: list[PolicyDecision], limit: int = 20) -> None:
        """First ``limit`` decisions with their certificates."""
        self.console.print()
        table = Table(title="🧭 Decisions", show_header=True, header_style="bold cyan")
        table.add_column("#", justify="right", style="dim")
        table.add_column("Decision", justify="center", style="cyan")
        table.add_column("Certificate", justify="right")
        table.add_column("Notes", style="dim")

        for i, d in enumerate(decisions[:limit]):
            notes = []
            if d.tied:
                notes.append("tie")
            if d.per_arm_limits[d.decision].saturated:
                notes.append("saturated")
            table.add_row(str(i), str(d.decision), f"{d.certificate:.4f}", ", ".join(notes) or "-")
        self.console.print(table)
        if len(decisions) > limit:
            self.console.print(f"[dim]... and {len(decisions) - limit} more contexts[/dim]")

    def print_evaluations(self, evaluations: dict[str, PolicyEvaluation]) -> None:
        """Mean and tail quantile of each evaluated policy."""
        self.console.print()
        table = Table(title="📈 Policy costs", show_header=True, header_style="bold cyan")
        table.add_column("Policy", style="cyan")
        table.add_column("Draws", justify="right")
        table.add_column("Mean", justify="right")
        table.add_column("Tail quantile", justify="right")

        best = min(e.quantile for e in evaluations.values())
        for name, e in evaluations.items():
            q = f"{e.quantile:.3f}"
            if e.quantile == best:
                q = f"[green]{q}[/green]"
            table.add_row(name, str(e.costs.size), f"{e.mean:.3f}", f"{q} (α={e.alpha:g})")
        self.console.print(table)

    def print_coverage(self, table_data: CoverageTable) -> None:
        """Exceedance per alpha, flagged against alpha + 3 SE."""
        self.console.print()
        self.console.print(Panel.fit(
            f"[bold cyan]Coverage: {table_data.scenario}[/bold cyan]\n"
            f"Seed: [dim]{table_data.seed}[/dim]  "
            f"Generated: [dim]{datetime.now().strftime('%Y-%m-%d %H:%M')}[/dim]",
            border_style="cyan",
        ))
        table = Table(show_header=True, header_style="bold cyan")
        table.add_column("α", justify="right", style="cyan")
        table.add_column("Pr{y > limit}", justify="right")
        table.add_column("SE", justify="right")
        table.add_column("Runs", justify="right")
        table.add_column("Mean certificate", justify="right")
        table.add_column("Saturated", justify="right")

        for row in table_data.rows:
            color = "green" if row.exceedance <= row.bound else "red"
            table.add_row(
                f"{row.alpha:g}",
                f"[{color}]{row.exceedance:.4f}[/{color}]",
                f"{row.standard_error:.4f}",
                str(row.runs),
                f"{row.mean_certificate:.3f}",
                f"{row.saturated_share:.1%}",
            )
        self.console.print(table)


# ==================== Files ====================


def write_curve_csv(evaluation: PolicyEvaluation, path: str | Path) -> None:
    """Complementary CDF as ``threshold,value`` rows."""
    frame = pd.DataFrame(
        {"threshold": evaluation.curve.thresholds, "value": evaluation.curve.probabilities}
    )
    frame.to_csv(path, index=False)


def write_coverage_csv(table: CoverageTable, path: str | Path) -> None:
    frame = pd.DataFrame([row.to_dict() for row in table.rows])
    frame.to_csv(path, index=False)


def write_decisions_csv(decisions: list[PolicyDecision], path: str | Path) -> None:
    """One ``decision,certificate,tied`` row per context, in input order."""
    frame = pd.DataFrame(
        {
            "decision": [d.decision for d in decisions],
            "certificate": [d.certificate for d in decisions],
            "tied": [str(d.tied).lower() for d in decisions],
        }
    )
    frame.to_csv(path, index=False)


def write_json(data: dict[str, Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=str)
