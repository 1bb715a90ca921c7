"""Observational decision datasets: data model, validation and file ingestion."""

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from robust_policy.errors import DatasetError

logger = logging.getLogger(__name__)


class CostRange(BaseModel):
    """Declared support of the cost, 𝒴 = [lo, hi]."""

    model_config = ConfigDict(frozen=True)

    lo: float = Field(..., description="Smallest attainable cost")
    hi: float = Field(..., description="Largest attainable cost, the fallback limit")

    @model_validator(mode="after")
    def _check_bounds(self) -> "CostRange":
        if not math.isfinite(self.hi):
            raise ValueError("cost range upper bound must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"cost range requires lo < hi, got [{self.lo}, {self.hi}]")
        return self

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Elementwise membership of costs in the range."""
        return (y >= self.lo) & (y <= self.hi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Logged (decision, cost, features) records in file order.

    ``x`` holds dense decision ids in ``[0, decision_count)``, ``y`` the costs and
    ``z`` an ``(n, d)`` feature matrix.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    decision_count: int
    labels: Optional[tuple[str, ...]] = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        x = np.asarray(self.x)
        y = np.array(self.y, dtype=float)
        z = np.array(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if x.ndim != 1 or y.ndim != 1 or z.ndim != 2:
            raise DatasetError("x and y must be vectors and z a matrix")
        if not (len(x) == len(y) == z.shape[0]):
            raise DatasetError(
                f"record count mismatch: {len(x)} decisions, {len(y)} costs, {z.shape[0]} features"
            )
        if x.size and not np.all(np.equal(np.mod(x, 1), 0)):
            raise DatasetError("decision ids must be integers")
        x = x.astype(np.int64)
        if self.decision_count < 1:
            raise DatasetError("decision_count must be positive")
        bad = (x < 0) | (x >= self.decision_count)
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            raise DatasetError(
                f"record {row}: decision id {x[row]} outside [0, {self.decision_count})"
            )
        if not np.all(np.isfinite(z)):
            raise DatasetError("feature values must be finite; missing values are not imputed")
        if not np.all(np.isfinite(y)):
            raise DatasetError("costs must be finite")
        if self.labels is not None and len(self.labels) != self.decision_count:
            raise DatasetError(
                f"{len(self.labels)} decision labels for {self.decision_count} decisions"
            )
        for name, arr in (("x", x), ("y", y), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def d(self) -> int:
        return int(self.z.shape[1])

    def arm_mask(self, k: int) -> np.ndarray:
        """Boolean mask of the records that received decision ``k``."""
        return self.x == k

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.x, minlength=self.decision_count)

    def with_features(self, z: np.ndarray) -> "Dataset":
        """Same decisions and costs over a different feature matrix."""
        return Dataset(
            x=self.x,
            y=self.y,
            z=z,
            decision_count=self.decision_count,
            labels=self.labels,
            diagnostics=dict(self.diagnostics),
        )

    def shifted(self, offset: float) -> "Dataset":
        """Same records with every cost shifted by ``offset``."""
        return Dataset(
            x=self.x,
            y=self.y + offset,
            z=self.z,
            decision_count=self.decision_count,
            labels=self.labels,
            diagnostics=dict(self.diagnostics),
        )

    def label_for(self, k: int) -> str:
        """Human-readable name of decision ``k``."""
        if self.labels is None:
            return str(k)
        return self.labels[k]


@dataclass(frozen=True)
class ValidationReport:
    """Exact tallies of data problems found by :func:`validate_dataset`."""

    arm_counts: tuple[int, ...]
    out_of_range_costs: int
    dimension_mismatches: int

    @property
    def n(self) -> int:
        return sum(self.arm_counts)

    @property
    def empty_arms(self) -> tuple[int, ...]:
        return tuple(k for k, count in enumerate(self.arm_counts) if count == 0)

    @property
    def is_clean(self) -> bool:
        return self.out_of_range_costs == 0 and self.dimension_mismatches == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "arm_counts": list(self.arm_counts),
            "empty_arms": list(self.empty_arms),
            "out_of_range_costs": self.out_of_range_costs,
            "dimension_mismatches": self.dimension_mismatches,
        }


def validate_dataset(
    ds: Dataset, cost_range: CostRange, expected_dim: Optional[int] = None
) -> ValidationReport:
    """Count per-arm records and problems without modifying ``ds``.

    An empty arm is reported through its zero count, not as an error: limits for
    that arm saturate at ``cost_range.hi`` downstream.
    """
    mismatches = 0
    if expected_dim is not None and ds.d != expected_dim:
        mismatches = ds.n
    return ValidationReport(
        arm_counts=tuple(int(c) for c in ds.arm_counts()),
        out_of_range_costs=int(np.count_nonzero(~cost_range.contains(ds.y))),
        dimension_mismatches=mismatches,
    )


# ==================== File ingestion ====================


def _feature_columns(columns: Sequence[str]) -> int:
    """Check a ``x,y,z1,...,zd`` header and return d."""
    cols = [str(c).strip() for c in columns]
    if len(cols) < 3 or cols[0] != "x" or cols[1] != "y":
        raise DatasetError(f"header must start with 'x,y,z1', got {','.join(cols)}")
    expected = [f"z{j}" for j in range(1, len(cols) - 1)]
    if cols[2:] != expected:
        raise DatasetError(
            f"feature columns must be {','.join(expected)}, got {','.join(cols[2:])}"
        )
    return len(expected)


def _parse_float(value: Any, row: int, column: str) -> float:
    if value is None or (isinstance(value, str) and not value.strip()):
        raise DatasetError(f"row {row}: missing value in column '{column}'")
    if isinstance(value, bool):
        raise DatasetError(f"row {row}: non-numeric value {value!r} in column '{column}'")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DatasetError(f"row {row}: non-numeric value {value!r} in column '{column}'")


def _parse_decision(value: Any, row: int) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    try:
        return int(str(value).strip())
    except ValueError:
        raise DatasetError(f"row {row}: decision id {value!r} is not an integer")


def _read_csv_records(path: Path) -> tuple[list[int], list[float], list[list[float]]]:
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8"
        )
    except pd.errors.EmptyDataError:
        raise DatasetError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise DatasetError(f"{path}: malformed row ({e})")

    d = _feature_columns(list(frame.columns))
    xs: list[int] = []
    ys: list[float] = []
    zs: list[list[float]] = []
    for row, values in enumerate(frame.itertuples(index=False, name=None), start=1):
        if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in values):
            raise DatasetError(f"row {row}: expected {d + 2} fields")
        xs.append(_parse_decision(values[0], row))
        ys.append(_parse_float(values[1], row, "y"))
        zs.append([_parse_float(values[j + 2], row, f"z{j + 1}") for j in range(d)])
    return xs, ys, zs


def _read_json_records(path: Path) -> tuple[list[int], list[float], list[list[float]]]:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise DatasetError(f"{path} is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e})")
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected an array of records")

    xs: list[int] = []
    ys: list[float] = []
    zs: list[list[float]] = []
    for row, record in enumerate(data, start=1):
        if not isinstance(record, dict) or set(record) != {"x", "y", "z"}:
            raise DatasetError(f"record {row}: expected keys x, y, z")
        if not isinstance(record["z"], list):
            raise DatasetError(f"record {row}: z must be an array")
        xs.append(_parse_decision(record["x"], row))
        ys.append(_parse_float(record["y"], row, "y"))
        zs.append([_parse_float(v, row, "z") for v in record["z"]])
    dims = {len(z) for z in zs}
    if len(dims) > 1:
        raise DatasetError(f"{path}: feature vectors have differing lengths {sorted(dims)}")
    return xs, ys, zs


def load_dataset(
    path: str | Path,
    cost_range: Optional[CostRange] = None,
    decision_count: Optional[int] = None,
    labels_path: Optional[str | Path] = None,
) -> Dataset:
    """Load a CSV (``x,y,z1,...,zd``) or JSON dataset, keeping file order.

    ``decision_count`` defaults to the label count or the largest decision id plus
    one. Costs outside ``cost_range`` are loaded as-is with a warning;
    :func:`validate_dataset` reports them.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path} does not exist")

    if path.suffix.lower() == ".json":
        xs, ys, zs = _read_json_records(path)
    else:
        xs, ys, zs = _read_csv_records(path)
    if not xs:
        raise DatasetError(f"{path} contains no records")

    labels = load_decision_labels(labels_path) if labels_path else None
    if decision_count is None:
        decision_count = len(labels) if labels else max(xs) + 1

    ds = Dataset(
        x=np.array(xs, dtype=np.int64),
        y=np.array(ys, dtype=float),
        z=np.array(zs, dtype=float),
        decision_count=decision_count,
        labels=labels,
    )
    if cost_range is not None:
        report = validate_dataset(ds, cost_range)
        if report.out_of_range_costs:
            logger.warning(
                "%d cost(s) in %s fall outside [%g, %g]",
                report.out_of_range_costs, path, cost_range.lo, cost_range.hi,
            )
    logger.info("Loaded %d records (d=%d) from %s", ds.n, ds.d, path)
    return ds


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` as CSV or JSON (chosen by suffix); floats round-trip exactly."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        records = [
            {"x": int(x), "y": float(y), "z": [float(v) for v in z]}
            for x, y, z in zip(ds.x, ds.y, ds.z)
        ]
        with open(path, "w", encoding="utf-8") as f:
            json.dump(records, f)
        return

    frame = pd.DataFrame({"x": ds.x, "y": ds.y})
    for j in range(ds.d):
        frame[f"z{j + 1}"] = ds.z[:, j]
    frame.to_csv(path, index=False, float_format="%.17g")


def load_decision_labels(path: str | Path) -> tuple[str, ...]:
    """Read the decision-label sidecar: a YAML or JSON list indexed by decision id."""
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, list) or not data:
        raise DatasetError(f"{path}: expected a non-empty list of decision labels")
    return tuple(str(label) for label in data)
