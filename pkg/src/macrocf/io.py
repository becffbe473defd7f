"""Data files, configuration, and report emission.

Data files are UTF-8 CSV with a mandatory header, the first column an
ISO-8601 date or integer period (strictly increasing), and missing values
spelled as empty cells (allowed only in instrument columns).  Configs are
flat ``key = value`` text files with dotted keys.  Reports are emitted as
one CSV per table or plot block with floats at 17 significant digits, so a
text round trip is lossless.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from macrocf.dataset import InstrumentSeries, PanelDataset
from macrocf.errors import SchemaError, ShapeError
from macrocf.svma import ShockRoles, SvmaModel, VariableRoles

TASKS = ("historical", "future", "intervention", "estimate_irf", "estimate_counterfactual")
INFERENCE_METHODS = ("hac", "hr", "delta", "wild_bootstrap")


# ---------------------------------------------------------------------------
# panel tables


@dataclass
class PanelTable:
    """Raw parsed data file: labels, column names, float matrix with NaN."""

    index: list[str]
    columns: list[str]
    values: np.ndarray

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise SchemaError(f"no column named {name!r} (have {', '.join(self.columns)})")
        return self.values[:, self.columns.index(name)]


def _index_keys(labels: list[str]) -> list:
    try:
        return [int(s) for s in labels]
    except ValueError:
        return labels


def load_panel(path, instrument_columns: Sequence[str] = ()) -> PanelTable:
    """Parse a panel CSV.

    Schema violations are reported with line numbers; a non-monotone or
    duplicated time index is rejected.  Empty cells are permitted only in
    the named instrument columns.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"data file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        if len(header) < 2:
            raise SchemaError(f"{path}: need a time column plus at least one series")
        columns = [c.strip() for c in header[1:]]
        if len(set(columns)) != len(columns):
            raise SchemaError(f"{path}: duplicate column names in header")
        unknown = set(instrument_columns) - set(columns)
        if unknown:
            raise SchemaError(f"{path}: instrument columns {sorted(unknown)} not in header")
        index: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} cells, found {len(row)}"
                )
            index.append(row[0].strip())
            parsed = []
            for name, cell in zip(columns, row[1:]):
                cell = cell.strip()
                if cell == "":
                    if name not in instrument_columns:
                        raise SchemaError(
                            f"{path}:{lineno}: missing value in non-instrument column {name!r}"
                        )
                    parsed.append(math.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise SchemaError(
                        f"{path}:{lineno}: cannot parse {cell!r} in column {name!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    keys = _index_keys(index)
    for i in range(1, len(keys)):
        if keys[i] == keys[i - 1]:
            raise SchemaError(f"{path}: duplicated time index {index[i]!r} at row {i + 2}")
        if keys[i] < keys[i - 1]:
            raise SchemaError(
                f"{path}: time index not strictly increasing at row {i + 2} ({index[i]!r})"
            )
    return PanelTable(index=index, columns=columns, values=np.asarray(rows, dtype=float))


def save_panel(table: PanelTable, path) -> None:
    """Write a panel CSV; floats use repr so a reload is value-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(table.columns))
        for label, row in zip(table.index, table.values):
            writer.writerow([label] + ["" if math.isnan(v) else repr(float(v)) for v in row])


def bind_dataset(table: PanelTable, x: str, y: str, r: str,
                 instrument: Optional[str] = None,
                 instrument_x: Optional[str] = None):
    """Assign roles and split instrument columns out of the observables.

    All non-instrument columns enter the observable panel (extra columns
    ride along as controls in the estimators); the returned role indices
    point into that panel.
    """
    for name in (x, y, r):
        if name not in table.columns:
            raise SchemaError(f"role column {name!r} not in data file")
    drop = {c for c in (instrument, instrument_x) if c}
    obs_cols = [c for c in table.columns if c not in drop]
    for name in (x, y, r):
        if name in drop:
            raise SchemaError(f"column {name!r} cannot be both a role and an instrument")
    roles = VariableRoles(x=obs_cols.index(x), y=obs_cols.index(y), r=obs_cols.index(r))
    obs = np.column_stack([table.column(c) for c in obs_cols])
    if np.isnan(obs).any():
        raise SchemaError("observable columns contain missing values")
    data = PanelDataset(obs, roles, columns=tuple(obs_cols),
                        time_index=np.asarray(table.index))
    z = InstrumentSeries(table.column(instrument)) if instrument else None
    zx = InstrumentSeries(table.column(instrument_x)) if instrument_x else None
    return data, z, zx


# ---------------------------------------------------------------------------
# model serialization


def save_model(model: SvmaModel, path, columns: Optional[Sequence[str]] = None,
               instrument: Optional[dict] = None) -> None:
    doc = {
        "ma_coeffs": model.ma_coeffs.tolist(),
        "shock_cov_diag": np.diag(model.shock_cov).tolist(),
        "initial_condition": model.initial_condition.tolist(),
        "variable_roles": {"x": model.variable_roles.x, "y": model.variable_roles.y,
                           "r": model.variable_roles.r},
        "shock_roles": {"x": model.shock_roles.x, "policy": list(model.shock_roles.policy)},
    }
    if columns is not None:
        doc["columns"] = list(columns)
    if instrument is not None:
        doc["instrument"] = instrument
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path):
    """Read a model JSON; returns (model, columns, instrument_spec)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"model file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"model file {path}: invalid JSON ({e})") from None
    try:
        model = SvmaModel(
            np.asarray(doc["ma_coeffs"], dtype=float),
            np.diag(np.asarray(doc["shock_cov_diag"], dtype=float)),
            np.asarray(doc["initial_condition"], dtype=float),
            VariableRoles(**{k: int(v) for k, v in doc["variable_roles"].items()}),
            ShockRoles(x=int(doc["shock_roles"]["x"]),
                       policy=tuple(doc["shock_roles"]["policy"])),
        )
    except KeyError as e:
        raise SchemaError(f"model file {path}: missing key {e}") from None
    columns = doc.get("columns")
    return model, columns, doc.get("instrument")


# ---------------------------------------------------------------------------
# counterfactual path mini-language


def parse_path_ops(spec: str) -> list[tuple]:
    """Parse the composable path operations.

    Tokens are comma separated; bare numbers continue a preceding
    ``explicit`` list.  Operations: ``explicit:v0,v1,...`` (set leading
    entries), ``offset:+x@h`` (shift entry h by x), ``hold:v:k`` (pin the
    first k entries at v), ``baseline`` (no-op).
    """
    ops: list = []
    for raw in spec.split(","):
        tok = raw.strip()
        if not tok:
            continue
        try:
            if tok == "baseline":
                ops.append(("baseline",))
            elif tok.startswith("explicit:"):
                ops.append(["explicit", [float(tok[len("explicit:"):])]])
            elif tok.startswith("offset:"):
                body = tok[len("offset:"):]
                value, at = body.split("@")
                ops.append(("offset", float(value), int(at)))
            elif tok.startswith("hold:"):
                _, value, count = tok.split(":")
                ops.append(("hold", float(value), int(count)))
            else:
                if ops and isinstance(ops[-1], list) and ops[-1][0] == "explicit":
                    ops[-1][1].append(float(tok))
                else:
                    raise ValueError("unknown operation")
        except ValueError as e:
            raise SchemaError(f"bad path token {tok!r}: {e}") from None
    if not ops:
        raise SchemaError("empty counterfactual path specification")
    return [tuple(op) if isinstance(op, list) else op for op in ops]


def apply_path_ops(baseline: np.ndarray, spec: str) -> np.ndarray:
    """Counterfactual policy path: operations applied left-to-right."""
    out = np.asarray(baseline, dtype=float).copy()
    for op in parse_path_ops(spec):
        if op[0] == "baseline":
            continue
        if op[0] == "explicit":
            values = op[1]
            if len(values) > out.size:
                raise SchemaError(
                    f"explicit path has {len(values)} entries for horizon {out.size - 1}"
                )
            out[: len(values)] = values
        elif op[0] == "offset":
            _, value, at = op
            if not 0 <= at < out.size:
                raise SchemaError(f"offset position {at} outside horizon 0..{out.size - 1}")
            out[at] += value
        elif op[0] == "hold":
            _, value, count = op
            if not 0 < count <= out.size:
                raise SchemaError(f"hold length {count} outside 1..{out.size}")
            out[:count] = value
    return out


def linear_interpolate(values, steps_per_interval: int) -> np.ndarray:
    """Linearly interpolate a coarse series onto a finer grid.

    Each consecutive pair of inputs is bridged by ``steps_per_interval``
    equally spaced points; input points are kept exactly, so a quarterly
    series with ``steps_per_interval=3`` becomes monthly with the quarterly
    values on every third entry.  This is a convenience for aligning
    coarse forecast paths with finer data and makes no claim beyond
    straight-line interpolation.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 2:
        raise ShapeError("need at least two points to interpolate")
    if steps_per_interval < 1:
        raise ShapeError("steps_per_interval must be >= 1")
    coarse = np.arange(v.size) * steps_per_interval
    fine = np.arange(coarse[-1] + 1)
    return np.interp(fine, coarse, v)


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass
class ScenarioConfig:
    """Validated flat configuration for one CLI run."""

    task: str
    data_file: Optional[str] = None
    x: Optional[str] = None
    y: Optional[str] = None
    r: Optional[str] = None
    instrument_column: Optional[str] = None
    instrument_x_column: Optional[str] = None
    horizon: int = 12
    lags: object = "auto"
    level: float = 0.9
    inference: str = "hac"
    replications: int = 200
    seed: int = 0
    scenario_start: Optional[str] = None
    path_spec: Optional[str] = None
    bandwidth: Optional[int] = None
    impact_on: Optional[str] = None
    impact_size: float = 1.0
    model_file: Optional[str] = None
    periods: Optional[int] = None

    _KEYS = {
        "task": "task",
        "data.file": "data_file",
        "data.x": "x",
        "data.y": "y",
        "data.r": "r",
        "instrument.column": "instrument_column",
        "instrument_x.column": "instrument_x_column",
        "horizon": "horizon",
        "lags": "lags",
        "level": "level",
        "inference": "inference",
        "replications": "replications",
        "seed": "seed",
        "scenario.start": "scenario_start",
        "counterfactual.path": "path_spec",
        "hac.bandwidth": "bandwidth",
        "irf.impact_on": "impact_on",
        "irf.impact_size": "impact_size",
        "model.file": "model_file",
        "periods": "periods",
    }

    @classmethod
    def from_mapping(cls, raw: dict, overrides: Optional[dict] = None) -> "ScenarioConfig":
        unknown = set(raw) - set(cls._KEYS)
        if unknown:
            raise SchemaError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values = {cls._KEYS[k]: v for k, v in raw.items()}
        for key, val in (overrides or {}).items():
            if val is not None:
                values[key] = val
        if "task" not in values:
            raise SchemaError("config must set a task")
        cfg = cls(task=str(values.pop("task")))
        for name, val in values.items():
            setattr(cfg, name, val)
        cfg._coerce()
        cfg._validate()
        return cfg

    def _coerce(self):
        self.horizon = int(self.horizon)
        self.level = float(self.level)
        self.replications = int(self.replications)
        self.seed = int(self.seed)
        self.impact_size = float(self.impact_size)
        if self.bandwidth is not None:
            self.bandwidth = int(self.bandwidth)
        if self.periods is not None:
            self.periods = int(self.periods)
        if self.lags != "auto":
            self.lags = int(self.lags)

    def _validate(self):
        if self.task not in TASKS:
            raise SchemaError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.horizon < 0:
            raise SchemaError("horizon must be nonnegative")
        if not 0.0 < self.level < 1.0:
            raise SchemaError("level must lie in (0, 1)")
        if self.inference not in INFERENCE_METHODS:
            raise SchemaError(f"unknown inference method {self.inference!r}")
        if self.replications < 1:
            raise SchemaError("replications must be positive")
        if self.lags != "auto" and self.lags < 1:
            raise SchemaError("lags must be 'auto' or a positive integer")
        missing = []
        if self.task in ("historical", "future", "intervention",
                         "estimate_irf", "estimate_counterfactual"):
            for attr, key in (("data_file", "data.file"), ("x", "data.x"),
                              ("y", "data.y"), ("r", "data.r"),
                              ("instrument_column", "instrument.column")):
                if getattr(self, attr) is None:
                    missing.append(key)
        if self.task == "historical":
            if self.scenario_start is None:
                missing.append("scenario.start")
            if self.path_spec is None:
                missing.append("counterfactual.path")
        if self.task == "future" and self.path_spec is None:
            missing.append("counterfactual.path")
        if missing:
            raise SchemaError(f"task {self.task!r} requires config keys: {', '.join(missing)}")


def parse_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' lines are comments; keys are unique."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"config file {path} does not exist")
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise SchemaError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise SchemaError(f"{path}:{lineno}: empty key or value")
            if key in out:
                raise SchemaError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def load_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    return ScenarioConfig.from_mapping(parse_config_file(path), overrides)


# ---------------------------------------------------------------------------
# report bundle


def format_float(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.17g}"


@dataclass
class ReportRow:
    horizon: int
    estimate: float
    se: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]
    method: str

    def __post_init__(self):
        if (self.ci_lo is None) != (self.ci_hi is None):
            raise ShapeError("confidence bounds must come in pairs")
        if self.ci_lo is not None and not (self.ci_lo <= self.estimate <= self.ci_hi):
            raise ShapeError(
                f"row h={self.horizon}: interval [{self.ci_lo}, {self.ci_hi}] "
                f"does not contain estimate {self.estimate}"
            )


@dataclass
class PlotSeries:
    """Named (time, value) series with optional band columns."""

    name: str
    time: list[str]
    values: np.ndarray
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.time) != self.values.size:
            raise ShapeError(f"series {self.name!r}: time and values lengths differ")
        for band in ("lo", "hi"):
            arr = getattr(self, band)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.size != self.values.size:
                    raise ShapeError(f"series {self.name!r}: band length differs")
                setattr(self, band, arr)


@dataclass
class ReportBundle:
    """Everything one run reports: tables, plot series, and run metadata."""

    tables: dict[str, list[ReportRow]] = field(default_factory=dict)
    series: list[PlotSeries] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)


def _table_csv(rows: list[ReportRow]) -> str:
    lines = ["horizon,estimate,se,ci_lo,ci_hi,method"]
    for row in rows:
        lines.append(",".join([
            str(row.horizon), format_float(row.estimate), format_float(row.se),
            format_float(row.ci_lo), format_float(row.ci_hi), row.method,
        ]))
    return "\n".join(lines) + "\n"


def _series_csv(s: PlotSeries) -> str:
    header = ["time", s.name]
    if s.lo is not None:
        header += [f"{s.name}.lo", f"{s.name}.hi"]
    lines = [",".join(header)]
    for i, label in enumerate(s.time):
        cells = [str(label), format_float(s.values[i])]
        if s.lo is not None:
            cells += [format_float(s.lo[i]), format_float(s.hi[i])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _metadata_csv(meta: dict[str, str]) -> str:
    lines = ["key,value"]
    for k, v in meta.items():
        lines.append(f"{k},{v}")
    return "\n".join(lines) + "\n"


def render_report(bundle: ReportBundle) -> dict[str, str]:
    """Deterministic mapping of file name to CSV content."""
    files: dict[str, str] = {}
    for name, rows in bundle.tables.items():
        files[f"estimates_{name}.csv"] = _table_csv(rows)
    for s in bundle.series:
        files[f"series_{s.name}.csv"] = _series_csv(s)
    files["metadata.csv"] = _metadata_csv(bundle.metadata)
    return files


def human_table(bundle: ReportBundle) -> str:
    """Aligned plain-text rendering of the estimate tables and metadata."""
    out = []
    for name, rows in bundle.tables.items():
        out.append(f"== {name} ==")
        header = ("horizon", "estimate", "se", "ci_lo", "ci_hi", "method")
        body = [header] + [
            (str(r.horizon), format_float(r.estimate), format_float(r.se),
             format_float(r.ci_lo), format_float(r.ci_hi), r.method)
            for r in rows
        ]
        widths = [max(len(line[i]) for line in body) for i in range(len(header))]
        for line in body:
            out.append("  ".join(cell.rjust(w) for cell, w in zip(line, widths)))
        out.append("")
    if bundle.metadata:
        out.append("== metadata ==")
        width = max(len(k) for k in bundle.metadata)
        for k, v in bundle.metadata.items():
            out.append(f"{k.ljust(width)}  {v}")
        out.append("")
    return "\n".join(out)


def emit_report(bundle: ReportBundle, out_dir=None, fmt: str = "csv"):
    """Write the bundle as CSV files or render an aligned text table.

    Returns the file mapping (csv) or the text (human_table); both are
    deterministic functions of the bundle.
    """
    if fmt == "human_table":
        return human_table(bundle)
    if fmt != "csv":
        raise SchemaError(f"unknown report format {fmt!r}")
    files = render_report(bundle)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, content in files.items():
            (out_dir / name).write_text(content, encoding="utf-8")
    return files
