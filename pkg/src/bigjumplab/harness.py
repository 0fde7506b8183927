"""
Declarative experiment grids, deterministic runs and machine-readable reports.

A configuration names one experiment, a tail model, and a grid of ``(n, x)``
points.  Every grid point becomes one :class:`ResultRow`; failures are
recorded in the row's ``status`` rather than aborting the run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import jsonschema
import numpy as np
from scipy import stats

from . import __version__
from .bigjump import (
    RegimeError,
    error_bound_A,
    fuk_nagaev_bound,
    fuk_nagaev_exact,
    local_ratio,
    tail_ratio,
)
from .conditional import (
    EXCEED,
    HIT,
    ConditionalSpec,
    sample_conditional_exact,
    tv_exact_thm2,
    tv_exact_thm3,
    tv_mc_shifted,
)
from .poisson import CompoundPoissonSpec, compound_poisson_pmf, condensation_check
from .tailmodel import TailModel, scale_an, scale_bn

EXPERIMENTS = ("ratio", "tail_ratio", "tv2", "tv3", "fn_bound", "poisson", "scales", "sample")
STOCHASTIC = ("sample",)

STATUS_OK = "ok"
STATUS_REGIME = "out_of_regime"
STATUS_ERROR = "error"

_MODEL_SCHEMA = {
    "type": "object",
    "required": ["alpha"],
    "properties": {
        "kind": {"enum": ["general", "zeta"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "p": {"type": "number", "minimum": 0, "maximum": 1},
        "q": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha_tilde": {"type": ["number", "null"]},
        "L": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["constant", "log_power", "one_plus_power"]},
                "params": {"type": ["object", "array"]},
            },
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment", "model", "grid"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "model": _MODEL_SCHEMA,
        "grid": {
            "type": "object",
            "required": ["n"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
                "x": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
                "x_rule": {
                    "type": "object",
                    "required": ["c"],
                    "additionalProperties": False,
                    "properties": {"c": {"type": "number"}},
                },
            },
            "not": {"required": ["x", "x_rule"]},
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_path": {"type": ["string", "null"]},
        "format": {"enum": ["csv", "json"]},
        "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
        "params": {"type": "object"},
    },
}


class ConfigError(ValueError):
    """Configuration does not match the experiment schema."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: dict
    grid: dict
    seed: int | None = None
    output_path: str | None = None
    format: str = "csv"
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        validate_config(obj)
        return cls(**obj)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        return {k: v for k, v in out.items() if v is not None}

    @property
    def tail_model(self) -> TailModel:
        return TailModel.from_json(self.model)

    def points(self) -> list[tuple[int, int | None]]:
        """Grid points in emission order."""
        ns = list(self.grid["n"])
        if "x" in self.grid:
            return [(n, x) for n in ns for x in self.grid["x"]]
        if "x_rule" in self.grid:
            c = self.grid["x_rule"]["c"]
            return [(n, int(round(c * n))) for n in ns]
        return [(n, None) for n in ns]

    def config_hash(self) -> str:
        """Hash of everything that affects the rows; output location and format are excluded."""
        body = {k: v for k, v in self.to_dict().items() if k not in ("output_path", "format")}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def validate_config(obj: dict) -> None:
    """Raise :class:`ConfigError` unless ``obj`` is a usable configuration."""
    try:
        jsonschema.validate(obj, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    if obj["experiment"] in STOCHASTIC and "seed" not in obj:
        raise ConfigError(f"experiment {obj['experiment']!r} needs a seed")
    if obj["experiment"] not in ("scales", "poisson") and not ({"x", "x_rule"} & set(obj["grid"])):
        raise ConfigError("grid needs either 'x' or 'x_rule'")
    if obj.get("params", {}).get("mc_samples") and "seed" not in obj:
        raise ConfigError("Monte Carlo estimates need a seed")
    model = obj["model"]
    if model.get("kind") == "zeta":
        extra = sorted(set(model) - {"kind", "alpha"})
        if extra:
            raise ConfigError(f"model: zeta takes only alpha, got {extra}")
    try:
        TailModel.from_json(model)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from exc


ROW_FIELDS = (
    "experiment",
    "row",
    "n",
    "x",
    "value",
    "bound",
    "method",
    "stderr",
    "status",
    "message",
    "extra",
    "wall_time",
)


@dataclass
class ResultRow:
    """
    One grid point.

    ``value`` is the primary measured quantity and ``bound`` the matching
    theoretical bound or prediction; ``extra`` holds secondary numbers.
    """

    experiment: str
    row: int
    n: int
    x: int | None
    value: float | None = None
    bound: float | None = None
    method: str = ""
    stderr: float | None = None
    status: str = STATUS_OK
    message: str | None = None
    extra: dict = field(default_factory=dict)
    wall_time: float | None = None

    def __post_init__(self):
        if self.value is not None and not math.isfinite(self.value) and not math.isinf(self.value):
            raise ValueError("primary value is NaN")

    def as_record(self, timing: bool = False) -> dict:
        rec = asdict(self)
        if not timing:
            rec["wall_time"] = None
        return rec


# experiment kernels: each returns (value, bound, method, stderr, extra)


def _bound_or_regime(model, n, x, eps):
    try:
        return error_bound_A(model, n, x, eps=eps), None
    except RegimeError as exc:
        return None, str(exc)


def _run_ratio(model, n, x, params, rng, tail=False):
    fn = tail_ratio if tail else local_ratio
    res = fn(model, n, x, method=params.get("method", "auto"))
    report, regime = _bound_or_regime(model, n, x, params.get("eps", 0.05))
    extra = {"exact_log": res.exact_log, "approx_log": res.approx_log}
    bound = None
    if report is not None:
        bound = report.total
        extra.update({"beta": report.beta, "err_term": report.err_term})
    return res.error, bound, res.method, None, extra, regime


def _cond_spec(model, n, x, params, kind):
    support = params.get("support")
    return ConditionalSpec(
        model,
        n,
        x,
        x_minus=params.get("x_minus"),
        kind=kind,
        window=params.get("window"),
        support=tuple(support) if support else None,
    )


def _run_tv(model, n, x, params, rng, kind):
    spec = _cond_spec(model, n, x, params, kind)
    report = tv_exact_thm2(spec) if kind == EXCEED else tv_exact_thm3(spec)
    extra = {"tv_squared": report.tv_squared, "x_minus": report.x_minus}
    extra.update({f"bound_{k}": v for k, v in report.bound_terms.items()})
    stderr = None
    if params.get("mc_samples"):
        mc = tv_mc_shifted(spec, int(params["mc_samples"]), rng)
        extra["tv_mc"] = mc.tv
        stderr = mc.mc_stderr
    return report.tv, report.bound_max, report.method, stderr, extra, None


def _run_fn(model, n, x, params, rng):
    y = int(params.get("y_frac", 0.25) * x) if "y" not in params else int(params["y"])
    exact = fuk_nagaev_exact(model, n, x, y)
    bound = fuk_nagaev_bound(model, n, x, y, constants=params.get("constants"))
    return exact, bound, "direct", None, {"y": y}, None


def _run_poisson(model, n, x, params, rng):
    spec = CompoundPoissonSpec(
        lam=float(params.get("lam", 0.5)),
        n=n,
        alpha=model.alpha,
        window=int(params.get("window", 2**14)),
    )
    k = x if x is not None else int(params.get("k_factor", 5) * n)
    pmf = compound_poisson_pmf(spec)
    res = condensation_check(spec, k, c=params.get("c", 3.0), pmf=pmf)
    regime = None if k >= params.get("c", 3.0) * n else f"k={k} below c*n"
    extra = {"k": k, "lhs": res["lhs"], "rhs": res["rhs"], "abs_error": abs(res["ratio"] - 1.0)}
    return res["ratio"], res["predicted_error"], pmf.method, None, extra, regime


def _run_scales(model, n, x, params, rng):
    return scale_an(model, n), scale_bn(model, n), "root", None, {}, None


def _run_sample(model, n, x, params, rng):
    kind = params.get("kind", EXCEED)
    spec = _cond_spec(model, n, x, params, kind)
    size = int(params.get("size", 1000))
    draws = sample_conditional_exact(spec, rng, size=size)
    top = draws.values.max(axis=1)
    big = (top > spec.x_minus).astype(float)
    p = float(big.mean())
    extra = {"mean_max": float(top.mean()), "size": size, "residual": draws.residual}
    return p, None, "exact_sampler", math.sqrt(max(p * (1 - p), 0.0) / size), extra, None


_KERNELS = {
    "ratio": _run_ratio,
    "tail_ratio": lambda *a: _run_ratio(*a, tail=True),
    "tv2": lambda *a: _run_tv(*a, kind=EXCEED),
    "tv3": lambda *a: _run_tv(*a, kind=HIT),
    "fn_bound": _run_fn,
    "poisson": _run_poisson,
    "scales": _run_scales,
    "sample": _run_sample,
}


def row_rng(seed: int | None, row: int) -> np.random.Generator:
    """Independent generator for one grid row, keyed by ``(seed, row)``."""
    return np.random.default_rng(np.random.SeedSequence([seed or 0, row]))


def run_experiment(config: ExperimentConfig | dict) -> list[ResultRow]:
    """Evaluate every grid point of ``config`` in grid order."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    model = config.tail_model
    kernel = _KERNELS[config.experiment]
    rows = []
    for i, (n, x) in enumerate(config.points()):
        start = time.perf_counter()
        row = ResultRow(config.experiment, i, n, x)
        try:
            value, bound, method, stderr, extra, regime = kernel(model, n, x, config.params, row_rng(config.seed, i))
            row.value, row.bound, row.method, row.stderr = _num(value), _num(bound), method, _num(stderr)
            row.extra = {k: _jsonable(v) for k, v in extra.items()}
            if regime:
                row.status, row.message = STATUS_REGIME, regime
        except RegimeError as exc:
            row.status, row.message = STATUS_REGIME, str(exc)
        except (ValueError, ArithmeticError) as exc:
            row.status, row.message = STATUS_ERROR, f"{type(exc).__name__}: {exc}"
        if row.value is not None and math.isnan(row.value):
            row.value, row.status, row.message = None, STATUS_ERROR, "primary value is NaN"
        row.wall_time = time.perf_counter() - start
        rows.append(row)
    return rows


def _num(v):
    return None if v is None else float(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    return v


def all_failed(rows: list[ResultRow]) -> bool:
    return bool(rows) and all(r.status != STATUS_OK for r in rows)


# regression


def _get(row, key):
    if isinstance(row, dict):
        return row.get(key)
    if hasattr(row, key):
        return getattr(row, key)
    return row.extra.get(key)


def fit_decay_exponent(rows: Iterable, x_col: str = "n", y_col: str = "value") -> dict:
    """
    Least-squares fit of ``log y`` against ``log x``.

    Returns
    -------
    dict
        ``slope``, ``intercept`` and ``r2``.
    """
    rows = list(rows)
    if len(rows) < 4:
        raise ValueError(f"need at least 4 rows, got {len(rows)}")
    xs = np.array([_get(r, x_col) if _get(r, x_col) is not None else np.nan for r in rows], float)
    ys = np.array([_get(r, y_col) if _get(r, y_col) is not None else np.nan for r in rows], float)
    bad = [i for i in range(len(rows)) if not (xs[i] > 0 and ys[i] > 0)]
    if bad:
        raise ValueError(f"non-positive or missing values at rows {bad}")
    fit = stats.linregress(np.log(xs), np.log(ys))
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": float(fit.rvalue**2)}


# reports


def report_metadata(config: ExperimentConfig | None) -> dict:
    meta = {"version": __version__}
    if config is not None:
        meta.update({"config_hash": config.config_hash(), "seed": config.seed, "experiment": config.experiment})
    return meta


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(rows: list[ResultRow], fmt: str = "csv", metadata: dict | None = None, timing: bool = False) -> str:
    """Report text; ``wall_time`` is blanked unless ``timing`` is set."""
    metadata = metadata or {}
    records = [r.as_record(timing) for r in rows]
    if fmt == "json":
        return json.dumps({"metadata": metadata, "rows": records}, indent=2, sort_keys=True) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    for key in sorted(metadata):
        buf.write(f"# {key}: {metadata[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for rec in records:
        writer.writerow([_cell(rec[k]) for k in ROW_FIELDS])
    return buf.getvalue()


def emit_report(rows, fmt: str = "csv", path=None, metadata: dict | None = None, timing: bool = False) -> str:
    """Render ``rows`` and write them to ``path`` when given."""
    text = render_report(rows, fmt, metadata, timing)
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_cell(key: str, text: str) -> Any:
    if text == "":
        return {} if key == "extra" else None
    if key in ("row", "n", "x"):
        return int(text)
    if key in ("value", "bound", "stderr", "wall_time"):
        return float(text)
    if key == "extra":
        return json.loads(text)
    return text


def load_report(path) -> tuple[dict, list[ResultRow]]:
    """Read a report written by :func:`emit_report`."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        obj = json.loads(text)
        return obj["metadata"], [ResultRow(**rec) for rec in obj["rows"]]
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = val
        else:
            body.append(line)
    reader = csv.DictReader(body)
    rows = [ResultRow(**{k: _parse_cell(k, rec[k]) for k in ROW_FIELDS}) for rec in reader]
    return meta, rows


__all__ = [
    "CONFIG_SCHEMA",
    "ConfigError",
    "EXPERIMENTS",
    "ExperimentConfig",
    "ROW_FIELDS",
    "ResultRow",
    "all_failed",
    "emit_report",
    "fit_decay_exponent",
    "load_report",
    "render_report",
    "report_metadata",
    "row_rng",
    "run_experiment",
    "validate_config",
]
