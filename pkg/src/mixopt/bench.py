"""Tabular replay harness: run tables, synthetic tables, multi-seed simulation and CSV export."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from .loop import LoopConfig, run_bo, run_mfbo
from .problem import ReplayProblem
from .types import (
    Budget,
    FidelitySpec,
    Orientation,
    make_fidelities,
    make_mixture,
    sample_dirichlet,
    Trace,
    target_fidelity,
)

logger = logging.getLogger(__name__)


class TableError(ValueError):
    """Invalid run table or manifest."""


# ---------------------------------------------------------------------------
# run tables


@dataclass(frozen=True)
class MetricTarget:
    name: str
    columns: tuple
    orientation: Orientation


@dataclass(frozen=True)
class RunTable:
    """Precomputed (mixture, fidelity) -> metrics lookup standing in for training runs."""

    domains: tuple
    fidelities: tuple
    mixtures: np.ndarray
    fidelity_ids: np.ndarray
    metrics: pd.DataFrame
    orientations: Mapping
    targets: Mapping
    times: Optional[np.ndarray] = None
    expected_counts: Mapping = field(default_factory=dict)
    drop_missing: bool = False

    def __post_init__(self):
        if self.mixtures.shape[1] != len(self.domains):
            raise TableError("mixture width does not match the domain list")
        for t in self.targets.values():
            missing = [c for c in t.columns if c not in self.metrics.columns]
            if missing:
                raise TableError(f"target {t.name!r} references unknown metric columns {missing}")

    @property
    def d(self) -> int:
        return len(self.domains)

    @property
    def target_fidelity(self) -> FidelitySpec:
        return target_fidelity(self.fidelities)

    def counts(self) -> dict:
        return {f.id: int(np.sum(self.fidelity_ids == f.id)) for f in self.fidelities}

    def check_counts(self) -> list:
        """Compare per-fidelity row counts with the expected ones; mismatches are logged, not fatal."""
        problems = []
        got = self.counts()
        for fid, want in self.expected_counts.items():
            if got.get(fid) != int(want):
                problems.append(f"fidelity {fid}: expected {want} rows, found {got.get(fid, 0)}")
        for p in problems:
            logger.warning(p)
        return problems

    def target_values(self, target: str) -> np.ndarray:
        """Internal (maximization) scores of a metric target: oriented unweighted column mean."""
        t = self._target(target)
        raw = self.metrics[list(t.columns)].to_numpy(dtype=float).mean(axis=1)
        return t.orientation.to_score(raw)

    def _target(self, target: str) -> MetricTarget:
        if target in self.targets:
            return self.targets[target]
        if target in self.metrics.columns:
            return MetricTarget(target, (target,), self.orientations[target])
        raise TableError(f"unknown metric target {target!r}; have {sorted(self.targets)}")

    def problem(self, target: str, fidelities: Optional[Sequence[str]] = None) -> ReplayProblem:
        y = self.target_values(target)
        keep = np.isfinite(y)
        if not keep.all():
            if not self.drop_missing:
                bad = np.flatnonzero(~keep)[:10].tolist()
                raise TableError(f"target {target!r} has missing values in rows {bad}")
            logger.info("target %s: dropping %d rows with missing metrics", target, int((~keep).sum()))
        if fidelities is not None:
            keep &= np.isin(self.fidelity_ids, list(fidelities) + [self.target_fidelity.id])
        return ReplayProblem.from_rows(
            self.fidelities, self.mixtures[keep], self.fidelity_ids[keep], y[keep], name=target
        )


def _parse_orientations(spec) -> dict:
    if isinstance(spec, Mapping):
        return {str(k): Orientation.parse(v) for k, v in spec.items()}
    return {str(c): Orientation.HIGHER for c in spec}


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        manifest = yaml.safe_load(fh) or {}
    if not isinstance(manifest, Mapping):
        raise TableError(f"manifest {path} must be a mapping")
    return dict(manifest)


def _fidelity_costs(manifest, fid_labels, params, times_by_fid):
    source = manifest.get("cost_source", "explicit")
    fids = manifest["fidelities"]
    if source == "explicit":
        try:
            return [float(fids[k]["cost"]) for k in fid_labels]
        except (KeyError, TypeError):
            raise TableError("cost_source 'explicit' needs a cost for every fidelity") from None
    if source == "parameters":
        unit = float(manifest.get("cost_unit", max(params)))
        return [p / unit for p in params]
    if source == "time":
        costs = []
        for k in fid_labels:
            t = times_by_fid.get(k)
            if t is None or not np.isfinite(t).any():
                raise TableError(f"cost_source 'time' but no wall-clock times for fidelity {k!r}")
            costs.append(float(np.nanmean(t)))
        return costs
    raise TableError(f"unknown cost_source {source!r}")


def load_run_table(path, manifest) -> RunTable:
    """Read a comma-separated run table described by a manifest (mapping or YAML path).

    Manifest keys: ``mixture_columns``, ``fidelity_column``, ``fidelities``
    (label -> {parameters, cost}), ``metric_columns`` (column -> orientation),
    optional ``targets`` (name -> columns), ``time_column``, ``cost_source``
    (explicit | parameters | time), ``expected_counts`` and ``drop_missing``.
    """
    if not isinstance(manifest, Mapping):
        manifest = load_manifest(manifest)
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    required = ["mixture_columns", "fidelity_column", "fidelities", "metric_columns"]
    absent = [k for k in required if k not in manifest]
    if absent:
        raise TableError(f"manifest lacks keys {absent}")

    mix_cols = [str(c) for c in manifest["mixture_columns"]]
    orientations = _parse_orientations(manifest["metric_columns"])
    fid_col = str(manifest["fidelity_column"])
    time_col = manifest.get("time_column")
    wanted = mix_cols + [fid_col] + list(orientations) + ([time_col] if time_col else [])
    missing = [c for c in wanted if c not in df.columns]
    if missing:
        raise TableError(f"table {path} lacks columns {missing}")

    fid_map = {str(k): v for k, v in manifest["fidelities"].items()}
    labels = df[fid_col].astype(str).to_numpy()
    unknown = sorted(set(labels) - set(fid_map))
    if unknown:
        raise TableError(f"unknown fidelity labels {unknown}; manifest declares {sorted(fid_map)}")

    mixtures = df[mix_cols].to_numpy(dtype=float)
    bad_rows = np.flatnonzero(~np.isfinite(mixtures).all(1) | (mixtures < 0).any(1) | (mixtures.sum(1) <= 0))
    if bad_rows.size:
        raise TableError(f"invalid mixture weights in rows {bad_rows[:10].tolist()}")
    mixtures = np.array([make_mixture(row).as_array() for row in mixtures])

    drop_missing = bool(manifest.get("drop_missing", False))
    metrics = df[list(orientations)].apply(pd.to_numeric, errors="coerce")
    nan_cells = metrics.isna()
    if nan_cells.to_numpy().any() and not drop_missing:
        offenders = {c: np.flatnonzero(nan_cells[c].to_numpy())[:5].tolist() for c in metrics.columns if nan_cells[c].any()}
        raise TableError(f"NaN metric values (column -> rows): {offenders}")

    labels_present = [k for k in fid_map]
    params = []
    for k in labels_present:
        entry = fid_map[k]
        p = entry.get("parameters") if isinstance(entry, Mapping) else entry
        if p is None:
            raise TableError(f"fidelity {k!r} lacks a parameter count")
        params.append(int(float(p)))
    times = df[time_col].to_numpy(dtype=float) if time_col else None
    times_by_fid = {k: times[labels == k] for k in labels_present} if times is not None else {}
    costs = _fidelity_costs(manifest, labels_present, params, times_by_fid)
    fidelities = make_fidelities(labels_present, params, costs)

    targets = {}
    for name, cols in (manifest.get("targets") or {}).items():
        cols = [str(c) for c in cols]
        unknown_cols = [c for c in cols if c not in orientations]
        if unknown_cols:
            raise TableError(f"target {name!r} references unknown metric columns {unknown_cols}")
        orients = {orientations[c] for c in cols}
        if len(orients) != 1:
            raise TableError(f"target {name!r} mixes metric orientations")
        targets[str(name)] = MetricTarget(str(name), tuple(cols), orients.pop())

    table = RunTable(
        domains=tuple(mix_cols),
        fidelities=fidelities,
        mixtures=mixtures,
        fidelity_ids=labels,
        metrics=metrics.reset_index(drop=True),
        orientations=orientations,
        targets=targets,
        times=times,
        expected_counts={str(k): int(v) for k, v in (manifest.get("expected_counts") or {}).items()},
        drop_missing=drop_missing,
    )
    table.check_counts()
    return table


def write_run_table(table: RunTable, out_dir, stem: str = "table") -> tuple:
    """Write ``table`` as a CSV plus a manifest that :func:`load_run_table` reads back; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fid_col = "fidelity"
    df = pd.DataFrame(table.mixtures, columns=list(table.domains))
    df[fid_col] = table.fidelity_ids
    for col in table.metrics.columns:
        df[col] = table.metrics[col].to_numpy()
    csv_path = out / f"{stem}.csv"
    df.to_csv(csv_path, index=False, float_format="%.17g", encoding="utf-8")
    manifest = {
        "mixture_columns": list(table.domains),
        "fidelity_column": fid_col,
        "fidelities": {f.id: {"parameters": int(f.parameter_count), "cost": float(f.cost)} for f in table.fidelities},
        "metric_columns": {c: table.orientations[c].value for c in table.metrics.columns},
        "targets": {t.name: list(t.columns) for t in table.targets.values()},
        "cost_source": "explicit",
        "expected_counts": dict(table.expected_counts),
    }
    man_path = out / f"{stem}.manifest.yaml"
    with open(man_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return csv_path, man_path


# ---------------------------------------------------------------------------
# synthetic tables


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic multi-fidelity table.

    Fidelity ``k`` observes ``rho_k * g + (1 - rho_k) * h_k + noise`` where
    ``g`` is the target objective and ``h_k`` an independent draw of the same
    quadratic-plus-linear family with a random sign. The target (largest) fidelity has ``rho = 1``.
    ``counts`` are listed from the smallest model up; with ``nested`` each
    larger model's mixtures are a subset of the smaller ones'.
    """

    d: int = 4
    counts: tuple = (64, 32, 16)
    parameter_counts: tuple = (1e8, 1e9, 1e10)
    costs: tuple = (1.0, 4.0, 16.0)
    rho: object = 0.9
    noise: float = 0.0
    alpha: object = 1.0
    curvature: float = 4.0
    nested: bool = True
    fidelity_ids: Optional[tuple] = None
    metric: str = "score"

    def validate(self):
        m = len(self.counts)
        if self.d < 2:
            raise TableError("synthetic table needs d >= 2")
        if m < 1 or len(self.parameter_counts) != m or len(self.costs) != m:
            raise TableError("counts, parameter_counts and costs must have equal nonzero length")
        if any(int(c) < 1 for c in self.counts):
            raise TableError("every fidelity needs at least one candidate")
        if self.nested and any(b > a for a, b in zip(self.counts, self.counts[1:])):
            raise TableError("nested tables need non-increasing counts from small to large models")
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if rho.size not in (1, m - 1, m) or np.any(rho < 0) or np.any(rho > 1):
            raise TableError("rho must lie in [0, 1], given once or per fidelity")
        if self.noise < 0:
            raise TableError("noise must be nonnegative")
        if self.fidelity_ids is not None and len(self.fidelity_ids) != m:
            raise TableError("fidelity_ids length mismatch")

    def rhos(self) -> np.ndarray:
        m = len(self.counts)
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if rho.size == 1:
            rho = np.full(m - 1, rho[0])
        return np.append(rho[: m - 1], 1.0)


@dataclass(frozen=True)
class QuadraticLaw:
    """``linear . p - curvature * |p - center|^2`` on the simplex."""

    linear: np.ndarray
    center: np.ndarray
    curvature: float

    def __call__(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        return P @ self.linear - self.curvature * ((P - self.center) ** 2).sum(1)

    @classmethod
    def draw(cls, d, curvature, rng):
        return cls(rng.normal(0.0, 0.5, d), rng.dirichlet(np.ones(d)), curvature)


def make_synthetic_table(spec: SyntheticSpec = SyntheticSpec(), rng_seed=None) -> RunTable:
    spec.validate()
    rng = np.random.default_rng(rng_seed)
    m = len(spec.counts)
    ids = list(spec.fidelity_ids or [f"f{k}" for k in range(m)])
    alpha = np.broadcast_to(np.asarray(spec.alpha, dtype=float), (spec.d,))
    g = QuadraticLaw.draw(spec.d, spec.curvature, rng)
    # random signs keep the distractors uncorrelated with g in expectation
    # (every draw shares the -curvature * |p|^2 term)
    others = [QuadraticLaw.draw(spec.d, spec.curvature, rng) for _ in range(m - 1)]
    signs = rng.choice([-1.0, 1.0], size=m - 1)
    rhos = spec.rhos()

    if spec.nested:
        pool = sample_dirichlet(alpha, rng, size=int(spec.counts[0]))
        per_fid = [pool[: int(c)] for c in spec.counts]
    else:
        per_fid = [sample_dirichlet(alpha, rng, size=int(c)) for c in spec.counts]

    rows, labels, values = [], [], []
    for k, P in enumerate(per_fid):
        y = g(P)
        if k < m - 1:
            y = rhos[k] * y + (1.0 - rhos[k]) * signs[k] * others[k](P)
        if spec.noise > 0:
            y = y + rng.normal(0.0, spec.noise, len(P))
        rows.append(P)
        labels += [ids[k]] * len(P)
        values.append(y)
    mixtures = np.vstack(rows)
    domains = tuple(f"domain_{i}" for i in range(spec.d))
    fidelities = make_fidelities(ids, [int(p) for p in spec.parameter_counts], spec.costs)
    metrics = pd.DataFrame({spec.metric: np.concatenate(values)})
    return RunTable(
        domains=domains,
        fidelities=fidelities,
        mixtures=mixtures,
        fidelity_ids=np.array(labels),
        metrics=metrics,
        orientations={spec.metric: Orientation.HIGHER},
        targets={spec.metric: MetricTarget(spec.metric, (spec.metric,), Orientation.HIGHER)},
        expected_counts={ids[k]: int(c) for k, c in enumerate(spec.counts)},
    )


# ---------------------------------------------------------------------------
# multi-seed simulation

MODEL_METHODS = ("bo", "zeroshot", "mfbo")
TRACE_COLUMNS = (
    "method", "seed", "step", "fidelity_id", "cost", "cumulative_cost", "observed_score",
    "recommended_mixture", "realized_target_score", "cumulative_best_target_score",
)
AGGREGATE_COLUMNS = ("method", "target", "cost", "mean_score", "std_score", "n_seeds")
AGGREGATE_FILE = "aggregate.csv"


@dataclass(frozen=True)
class AggregateCurve:
    """Across-seed mean/std of a step-function score on a shared cost grid."""

    method: str
    target: str
    cost: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_seeds: np.ndarray


@dataclass
class TraceSet:
    traces: dict = field(default_factory=dict)  # (method, target) -> [Trace]
    curves: dict = field(default_factory=dict)  # (method, target) -> AggregateCurve

    def keys(self):
        return list(self.traces)

    def __getitem__(self, key):
        return self.traces[key]


def sub_seed(global_seed: int, seed_index: int) -> int:
    """Counter-based split of the global seed.

    The sub-seed ignores the method name, so every method sees the same
    initial designs for a given seed index and adding a method leaves the
    others' traces untouched.
    """
    return int(np.random.SeedSequence([int(global_seed), int(seed_index)]).generate_state(1)[0])


def run_method(method: str, problem: ReplayProblem, config: LoopConfig) -> Trace:
    """Dispatch one replay by method name (bo, zeroshot, mfbo or a baseline)."""
    from .baselines import METHODS as BASELINES, run_baseline

    m = method.lower()
    if m == "bo":
        return run_bo(problem, replace(config, mode="BO"), m)
    if m == "zeroshot":
        if config.query_fidelity in (None, problem.target):
            raise ValueError("zero-shot transfer needs a query fidelity below the target")
        return run_bo(problem, replace(config, mode="BO"), m)
    if m == "mfbo":
        return run_mfbo(problem, replace(config, mode="MFBO", query_fidelity=None), m)
    if m in BASELINES:
        return run_baseline(m, problem, config)
    raise ValueError(f"unknown method {method!r}; choose from {MODEL_METHODS + BASELINES}")


def _as_problem(source, target, fidelities=None) -> ReplayProblem:
    if isinstance(source, ReplayProblem):
        return source
    return source.problem(target, fidelities)


def _run_cell(args):
    method, problem, config = args
    return run_method(method, problem, config)


def simulate(
    methods: Sequence[str],
    table,
    targets: Optional[Sequence[str]] = None,
    cost_model: Optional[Mapping] = None,
    budget: Optional[Budget] = None,
    seeds: int = 5,
    global_seed: int = 0,
    query_fidelity: Optional[str] = None,
    config: Optional[LoopConfig] = None,
    n_jobs: int = 1,
) -> TraceSet:
    """Replay every (method, target, seed) cell and aggregate cumulative-best curves.

    ``table`` is a :class:`RunTable` or a single :class:`ReplayProblem`.
    ``cost_model`` overrides per-fidelity costs by id. ``query_fidelity``
    applies to BO, zero-shot and the baselines; MFBO always uses every fidelity.
    """
    if not methods:
        raise ValueError("need at least one method")
    if seeds < 1:
        raise ValueError("need at least one seed")
    if isinstance(table, ReplayProblem):
        targets = [table.name] if targets is None else list(targets)
    else:
        targets = list(targets or table.targets or table.metrics.columns[:1])
    base = config or LoopConfig()
    if budget is not None:
        base = replace(base, budget=budget)
    if query_fidelity is not None:
        base = replace(base, query_fidelity=query_fidelity)

    jobs, keys = [], []
    for target in targets:
        problem = _as_problem(table, target)
        if cost_model:
            problem = problem.with_fidelity_costs(cost_model)
        for method in methods:
            for k in range(seeds):
                jobs.append((method, problem, replace(base, seed=sub_seed(global_seed, k))))
                keys.append((method, target))
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    out = TraceSet()
    for key, trace in zip(keys, results):
        out.traces.setdefault(key, []).append(trace)
    for (method, target), traces in out.traces.items():
        out.curves[(method, target)] = aggregate(traces, method, target)
    return out


def step_values(costs, values, grid) -> np.ndarray:
    """Evaluate a right-continuous step function (last value carried forward) on ``grid``; NaN before the first step."""
    costs = np.asarray(costs, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(costs, grid, side="right") - 1
    out = np.full(len(grid), np.nan)
    ok = idx >= 0
    out[ok] = values[idx[ok]]
    return out


def aggregate_series(series, method: str = "", target: str = "") -> AggregateCurve:
    """Aggregate ``[(cumulative_costs, scores), ...]`` on the union of cost breakpoints."""
    series = [(np.asarray(c, dtype=float), np.asarray(v, dtype=float)) for c, v in series if len(c)]
    if not series:
        raise ValueError("nothing to aggregate")
    grid = np.unique(np.concatenate([c for c, _ in series]))
    M = np.vstack([step_values(c, v, grid) for c, v in series])
    present = np.isfinite(M)
    n = present.sum(0)
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(M, axis=0)
        std = np.nanstd(M, axis=0)
    return AggregateCurve(method, target, grid, mean, std, n)


def aggregate(traces, method: str = "", target: str = "", column: str = "cumulative_best_target_score") -> AggregateCurve:
    series = [(t.column("cumulative_cost"), t.column(column)) for t in traces]
    return aggregate_series(series, method, target)


def cost_to_optimum(trace: Trace, optimum: float, tol: float = 0.0) -> float:
    """Cumulative cost at which the realized recommendation first comes within ``tol`` of ``optimum``; inf if never."""
    best = trace.column("cumulative_best_target_score")
    hit = np.flatnonzero(best >= optimum - tol)
    return float(trace.column("cumulative_cost")[hit[0]]) if hit.size else float("inf")


def cost_to_best(trace: Trace) -> float:
    """Cumulative cost at which the trace first reaches its own final best recommendation."""
    best = trace.column("cumulative_best_target_score")
    return float(trace.column("cumulative_cost")[int(np.argmax(best >= best[-1]))])


def lowest_fidelity_share(trace: Trace, fidelity: str, fraction: float) -> float:
    """Share of queries at ``fidelity`` among those issued within the first ``fraction`` of the trace's total cost."""
    cum = trace.column("cumulative_cost")
    fids = np.array([r.fidelity for r in trace.records])
    early = cum <= fraction * cum[-1]
    if not early.any():
        early[0] = True
    return float(np.mean(fids[early] == fidelity))


# ---------------------------------------------------------------------------
# export / reload


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(name))


def trace_filename(method: str, target: str) -> str:
    return f"trace__{_safe(method)}__{_safe(target)}.csv"


def _fmt(x) -> str:
    return repr(float(x))


def trace_rows(trace: Trace):
    for r in trace.records:
        yield [
            trace.method, str(trace.seed), str(r.step), r.fidelity, _fmt(r.cost), _fmt(r.cumulative_cost),
            _fmt(r.observed_score), ";".join(_fmt(w) for w in r.recommended.weights),
            _fmt(r.realized_target_score), _fmt(r.cumulative_best_target_score),
        ]


def export_results(trace_set: TraceSet, out_dir) -> list:
    """Write one trace CSV per (method, target) plus the combined aggregate CSV; returns the paths."""
    if not trace_set.traces:
        raise ValueError("no traces to export")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    for (method, target), traces in sorted(trace_set.traces.items()):
        path = out / trace_filename(method, target)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for t in traces:
                w.writerows(trace_rows(t))
        written.append(path)
    path = out / AGGREGATE_FILE
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for key in sorted(trace_set.curves):
            c = trace_set.curves[key]
            for j in range(len(c.cost)):
                w.writerow([c.method, c.target, _fmt(c.cost[j]), _fmt(c.mean[j]), _fmt(c.std[j]), str(int(c.n_seeds[j]))])
    written.append(path)
    return written


@dataclass
class LoadedResults:
    traces: dict  # (method, target) -> DataFrame in trace-CSV schema
    curves: dict  # (method, target) -> AggregateCurve


def read_trace_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"method": str, "fidelity_id": str, "recommended_mixture": str},
                     encoding="utf-8", float_precision="round_trip")
    if tuple(df.columns) != TRACE_COLUMNS:
        raise TableError(f"{path}: header {list(df.columns)} does not match the trace schema")
    return df


def curve_from_frame(df: pd.DataFrame, method: str, target: str) -> AggregateCurve:
    series = [(g["cumulative_cost"].to_numpy(), g["cumulative_best_target_score"].to_numpy())
              for _, g in df.groupby("seed", sort=False)]
    return aggregate_series(series, method, target)


def load_results(out_dir) -> LoadedResults:
    """Read back the files written by :func:`export_results`."""
    out = Path(out_dir)
    agg = pd.read_csv(out / AGGREGATE_FILE, dtype={"method": str, "target": str}, encoding="utf-8",
                      float_precision="round_trip")
    if tuple(agg.columns) != AGGREGATE_COLUMNS:
        raise TableError(f"{out / AGGREGATE_FILE}: header does not match the aggregate schema")
    curves = {}
    for (method, target), g in agg.groupby(["method", "target"], sort=False):
        curves[(method, target)] = AggregateCurve(
            method, target, g["cost"].to_numpy(), g["mean_score"].to_numpy(),
            g["std_score"].to_numpy(), g["n_seeds"].to_numpy(dtype=int),
        )
    traces = {}
    for method, target in curves:
        path = out / trace_filename(method, target)
        if path.exists():
            traces[(method, target)] = read_trace_csv(path)
    return LoadedResults(traces, curves)


def compare_traces(paths, target: Optional[str] = None) -> dict:
    """Aggregate existing trace CSVs; returns ``{(method, target): AggregateCurve}``."""
    curves = {}
    for p in paths:
        df = read_trace_csv(p)
        tgt = target or Path(p).stem.split("__")[-1]
        for method, g in df.groupby("method", sort=False):
            curves[(method, tgt)] = curve_from_frame(g, method, tgt)
    return curves
