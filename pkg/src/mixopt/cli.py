"""Command-line front end: ingest, run, compare, importance, synth.

Every command accepts ``--config FILE`` (YAML); explicit flags override its keys.
Set ``MIXOPT_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import bench
from .ard import importance_matrix
from .gp import FitConfig
from .loop import LoopConfig
from .types import Budget

logger = logging.getLogger("mixopt")

MODES = ("bo", "mfbo", "zeroshot")


class CLIError(Exception):
    """User-facing failure; reported on stderr with a nonzero exit."""


@dataclass
class CampaignConfig:
    table: Optional[str] = None
    manifest: Optional[str] = None
    methods: list = field(default_factory=list)
    mode: str = "bo"
    query_fidelity: Optional[str] = None
    target: list = field(default_factory=list)
    budget: float = float("inf")
    steps: int = 100
    seeds: int = 5
    seed: int = 0
    out: str = "results"
    restarts: int = 10
    n_max_samples: int = 10
    sampler: str = "gumbel"
    jobs: int = 1

    def validate(self):
        for key in ("table", "manifest"):
            path = getattr(self, key)
            if path is None:
                raise CLIError(f"--{key} is required")
            if not Path(path).exists():
                raise CLIError(f"{key} file not found: {path}")
        if self.mode not in MODES:
            raise CLIError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not self.methods:
            raise CLIError("no methods selected")
        if self.mode == "zeroshot" and not self.query_fidelity:
            raise CLIError("zero-shot mode needs --query-fidelity")
        if self.seeds < 1 or self.steps < 1:
            raise CLIError("--seeds and --steps must be positive")
        if not self.budget > 0:
            raise CLIError("--budget must be positive")


def _split(value):
    if value is None:
        return []
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise CLIError(f"config {path} must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def merged(args, keys) -> dict:
    """Config-file values overridden by flags that were given explicitly."""
    out = read_config(getattr(args, "config", None))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def campaign_from_args(args) -> CampaignConfig:
    keys = [f for f in CampaignConfig.__dataclass_fields__]
    values = merged(args, keys)
    unknown = set(values) - set(keys)
    if unknown:
        raise CLIError(f"unknown config keys {sorted(unknown)}")
    mode = str(values.get("mode", "bo")).lower().replace("-", "")
    values["mode"] = mode
    values["methods"] = _split(values.get("methods")) or [mode]
    values["target"] = _split(values.get("target"))
    values["budget"] = float(values.get("budget", float("inf")))
    for k in ("steps", "seeds", "seed", "restarts", "n_max_samples", "jobs"):
        if k in values:
            values[k] = int(values[k])
    cfg = CampaignConfig(**values)
    cfg.validate()
    return cfg


def _load_table(table, manifest):
    try:
        return bench.load_run_table(table, manifest)
    except FileNotFoundError as exc:
        raise CLIError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    values = merged(args, ["table", "manifest"])
    if not values.get("table") or not values.get("manifest"):
        raise CLIError("ingest needs --table and --manifest")
    t = _load_table(values["table"], values["manifest"])
    print(f"domains ({t.d}): {', '.join(t.domains)}")
    print(f"fidelities ({len(t.fidelities)}):")
    counts = t.counts()
    for f in t.fidelities:
        print(f"  {f.id}: parameters={f.parameter_count} scale={f.scale:.6g} cost={f.cost:.6g} rows={counts[f.id]}")
    print(f"metrics ({len(t.metrics.columns)}):")
    for c in t.metrics.columns:
        col = t.metrics[c]
        print(f"  {c} [{t.orientations[c].value}]: mean={col.mean():.6g} min={col.min():.6g} max={col.max():.6g} missing={int(col.isna().sum())}")
    if t.targets:
        print("targets: " + "; ".join(f"{k}=({', '.join(v.columns)})" for k, v in t.targets.items()))
    for problem in t.check_counts():
        print(f"warning: {problem}")
    return 0


def cmd_run(args) -> int:
    cfg = campaign_from_args(args)
    table = _load_table(cfg.table, cfg.manifest)
    targets = cfg.target or list(table.targets) or list(table.metrics.columns[:1])
    if cfg.mode == "mfbo" or "mfbo" in cfg.methods:
        present = {str(f) for f in np.unique(table.fidelity_ids)}
        if len(present) < 2:
            raise CLIError(f"MFBO needs at least 2 fidelities; the table has {sorted(present)}")
    if cfg.query_fidelity and cfg.query_fidelity not in {f.id for f in table.fidelities}:
        raise CLIError(f"unknown query fidelity {cfg.query_fidelity!r}")
    loop = LoopConfig(
        budget=Budget(cfg.budget, cfg.steps),
        fit=FitConfig(restarts=cfg.restarts),
        n_max_samples=cfg.n_max_samples,
        max_value_sampler=cfg.sampler,
    )
    try:
        result = bench.simulate(
            cfg.methods, table, targets, budget=loop.budget, seeds=cfg.seeds, global_seed=cfg.seed,
            query_fidelity=cfg.query_fidelity, config=loop, n_jobs=cfg.jobs,
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    paths = bench.export_results(result, cfg.out)
    for (method, target), traces in result.traces.items():
        finals = [t.records[-1].realized_target_score for t in traces if t.records]
        best = [t.records[-1].cumulative_best_target_score for t in traces if t.records]
        rec = traces[0].final_recommendation
        mix = "none" if rec is None else "[" + ", ".join(f"{w:.4f}" for w in rec.weights) + "]"
        print(f"{method} / {target}: final recommendation {mix} realized {np.mean(finals):.6g} "
              f"(best {np.mean(best):.6g}, {len(traces)} seeds, cost {np.mean([t.total_cost for t in traces]):.6g})")
    print(f"wrote {len(paths)} files to {cfg.out}")
    return 0


def cmd_compare(args) -> int:
    values = merged(args, ["traces", "target", "out"])
    paths = _split(values.get("traces"))
    if not paths:
        raise CLIError("compare needs trace CSV files")
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        raise CLIError(f"trace files not found: {missing}")
    curves = bench.compare_traces(paths, values.get("target"))
    out = Path(values.get("out") or "compare")
    out.mkdir(parents=True, exist_ok=True)
    dest = out / bench.AGGREGATE_FILE
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(bench.AGGREGATE_COLUMNS)
        for key in sorted(curves):
            c = curves[key]
            for j in range(len(c.cost)):
                w.writerow([c.method, c.target, repr(float(c.cost[j])), repr(float(c.mean[j])),
                            repr(float(c.std[j])), str(int(c.n_seeds[j]))])
    for (method, target), c in sorted(curves.items()):
        print(f"{method} / {target}: final mean {c.mean[-1]:.6g} at cost {c.cost[-1]:.6g} ({int(c.n_seeds[-1])} seeds)")
    print(f"wrote {dest}")
    return 0


def cmd_importance(args) -> int:
    values = merged(args, ["table", "manifest", "fidelity", "target", "out", "seed", "restarts"])
    for key in ("table", "manifest", "fidelity"):
        if not values.get(key):
            raise CLIError(f"importance needs --{key}")
    table = _load_table(values["table"], values["manifest"])
    ids = [f.id for f in table.fidelities]
    if values["fidelity"] not in ids:
        raise CLIError(f"unknown fidelity {values['fidelity']!r}; table has {ids}")
    try:
        m = importance_matrix(
            table, values["fidelity"], _split(values.get("target")) or None,
            int(values.get("seed", 0)), FitConfig(restarts=int(values.get("restarts", 10))),
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    out = Path(values.get("out") or "importance.csv")
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"importance_{values['fidelity']}.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    m.to_csv(out)
    for b in m.benchmarks:
        print(f"{b}: top domains {', '.join(m.ranking(b)[:3])}")
    print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    values = merged(args, ["d", "counts", "rho", "noise", "costs", "parameter_counts", "seed", "out", "nested"])
    spec_keys = set(bench.SyntheticSpec.__dataclass_fields__)
    kw = {k: v for k, v in values.items() if k in spec_keys}
    for k in ("counts", "costs", "parameter_counts"):
        if k in kw:
            kw[k] = tuple(float(x) if k != "counts" else int(x) for x in _split(kw[k]))
    if "rho" in kw and isinstance(kw["rho"], str):
        r = [float(x) for x in _split(kw["rho"])]
        kw["rho"] = r[0] if len(r) == 1 else tuple(r)
    spec = replace(bench.SyntheticSpec(), **kw)
    try:
        table = bench.make_synthetic_table(spec, int(values.get("seed", 0)))
    except bench.TableError as exc:
        raise CLIError(str(exc)) from None
    csv_path, man_path = bench.write_run_table(table, values.get("out") or "synthetic")
    p = table.problem(spec.metric)
    i, best = p.target_optimum()
    print(f"synthetic table: d={spec.d} counts={dict(table.counts())}")
    print(f"target optimum {best:.6g} at [{', '.join(f'{w:.4f}' for w in p.mixtures[p.target][i])}]")
    print(f"wrote {csv_path} and {man_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixopt", description="Multi-fidelity data-mixture optimization replays.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML file with default values for the flags")
        p.add_argument("--table", help="run table CSV")
        p.add_argument("--manifest", help="manifest YAML describing the table")
        return p

    p = common(sub.add_parser("ingest", help="validate a run table and summarize it"))
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("run", help="replay optimization methods over seeds"))
    p.add_argument("--methods", help="comma-separated: bo, mfbo, zeroshot, regmix, dml, svm, random")
    p.add_argument("--mode", help="bo | mfbo | zeroshot (default method when --methods is absent)")
    p.add_argument("--query-fidelity", dest="query_fidelity")
    p.add_argument("--target", help="metric target(s), comma-separated")
    p.add_argument("--budget", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--out")
    p.add_argument("--restarts", type=int, help="hyperparameter restarts per fit")
    p.add_argument("--sampler", help="max-value sampler: gumbel | posterior-grid")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="aggregate existing trace CSVs")
    p.add_argument("--config")
    p.add_argument("traces", nargs="*", default=None)
    p.add_argument("--target")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("importance", help="ARD domain-importance matrix"))
    p.add_argument("--fidelity")
    p.add_argument("--target", help="benchmark columns or targets, comma-separated")
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("synth", help="write a synthetic multi-fidelity table and manifest")
    p.add_argument("--config")
    p.add_argument("--d", type=int)
    p.add_argument("--counts", help="candidates per fidelity, smallest model first")
    p.add_argument("--costs")
    p.add_argument("--parameter-counts", dest="parameter_counts")
    p.add_argument("--rho")
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return ap


def configure_logging():
    level = os.environ.get("MIXOPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, bench.TableError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
