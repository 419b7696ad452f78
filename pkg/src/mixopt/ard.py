"""Domain importance from ARD lengthscales: one GP per evaluation benchmark."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .gp import FitConfig, FitResult, fit_hyperparameters_detailed, standardization

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 4
SELECTION_RULES = ("bic", "none")


@dataclass(frozen=True)
class ARDFit:
    lengthscales: np.ndarray
    lml: float
    shared_lml: float
    shared: FitResult
    ard: FitResult
    selected: str = "ard"

    @property
    def importance(self) -> np.ndarray:
        return 1.0 / self.lengthscales


def fit_ard_gp(mixtures, scores, rng_seed=None, config: FitConfig = FitConfig(), selection: str = "bic") -> ARDFit:
    """Fit a zero-mean single-fidelity GP with one lengthscale per mixture dimension.

    Scores are standardized first. A shared-lengthscale fit runs first and
    seeds the ARD restarts, so the ARD likelihood never falls below it.

    With ``selection="bic"`` the per-dimension lengthscales are kept only when
    their likelihood gain over the shared fit exceeds ``0.5 (d - 1) log n``;
    otherwise the shared lengthscale is reported for every dimension, since
    the data cannot tell the dimensions apart.
    """
    if selection not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {selection!r}; choose from {SELECTION_RULES}")
    X = np.atleast_2d(np.asarray(mixtures, dtype=float))
    y = np.asarray(scores, dtype=float).ravel()
    n, d = X.shape
    if n != y.size:
        raise ValueError("mixtures and scores differ in length")
    if n < MIN_OBSERVATIONS:
        raise ValueError(f"ARD fit needs at least {MIN_OBSERVATIONS} observations, got {n}")
    if n < d:
        logger.warning("ARD fit with n=%d < d=%d; lengthscales are weakly identified", n, d)
    if not np.all(np.isfinite(y)):
        raise ValueError("scores contain non-finite values")
    offset, scale = standardization(y)
    z = (y - offset) / scale
    s = np.ones(n)
    root = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    seeds = root.spawn(2)
    shared = fit_hyperparameters_detailed(X, s, z, replace(config, ard=False), seeds[0])
    ard = fit_hyperparameters_detailed(X, s, z, replace(config, ard=True), seeds[1], inits=(shared.hyper,))
    penalty = 0.5 * (d - 1) * np.log(n) if selection == "bic" else 0.0
    if ard.lml - shared.lml > penalty:
        return ARDFit(np.asarray(ard.hyper.lengthscales(d), dtype=float), ard.lml, shared.lml, shared, ard, "ard")
    logger.info("ARD gain %.3g below penalty %.3g; reporting the shared lengthscale", ard.lml - shared.lml, penalty)
    ls = np.asarray(shared.hyper.lengthscales(d), dtype=float)
    return ARDFit(ls, shared.lml, shared.lml, shared, ard, "shared")


@dataclass(frozen=True)
class ImportanceMatrix:
    """Rows are training domains, columns evaluation benchmarks; each column scaled to max 1."""

    domains: tuple
    benchmarks: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.domains), len(self.benchmarks)):
            raise ValueError(f"matrix shape {v.shape} does not match {len(self.domains)} x {len(self.benchmarks)}")
        if np.any(v < 0) or np.any(v > 1 + 1e-12):
            raise ValueError("importance entries must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_lengthscales(cls, domains, benchmarks, lengthscales) -> "ImportanceMatrix":
        inv = 1.0 / np.asarray(lengthscales, dtype=float)
        return cls(tuple(domains), tuple(benchmarks), inv / inv.max(axis=0, keepdims=True))

    def column(self, benchmark: str) -> np.ndarray:
        return self.values[:, self.benchmarks.index(benchmark)]

    def ranking(self, benchmark: str) -> list:
        """Domains ordered from most to least important for ``benchmark``."""
        col = self.column(benchmark)
        return [self.domains[i] for i in np.argsort(-col, kind="stable")]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", *self.benchmarks])
            for name, row in zip(self.domains, self.values):
                w.writerow([name, *(repr(float(x)) for x in row)])

    @classmethod
    def read_csv(cls, path) -> "ImportanceMatrix":
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "domain":
            raise ValueError(f"{path} is not an importance matrix CSV")
        header, body = rows[0], rows[1:]
        return cls(
            tuple(r[0] for r in body),
            tuple(header[1:]),
            np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), len(header) - 1),
        )


def importance_matrix(
    table,
    fidelity: str,
    columns: Optional[Sequence[str]] = None,
    rng_seed=None,
    config: FitConfig = FitConfig(),
    selection: str = "bic",
) -> ImportanceMatrix:
    """One ARD fit per benchmark column on the rows of ``fidelity`` of a run table."""
    ids = [f.id for f in table.fidelities]
    if fidelity not in ids:
        raise ValueError(f"unknown fidelity {fidelity!r}; table has {ids}")
    columns = list(columns) if columns else list(table.metrics.columns)
    rows = table.fidelity_ids == fidelity
    X = table.mixtures[rows]
    ls = []
    for k, col in enumerate(columns):
        if col not in table.metrics.columns and col not in table.targets:
            raise ValueError(f"unknown benchmark column {col!r}")
        y = table.target_values(col)[rows]
        keep = np.isfinite(y)
        seed = np.random.SeedSequence([0 if rng_seed is None else int(rng_seed), k])
        logger.info("ARD fit for %s on %d rows", col, int(keep.sum()))
        ls.append(fit_ard_gp(X[keep], y[keep], seed, config, selection).lengthscales)
    return ImportanceMatrix.from_lengthscales(table.domains, columns, np.column_stack(ls))
