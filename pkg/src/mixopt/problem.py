"""Finite lookup problems that stand in for real training runs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

import numpy as np

from .types import FidelitySpec, MixtureWeights, make_mixture, target_fidelity

logger = logging.getLogger(__name__)

_KEY_DECIMALS = 12


class LookupMiss(KeyError):
    """A (mixture, fidelity) pair is not present in the lookup table."""


def mixture_key(weights) -> tuple:
    w = weights.as_array() if isinstance(weights, MixtureWeights) else np.asarray(weights, dtype=float)
    return tuple(np.round(w, _KEY_DECIMALS).tolist())


@dataclass(frozen=True)
class ReplayProblem:
    """Candidate mixtures and internal (maximization) scores per fidelity.

    Duplicate mixtures within one fidelity are merged by averaging their
    scores, so every ``(mixture, fidelity)`` pair is a single candidate.
    """

    fidelities: tuple
    mixtures: Mapping
    scores: Mapping
    target: str
    name: str = "score"

    def __post_init__(self):
        ids = [f.id for f in self.fidelities]
        if self.target not in ids:
            raise ValueError(f"target fidelity {self.target!r} not in {ids}")
        for fid in self.mixtures:
            if fid not in ids:
                raise ValueError(f"unknown fidelity {fid!r}")
            m, y = self.mixtures[fid], self.scores[fid]
            if m.ndim != 2 or m.shape[0] != y.shape[0]:
                raise ValueError(f"fidelity {fid!r}: mixtures and scores disagree in shape")
            if not np.all(np.isfinite(y)):
                raise ValueError(f"fidelity {fid!r}: non-finite scores")
        if self.target not in self.mixtures or len(self.mixtures[self.target]) == 0:
            raise ValueError("target fidelity has no candidates")
        index = {
            fid: {mixture_key(row): i for i, row in enumerate(self.mixtures[fid])}
            for fid in self.mixtures
        }
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_rows(cls, fidelities, mixtures, fidelity_ids, scores, target=None, name="score"):
        mixtures = np.asarray(mixtures, dtype=float)
        mixtures = mixtures / mixtures.sum(axis=1, keepdims=True)
        fidelity_ids = np.asarray([str(f) for f in fidelity_ids])
        scores = np.asarray(scores, dtype=float)
        target = target or target_fidelity(fidelities).id
        by_m, by_y = {}, {}
        for f in fidelities:
            sel = fidelity_ids == f.id
            if not sel.any():
                continue
            groups: dict = {}
            for row, y in zip(mixtures[sel], scores[sel]):
                groups.setdefault(mixture_key(row), []).append((row, y))
            dupes = sum(len(v) - 1 for v in groups.values())
            if dupes:
                logger.warning("fidelity %s: merged %d duplicate mixture rows", f.id, dupes)
            by_m[f.id] = np.array([v[0][0] for v in groups.values()])
            by_y[f.id] = np.array([np.mean([y for _, y in v]) for v in groups.values()])
        return cls(tuple(fidelities), by_m, by_y, target, name)

    @classmethod
    def from_oracle(cls, fn: Callable, mixtures_by_fidelity: Mapping, fidelities, target=None, name="score"):
        """Evaluate ``fn(mixture_array, fidelity_spec) -> score`` on every candidate up front."""
        fmap = {f.id: f for f in fidelities}
        mix, ys, fids = [], [], []
        for fid, rows in mixtures_by_fidelity.items():
            for row in np.atleast_2d(rows):
                mix.append(row)
                ys.append(float(fn(np.asarray(row, dtype=float), fmap[fid])))
                fids.append(fid)
        return cls.from_rows(fidelities, mix, fids, ys, target, name)

    # -- lookups -----------------------------------------------------------

    def fidelity(self, fid: str) -> FidelitySpec:
        for f in self.fidelities:
            if f.id == fid:
                return f
        raise KeyError(f"unknown fidelity {fid!r}")

    @property
    def fidelity_map(self) -> dict:
        return {f.id: f for f in self.fidelities}

    @property
    def present_fidelities(self) -> list:
        return [f for f in self.fidelities if f.id in self.mixtures and len(self.mixtures[f.id])]

    @property
    def d(self) -> int:
        return self.mixtures[self.target].shape[1]

    def count(self, fid: str) -> int:
        return len(self.mixtures.get(fid, ()))

    def candidates(self, fid: str) -> list:
        return [make_mixture(row) for row in self.mixtures[fid]]

    def index_of(self, fid: str, mixture) -> int:
        try:
            return self._index[fid][mixture_key(mixture)]
        except KeyError:
            raise LookupMiss(f"no entry for mixture {mixture_key(mixture)} at fidelity {fid!r}") from None

    def lookup(self, fid: str, mixture) -> float:
        return float(self.scores[fid][self.index_of(fid, mixture)])

    def nearest_target(self, mixture):
        """Index of the target candidate matching ``mixture`` (or the nearest one) and a flag set when inexact."""
        try:
            return self.index_of(self.target, mixture), False
        except LookupMiss:
            w = mixture.as_array() if isinstance(mixture, MixtureWeights) else np.asarray(mixture, dtype=float)
            dist = np.linalg.norm(self.mixtures[self.target] - w, axis=1)
            return int(np.argmin(dist)), True

    def target_optimum(self):
        """``(index, score)`` of the best target-fidelity candidate."""
        y = self.scores[self.target]
        i = int(np.argmax(y))
        return i, float(y[i])

    def restrict(self, fidelity_ids) -> "ReplayProblem":
        keep = set(fidelity_ids) | {self.target}
        return ReplayProblem(
            self.fidelities,
            {k: v for k, v in self.mixtures.items() if k in keep},
            {k: v for k, v in self.scores.items() if k in keep},
            self.target,
            self.name,
        )

    def with_fidelity_costs(self, costs: Mapping) -> "ReplayProblem":
        fids = tuple(replace(f, cost=float(costs.get(f.id, f.cost))) for f in self.fidelities)
        return ReplayProblem(fids, self.mixtures, self.scores, self.target, self.name)

    def score_range(self, fid: Optional[str] = None) -> float:
        y = self.scores[fid or self.target]
        return float(y.max() - y.min())
