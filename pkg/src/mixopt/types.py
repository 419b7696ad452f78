"""Shared domain types: simplex mixtures, fidelity levels, observations, budgets and traces."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-6


class Orientation(str, enum.Enum):
    HIGHER = "higher"
    LOWER = "lower"

    @classmethod
    def parse(cls, value) -> "Orientation":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "higher": cls.HIGHER, "higher-is-better": cls.HIGHER, "max": cls.HIGHER,
            "lower": cls.LOWER, "lower-is-better": cls.LOWER, "min": cls.LOWER,
        }
        if key not in aliases:
            raise ValueError(f"unknown metric orientation {value!r}")
        return aliases[key]

    def to_score(self, raw):
        """Map a raw metric value to the internal maximization orientation."""
        return raw if self is Orientation.HIGHER else -raw


@dataclass(frozen=True, order=True)
class MixtureWeights:
    """A point on the probability simplex. Build with :func:`make_mixture`."""

    weights: tuple

    @property
    def d(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def __len__(self):
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)


def make_mixture(weights) -> MixtureWeights:
    """Validate a nonnegative vector and renormalize it onto the simplex.

    Raises ``ValueError`` for negative entries, an all-zero vector or fewer
    than two components.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if w.size < 2:
        raise ValueError(f"mixture needs at least 2 components, got {w.size}")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"mixture has non-finite entries: {w.tolist()}")
    if np.any(w < 0):
        bad = np.flatnonzero(w < 0).tolist()
        raise ValueError(f"mixture has negative entries at positions {bad}")
    total = w.sum()
    if total <= 0:
        raise ValueError("mixture is all zeros")
    if abs(total - 1.0) > SIMPLEX_TOL:
        logger.debug("renormalizing mixture with sum %.9g", total)
    w = w / total
    return MixtureWeights(tuple(float(x) for x in w))


def sample_dirichlet(alpha, rng_seed=None, size: Optional[int] = None):
    """Draw mixture(s) from a Dirichlet distribution with concentration ``alpha``.

    Returns a single :class:`MixtureWeights` when ``size`` is None, otherwise a
    ``(size, d)`` array whose rows lie on the simplex.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size < 2:
        raise ValueError("alpha needs at least 2 components")
    if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError(f"Dirichlet concentrations must be positive, got {alpha.tolist()}")
    rng = np.random.default_rng(rng_seed)
    if size is None:
        return make_mixture(rng.dirichlet(alpha))
    draws = rng.dirichlet(alpha, size=size)
    return draws / draws.sum(axis=1, keepdims=True)


def normalize_scales(parameter_counts: Sequence[int]) -> list:
    """Min-max rescale parameter counts to [0, 1]; the largest model maps to 1."""
    counts = np.asarray(parameter_counts, dtype=float)
    if counts.size == 0:
        raise ValueError("need at least one parameter count")
    if np.any(counts <= 0):
        raise ValueError("parameter counts must be positive")
    if counts.size == 1:
        return [1.0]
    if len(np.unique(counts)) != counts.size:
        raise ValueError(f"parameter counts must be distinct, got {counts.tolist()}")
    lo, hi = counts.min(), counts.max()
    return [float((c - lo) / (hi - lo)) for c in counts]


@dataclass(frozen=True)
class FidelitySpec:
    id: str
    parameter_count: int
    scale: float
    cost: float

    def __post_init__(self):
        if not 0.0 <= self.scale <= 1.0:
            raise ValueError(f"fidelity {self.id!r}: scale {self.scale} outside [0, 1]")
        if not self.cost > 0:
            raise ValueError(f"fidelity {self.id!r}: cost must be positive, got {self.cost}")
        if self.parameter_count <= 0:
            raise ValueError(f"fidelity {self.id!r}: parameter count must be positive")


def make_fidelities(ids, parameter_counts, costs) -> tuple:
    """Build a fidelity set ordered by parameter count, scales normalized."""
    ids = [str(i) for i in ids]
    if not (len(ids) == len(parameter_counts) == len(costs)):
        raise ValueError("ids, parameter_counts and costs must have equal length")
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate fidelity ids: {ids}")
    scales = normalize_scales(parameter_counts)
    specs = [
        FidelitySpec(i, int(p), s, float(c))
        for i, p, s, c in zip(ids, parameter_counts, scales, costs)
    ]
    return tuple(sorted(specs, key=lambda f: f.parameter_count))


def target_fidelity(fidelities) -> FidelitySpec:
    tops = [f for f in fidelities if f.scale == 1.0]
    if len(tops) != 1:
        raise ValueError("fidelity set must contain exactly one fidelity with scale 1.0")
    return tops[0]


@dataclass(frozen=True)
class Observation:
    mixture: MixtureWeights
    fidelity: str
    score: float
    raw_value: float
    orientation: Orientation = Orientation.HIGHER

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"observation score must be finite, got {self.score}")
        if self.score != self.orientation.to_score(self.raw_value):
            raise ValueError("score does not match raw value under the stated orientation")

    @classmethod
    def from_raw(cls, mixture, fidelity, raw_value, orientation=Orientation.HIGHER):
        orientation = Orientation.parse(orientation)
        raw_value = float(raw_value)
        return cls(mixture, str(fidelity), orientation.to_score(raw_value), raw_value, orientation)


@dataclass(frozen=True)
class Budget:
    """Hard cost allowance plus a cap on the number of queries."""

    total: float
    max_steps: int
    consumed: float = 0.0
    steps: int = 0

    def __post_init__(self):
        if not self.total > 0:
            raise ValueError("budget total must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.consumed < 0 or self.consumed > self.total:
            raise ValueError("consumed budget outside [0, total]")

    @property
    def remaining(self) -> float:
        return self.total - self.consumed

    def admits(self, cost: float) -> bool:
        return self.steps < self.max_steps and cost <= self.remaining

    def charge(self, cost: float) -> "Budget":
        if not self.admits(cost):
            raise ValueError(f"query of cost {cost} does not fit in the remaining budget")
        return replace(self, consumed=self.consumed + cost, steps=self.steps + 1)


@dataclass(frozen=True)
class StepRecord:
    step: int
    mixture: MixtureWeights
    fidelity: str
    cost: float
    cumulative_cost: float
    observed_score: float
    recommended: MixtureWeights
    predicted_target_score: float
    realized_target_score: float
    cumulative_best_target_score: float
    nearest_match: bool = False


@dataclass(frozen=True)
class Trace:
    method: str
    seed: int
    records: tuple = field(default_factory=tuple)
    target: str = "score"

    def __post_init__(self):
        costs = [r.cumulative_cost for r in self.records]
        if any(b <= a for a, b in zip(costs, costs[1:])):
            raise ValueError("cumulative cost must be strictly increasing")

    def __len__(self):
        return len(self.records)

    @property
    def total_cost(self) -> float:
        return self.records[-1].cumulative_cost if self.records else 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def final_recommendation(self) -> Optional[MixtureWeights]:
        return self.records[-1].recommended if self.records else None
