"""Budgeted sequential optimization: fit surrogate, acquire, observe, recommend."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .acquisition import CandidatesExhausted, argmax_with_ties, sample_max_values, score_candidates
from .gp import FitConfig, FittedGP, fit_gp
from .problem import ReplayProblem
from .types import Budget, StepRecord, Trace, make_mixture

logger = logging.getLogger(__name__)

REFIT_DENSE_LIMIT = 200
REFIT_SPARSE_EVERY = 5


@dataclass(frozen=True)
class LoopConfig:
    mode: str = "BO"
    budget: Budget = field(default_factory=lambda: Budget(float("inf"), 100))
    query_fidelity: Optional[str] = None
    target_fidelity: Optional[str] = None
    init_count: int = 1
    refit_every: Optional[int] = None
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    n_max_samples: int = 10
    max_value_sampler: str = "gumbel"

    def __post_init__(self):
        object.__setattr__(self, "mode", self.mode.upper())
        if self.mode not in ("BO", "MFBO"):
            raise ValueError(f"unknown loop mode {self.mode!r}")
        if self.init_count < 1:
            raise ValueError("init_count must be at least 1")
        if self.refit_every is not None and self.refit_every < 1:
            raise ValueError("refit_every must be positive")


@dataclass(frozen=True)
class RecommendationRecord:
    step: int
    mixture: object
    predicted_score: float
    realized_score: Optional[float]
    cumulative_cost: float
    nearest_match: bool = False


class ReplayState:
    """Mutable bookkeeping for one run: observations, budget and emitted records."""

    def __init__(self, problem: ReplayProblem, budget: Budget, target: Optional[str] = None):
        self.problem = problem
        self.target = target or problem.target
        if self.target != problem.target:
            raise ValueError("target fidelity must match the problem's target")
        self.budget = budget
        self.observed: list = []  # (fidelity id, row index)
        self.seen: set = set()
        self.records: list = []
        self.best_realized = -np.inf

    # observations as arrays for model fitting
    def design(self, fid: Optional[str] = None):
        rows = [(f, i) for f, i in self.observed if fid is None or f == fid]
        X = np.array([self.problem.mixtures[f][i] for f, i in rows])
        s = np.array([self.problem.fidelity(f).scale for f, _ in rows])
        y = np.array([self.problem.scores[f][i] for f, i in rows])
        return X, s, y

    def unobserved(self, fids) -> list:
        return [
            (f, i) for f in fids for i in range(self.problem.count(f)) if (f, i) not in self.seen
        ]

    def admits(self, fid: str) -> bool:
        return self.budget.admits(self.problem.fidelity(fid).cost)

    def observe(self, fid: str, idx: int) -> float:
        if (fid, idx) in self.seen:
            raise ValueError(f"candidate {(fid, idx)} already observed")
        self.budget = self.budget.charge(self.problem.fidelity(fid).cost)
        self.observed.append((fid, idx))
        self.seen.add((fid, idx))
        return float(self.problem.scores[fid][idx])

    def record(self, fid, idx, rec_mixture, predicted) -> StepRecord:
        p = self.problem
        t_idx, nearest = p.nearest_target(rec_mixture)
        realized = float(p.scores[self.target][t_idx])
        self.best_realized = max(self.best_realized, realized)
        cost = p.fidelity(fid).cost
        cum = self.records[-1].cumulative_cost + cost if self.records else cost
        rec = StepRecord(
            step=len(self.records) + 1,
            mixture=make_mixture(p.mixtures[fid][idx]),
            fidelity=fid,
            cost=cost,
            cumulative_cost=cum,
            observed_score=float(p.scores[fid][idx]),
            recommended=make_mixture(rec_mixture),
            predicted_target_score=float(predicted),
            realized_target_score=realized,
            cumulative_best_target_score=self.best_realized,
            nearest_match=nearest,
        )
        self.records.append(rec)
        return rec

    def trace(self, method: str, seed: int) -> Trace:
        return Trace(method, seed, tuple(self.records), self.problem.name)


def recommend(gp: FittedGP, candidates_at_target, target_scale: float = 1.0):
    """Target candidate with the highest posterior mean; returns ``(index, predicted mean)``."""
    X = np.array(
        [c.as_array() if hasattr(c, "as_array") else np.asarray(c, dtype=float) for c in candidates_at_target]
    )
    if X.shape[0] == 0:
        raise ValueError("no candidates to recommend from")
    mean, _ = gp.predict(X, target_scale)
    i = argmax_with_ties(mean, None, X)
    return i, float(mean[i])


def _should_refit(n_obs: int, config: LoopConfig, have_hyper: bool) -> bool:
    if not have_hyper:
        return True
    if config.refit_every is not None:
        return (n_obs - 1) % config.refit_every == 0
    return n_obs <= REFIT_DENSE_LIMIT or n_obs % REFIT_SPARSE_EVERY == 0


def _streams(seed):
    init, fit, acq = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(fit), np.random.default_rng(acq)


def _check_pool(problem: ReplayProblem, fids):
    for fid in fids:
        problem.fidelity(fid)
        if problem.count(fid) == 0:
            raise ValueError(f"no candidates at fidelity {fid!r}")


def run_sequential(
    problem: ReplayProblem,
    config: LoopConfig,
    method: str,
    query_fids,
    init_fids,
    propose: Callable,
    refresh: Callable,
) -> Trace:
    """Shared driver for model-based and baseline replays.

    ``propose(state, rng)`` returns the next ``(fidelity, index)``;
    ``refresh(state, rng)`` updates the method's model after an observation
    and returns ``(recommended mixture array, predicted target score)``.
    """
    _check_pool(problem, query_fids)
    state = ReplayState(problem, config.budget, config.target_fidelity)
    init_rng, fit_rng, acq_rng = _streams(config.seed)
    n_init = 0
    while True:
        if n_init < config.init_count:
            pool = state.unobserved(init_fids) or state.unobserved(query_fids)
            if not pool:
                break
            choice = pool[int(init_rng.integers(len(pool)))]
            n_init += 1
        else:
            if not state.unobserved(query_fids):
                break
            try:
                choice = propose(state, acq_rng)
            except CandidatesExhausted:
                break
        fid, idx = choice
        if not state.admits(fid):
            logger.debug("%s: stopping, %s does not fit the remaining budget", method, fid)
            break
        state.observe(fid, idx)
        rec_mixture, predicted = refresh(state, fit_rng)
        state.record(fid, idx, rec_mixture, predicted)
    return state.trace(method, config.seed)


class _GPRefresher:
    def __init__(self, config: LoopConfig):
        self.config = config
        self.gp: Optional[FittedGP] = None

    def __call__(self, state: ReplayState, rng):
        X, s, y = state.design()
        hyper = None if self.gp is None else self.gp.hyper
        if _should_refit(len(y), self.config, hyper is not None) and len(y) >= 2:
            seed = int(rng.integers(2**32))
            inits = () if hyper is None else (hyper,)
            self.gp = fit_gp(X, s, y, self.config.fit, seed, inits=inits)
        else:
            self.gp = fit_gp(X, s, y, self.config.fit, hyper=hyper)
        p = state.problem
        cands = p.mixtures[p.target]
        i, pred = recommend(self.gp, cands, p.fidelity(p.target).scale)
        return cands[i], pred


def run_bo(problem: ReplayProblem, config: LoopConfig, method: str = "bo") -> Trace:
    """Single-fidelity BO with expected improvement at ``config.query_fidelity``.

    With ``query_fidelity`` below the target this is zero-shot transfer:
    queries stay on the proxy while recommendations are scored at the target.
    """
    if config.mode != "BO":
        raise ValueError("run_bo needs mode='BO'")
    qf = config.query_fidelity or problem.target
    refresher = _GPRefresher(config)
    scale = problem.fidelity(qf).scale
    cost = problem.fidelity(qf).cost

    def propose(state: ReplayState, rng):
        pool = state.unobserved([qf])
        if not pool:
            raise CandidatesExhausted("all candidates observed")
        X = problem.mixtures[qf][[i for _, i in pool]]
        _, _, y = state.design(qf)
        vals = score_candidates(refresher.gp, X, np.full(len(pool), scale), np.full(len(pool), cost),
                                "EI", incumbent=float(y.max()))
        return pool[argmax_with_ties(vals, None, X)]

    return run_sequential(problem, config, method, [qf], [qf], propose, refresher)


def run_mfbo(problem: ReplayProblem, config: LoopConfig, method: str = "mfbo") -> Trace:
    """Multi-fidelity BO: joint (mixture, fidelity) choice by cost-normalized MES.

    The initial design is drawn from the cheapest fidelity.
    """
    if config.mode != "MFBO":
        raise ValueError("run_mfbo needs mode='MFBO'")
    fids = [f.id for f in problem.present_fidelities]
    if len(fids) < 2:
        raise ValueError("multi-fidelity optimization needs at least 2 fidelities with candidates")
    cheapest = min(problem.present_fidelities, key=lambda f: (f.cost, f.scale)).id
    refresher = _GPRefresher(config)
    target = problem.fidelity(problem.target)
    fmap = problem.fidelity_map

    def propose(state: ReplayState, rng):
        pool = state.unobserved(fids)
        if not pool:
            raise CandidatesExhausted("all candidates observed")
        maxima = sample_max_values(
            refresher.gp, problem.mixtures[problem.target], target.scale,
            config.n_max_samples, rng, config.max_value_sampler,
        )
        X = np.array([problem.mixtures[f][i] for f, i in pool])
        scales = np.array([fmap[f].scale for f, _ in pool])
        costs = np.array([fmap[f].cost for f, _ in pool])
        vals = score_candidates(refresher.gp, X, scales, costs, "MES", maxima=maxima)
        return pool[argmax_with_ties(vals, costs, X)]

    return run_sequential(problem, config, method, fids, [cheapest], propose, refresher)
