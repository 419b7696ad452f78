"""Reference mixture-selection methods replayed with the same query/recommend interface as BO.

Queries are uniform random draws (without replacement) at a fixed fidelity;
what differs between methods is the model used to recommend a mixture.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .acquisition import CandidatesExhausted, argmax_with_ties
from .loop import LoopConfig, ReplayState, run_sequential
from .problem import ReplayProblem
from .types import Trace

logger = logging.getLogger(__name__)

RIDGE = 1e-8
EXP_RESTARTS = 16
EXP_MAX_NFEV = 400
SVR_EPSILON = 0.01
SVR_C = 1.0
SVR_STEPS = 5000
SVR_PATIENCE = 30

METHODS = ("regmix", "dml", "svm", "random")


@dataclass(frozen=True)
class LinearLaw:
    weights: np.ndarray
    intercept: float

    def predict(self, P) -> np.ndarray:
        return np.atleast_2d(P) @ self.weights + self.intercept


@dataclass(frozen=True)
class ExponentialLaw:
    scale: float
    weights: np.ndarray
    intercept: float

    def predict(self, P) -> np.ndarray:
        z = np.clip(np.atleast_2d(P) @ self.weights, -700, 700)
        return self.scale * np.exp(z) + self.intercept


def _xy(observations, y=None):
    """Accept either (mixtures, scores) arrays or a sequence of Observation objects."""
    if y is not None:
        return np.atleast_2d(np.asarray(observations, dtype=float)), np.asarray(y, dtype=float).ravel()
    X = np.array([o.mixture.as_array() for o in observations])
    return X, np.array([o.score for o in observations])


def fit_linear(mixtures, scores=None, ridge: float = RIDGE) -> LinearLaw:
    """Least squares ``y = w . p + w0`` with a tiny ridge (the simplex makes the design collinear)."""
    X, y = _xy(mixtures, scores)
    if y.size < 2:
        raise ValueError("linear fit needs at least 2 observations")
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    coef = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)
    return LinearLaw(coef[:-1], float(coef[-1]))


def fit_exponential(mixtures, scores=None, rng_seed=None, restarts: int = EXP_RESTARTS) -> ExponentialLaw:
    """Nonlinear least squares for ``y = theta * exp(w . p) + w0``, best of several restarts."""
    X, y = _xy(mixtures, scores)
    n, d = X.shape
    if n < 2:
        raise ValueError("exponential fit needs at least 2 observations")
    rng = np.random.default_rng(rng_seed)
    theta_inits = (0.1, -0.1, 1.0, -1.0)

    def residual(p):
        z = np.clip(X @ p[1:-1], -700, 700)
        return p[0] * np.exp(z) + p[-1] - y

    def jac(p):
        e = np.exp(np.clip(X @ p[1:-1], -700, 700))
        return np.hstack([e[:, None], p[0] * e[:, None] * X, np.ones((n, 1))])

    best, best_cost = None, np.inf
    for k in range(restarts):
        p0 = np.concatenate([[theta_inits[k % 4]], rng.normal(0.0, 1.0, d), [y.mean()]])
        try:
            res = least_squares(residual, p0, jac=jac, method="trf", max_nfev=EXP_MAX_NFEV, xtol=1e-12, ftol=1e-12, gtol=1e-12)
        except (ValueError, FloatingPointError) as exc:
            logger.debug("exponential restart %d failed: %s", k, exc)
            continue
        if np.all(np.isfinite(res.x)) and res.cost < best_cost:
            best, best_cost = res.x, res.cost
    if best is None:
        raise RuntimeError("all exponential-law restarts diverged")
    return ExponentialLaw(float(best[0]), best[1:-1].copy(), float(best[-1]))


def svr_objective(X, y, w, b, epsilon=SVR_EPSILON, C=SVR_C) -> float:
    r = np.abs(y - X @ w - b)
    return 0.5 * w @ w + C * np.maximum(r - epsilon, 0.0).sum()


def fit_svr(mixtures, scores=None, epsilon: float = SVR_EPSILON, C: float = SVR_C,
            steps: int = SVR_STEPS, rng_seed=None) -> LinearLaw:
    """Linear epsilon-insensitive SVR by full-batch subgradient descent.

    Minimizes ``0.5 |w|^2 + C * sum(max(0, |y - w.p - b| - epsilon))`` on
    standardized scores. The step is halved after a stretch without
    improvement, restarting from the best iterate.
    ``rng_seed`` only breaks exact ties in the initialization.
    """
    X, y = _xy(mixtures, scores)
    if y.size < 2:
        raise ValueError("SVR fit needs at least 2 observations")
    mu, sd = y.mean(), y.std()
    sd = sd if sd > 1e-12 else 1.0
    z = (y - mu) / sd
    n, d = X.shape
    rng = np.random.default_rng(rng_seed)
    w = rng.normal(0.0, 1e-6, d)
    b = float(np.median(z))
    best = (svr_objective(X, z, w, b, epsilon, C), w.copy(), b)
    eta = 1.0 / (C * n * (1.0 + np.sqrt((X * X).sum(1).max())))
    stall = 0
    for _ in range(steps):
        r = z - X @ w - b
        sgn = np.sign(r) * (np.abs(r) > epsilon)
        w = w - eta * (w - C * X.T @ sgn)
        b = b + eta * C * sgn.sum()
        obj = svr_objective(X, z, w, b, epsilon, C)
        if obj < best[0]:
            best, stall = (obj, w.copy(), b), 0
        else:
            stall += 1
            if stall >= SVR_PATIENCE:
                # halve the step and restart from the best iterate
                eta *= 0.5
                stall = 0
                w, b = best[1].copy(), best[2]
        if eta < 1e-18:
            break
    _, w, b = best
    return LinearLaw(w * sd, float(b * sd + mu))


def baseline_recommend(model, candidates):
    """Candidate with the highest predicted score; ties go to the lexicographically smaller mixture."""
    X = np.array([c.as_array() if hasattr(c, "as_array") else np.asarray(c, dtype=float) for c in candidates])
    if X.shape[0] == 0:
        raise ValueError("no candidates")
    pred = model.predict(X)
    i = argmax_with_ties(pred, None, X)
    return candidates[i] if not isinstance(candidates, np.ndarray) else X[i]


def random_select(candidates, rng_seed=None, observed=()):
    """Uniform draw among candidates not in ``observed``."""
    seen = set(observed)
    pool = [c for c in candidates if c not in seen]
    if not pool:
        raise CandidatesExhausted("all candidates observed")
    rng = np.random.default_rng(rng_seed)
    return pool[int(rng.integers(len(pool)))]


def _fit_method(method: str, X, y, seed):
    n, d = X.shape
    if method == "regmix" and n >= 2:
        return fit_linear(X, y)
    if method == "dml" and n >= d + 2:
        return fit_exponential(X, y, rng_seed=seed)
    if method == "svm" and n >= 2:
        return fit_svr(X, y, rng_seed=seed)
    return None


def run_baseline(method: str, problem: ReplayProblem, config: LoopConfig) -> Trace:
    """Replay a baseline: random queries at ``config.query_fidelity``, law-based recommendations.

    Before a law can be fitted (and always for ``random``) the best observed
    mixture is recommended, mapped to the nearest target candidate.
    """
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown baseline {method!r}; choose from {METHODS}")
    qf = config.query_fidelity or problem.target
    targets = problem.mixtures[problem.target]

    def refresh(state: ReplayState, rng):
        X, _, y = state.design(qf)
        seed = int(rng.integers(2**32))
        model = _fit_method(method, X, y, seed)
        if model is None:
            i = int(np.argmax(y))
            return X[i], float(y[i])
        pred = model.predict(targets)
        i = argmax_with_ties(pred, None, targets)
        return targets[i], float(pred[i])

    def propose(state, rng):
        raise CandidatesExhausted("random design covers every candidate")

    # every query is drawn from the initial-design stream, which depends only on the seed,
    # so all baselines replay the same query sequence
    shared = replace(config, mode="BO", query_fidelity=qf, init_count=problem.count(qf))
    return run_sequential(problem, shared, method, [qf], [qf], propose, refresh)
