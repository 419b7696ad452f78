"""Acquisition functions: expected improvement and cost-normalized max-value entropy search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.special import log_ndtr, ndtr

from .gp import FittedGP, PosteriorGaussian
from .types import MixtureWeights

TIE_TOL = 1e-12
STD_FLOOR = 1e-12
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class CandidatesExhausted(RuntimeError):
    """Every candidate has already been observed."""


@dataclass(frozen=True)
class MaxValueSamples:
    values: tuple
    sampler: str = "gumbel"

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("need at least one sampled maximum")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sampled maxima must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class AcquisitionScore:
    value: float
    mixture: MixtureWeights
    fidelity: str


# ---------------------------------------------------------------------------
# expected improvement


def ei_values(mean, std, incumbent) -> np.ndarray:
    """Vectorized closed-form EI for maximization."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    delta = mean - incumbent
    safe = np.where(std < STD_FLOOR, 1.0, std)
    z = delta / safe
    pdf = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
    ei = delta * ndtr(z) + safe * pdf
    ei = np.where(std < STD_FLOOR, np.maximum(delta, 0.0), ei)
    return np.maximum(ei, 0.0)


def expected_improvement(post: PosteriorGaussian, incumbent: float) -> float:
    return float(ei_values(post.mean, np.sqrt(max(post.variance, 0.0)), incumbent))


# ---------------------------------------------------------------------------
# max-value entropy search


def mes_terms(gamma) -> np.ndarray:
    """``gamma * pdf(gamma) / (2 cdf(gamma)) - log cdf(gamma)``, evaluated in log space.

    The ratio pdf/cdf is formed as ``exp(log pdf - log cdf)``, so very
    negative ``gamma`` (where the cdf underflows) stays finite.
    """
    gamma = np.asarray(gamma, dtype=float)
    log_cdf = log_ndtr(gamma)
    log_pdf = -0.5 * gamma * gamma - _LOG_SQRT_2PI
    ratio = np.exp(log_pdf - log_cdf)
    return 0.5 * gamma * ratio - log_cdf


def mes_values(mean, std, maxima, cost) -> np.ndarray:
    """Cost-normalized MES for a batch of posteriors against sampled maxima."""
    cost = np.asarray(cost, dtype=float)
    if np.any(cost <= 0):
        raise ValueError("query cost must be positive")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.maximum(np.atleast_1d(np.asarray(std, dtype=float)), STD_FLOOR)
    ys = maxima.as_array() if isinstance(maxima, MaxValueSamples) else np.atleast_1d(maxima)
    gamma = (ys[None, :] - mean[:, None]) / std[:, None]
    return mes_terms(gamma).mean(axis=1) / cost


def mes_score(post: PosteriorGaussian, maxima: MaxValueSamples, cost: float) -> float:
    std = np.sqrt(max(post.variance, STD_FLOOR**2))
    return float(mes_values(post.mean, std, maxima, cost)[0])


def _max_cdf(y, mean, std):
    # P(max_i f_i <= y) for independent Gaussian marginals; zero-variance entries are steps
    with np.errstate(divide="ignore"):
        z = (y - mean) / np.where(std > 0, std, 1.0)
        logs = np.where(std > 0, log_ndtr(z), np.where(y >= mean, 0.0, -np.inf))
    return np.exp(logs.sum())


def _quantile_of_max(p, mean, std):
    lo = float(np.max(mean - 8.0 * std)) - 1e-12
    hi = float(np.max(mean + 8.0 * std)) + 1e-12
    lo = min(lo, float(np.max(mean)))
    while _max_cdf(lo, mean, std) > p:
        lo -= max(hi - lo, 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _max_cdf(mid, mean, std) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def _gumbel_quartile_fit(mean, std):
    q25, q50, q75 = (_quantile_of_max(p, mean, std) for p in (0.25, 0.5, 0.75))
    b = (q75 - q25) / (np.log(-np.log(0.25)) - np.log(-np.log(0.75)))
    return q50 + b * np.log(np.log(2.0)), b


def _max_moments(mean, std, n_grid: int = 4001):
    # mean and variance of max_i f_i under independent marginals, by integrating the exact cdf
    lo = float(np.max(mean - 9.0 * std))
    hi = float(np.max(mean + 9.0 * std))
    y = np.linspace(lo, hi, n_grid)
    with np.errstate(divide="ignore"):
        z = (y[:, None] - mean[None, :]) / np.where(std > 0, std, 1.0)[None, :]
        logs = np.where(std[None, :] > 0, log_ndtr(z), np.where(y[:, None] >= mean[None, :], 0.0, -np.inf))
    F = np.exp(logs.sum(1))
    m1 = hi - simpson(F, x=y)
    m2 = hi * hi - simpson(2.0 * y * F, x=y)
    return m1, max(m2 - m1 * m1, 0.0)


def _gumbel_moment_fit(mean, std):
    m1, var = _max_moments(mean, std)
    b = np.sqrt(6.0 * var) / np.pi
    return m1 - b * np.euler_gamma, b


def gumbel_max_samples(mean, std, n_samples: int, rng, fit: str = "moments") -> np.ndarray:
    """Sample maxima from a Gumbel fit to the distribution of ``max_i f_i``.

    The target distribution is the product of the marginal Gaussian CDFs.
    ``fit="moments"`` matches its mean and variance (computed by quadrature);
    ``fit="quartiles"`` matches its 25/50/75% quantiles instead.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.maximum(np.asarray(std, dtype=float), 0.0)
    std = np.where(std < STD_FLOOR, 0.0, std)
    top = float(mean.max())
    if np.all(std == 0):
        return np.full(n_samples, top)
    if fit == "moments":
        a, b = _gumbel_moment_fit(mean, std)
    elif fit == "quartiles":
        a, b = _gumbel_quartile_fit(mean, std)
    else:
        raise ValueError(f"unknown Gumbel fit {fit!r}")
    if not b > 0:
        return np.full(n_samples, a)
    u = rng.uniform(size=n_samples)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return a - b * np.log(-np.log(u))


def joint_max_samples(mean, cov, n_samples: int, rng) -> np.ndarray:
    """Exact maxima of joint posterior draws over a finite grid."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    draws = mean[None, :] + rng.standard_normal((n_samples, mean.size)) @ root.T
    return draws.max(axis=1)


def sample_max_values(
    gp: FittedGP, candidates, target_scale: float = 1.0, n_samples: int = 10,
    rng_seed=None, sampler: str = "gumbel",
) -> MaxValueSamples:
    """Sample ``n_samples`` values of the maximum of f over candidate mixtures at ``target_scale``."""
    X = _mixture_matrix(candidates)
    if X.shape[0] == 0:
        raise ValueError("need at least one candidate")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    X = np.unique(X, axis=0)
    rng = np.random.default_rng(rng_seed)
    if sampler in ("gumbel", "gumbel-quartiles"):
        mean, var = gp.predict(X, target_scale)
        std = np.sqrt(var)
        # posterior variance is floored at 1e-12; treat that floor as exactly zero
        std = np.where(var <= 1e-12 * (1 + 1e-9) * gp.y_scale**2, 0.0, std)
        fit = "quartiles" if sampler == "gumbel-quartiles" else "moments"
        vals = gumbel_max_samples(mean, std, n_samples, rng, fit)
    elif sampler in ("posterior-grid", "joint"):
        mean, cov = gp.predict(X, target_scale, full_cov=True)
        vals = joint_max_samples(mean, cov, n_samples, rng)
        sampler = "posterior-grid"
    else:
        raise ValueError(f"unknown max-value sampler {sampler!r}")
    return MaxValueSamples(tuple(float(v) for v in vals), sampler)


def _mixture_matrix(candidates) -> np.ndarray:
    if isinstance(candidates, np.ndarray):
        return np.atleast_2d(candidates).astype(float)
    rows = []
    for c in candidates:
        m = c[0] if isinstance(c, tuple) else c
        rows.append(m.as_array() if isinstance(m, MixtureWeights) else np.asarray(m, dtype=float))
    return np.array(rows, dtype=float).reshape(len(rows), -1)


# ---------------------------------------------------------------------------
# selection


def argmax_with_ties(values, costs, mixtures, tol: float = TIE_TOL) -> int:
    """Index of the best value; near-ties go to lower cost, then the lexicographically smaller mixture."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("nothing to select from")
    best = np.max(values)
    tied = np.flatnonzero(values >= best - tol)
    if tied.size == 1:
        return int(tied[0])
    costs = np.zeros(values.size) if costs is None else np.asarray(costs, dtype=float)
    mixtures = np.asarray(mixtures, dtype=float)
    return int(min(tied, key=lambda i: (costs[i], tuple(mixtures[i]))))


def score_candidates(
    gp: FittedGP, X, scales, costs, mode: str, incumbent: Optional[float] = None,
    maxima: Optional[MaxValueSamples] = None,
) -> np.ndarray:
    mean, var = gp.predict(X, scales)
    std = np.sqrt(var)
    mode = mode.upper()
    if mode == "EI":
        if incumbent is None:
            raise ValueError("EI needs an incumbent value")
        return ei_values(mean, std, incumbent)
    if mode == "MES":
        if maxima is None:
            raise ValueError("MES needs sampled maxima")
        return mes_values(mean, std, maxima, costs)
    raise ValueError(f"unknown acquisition mode {mode!r}")


def select_next(
    gp: FittedGP,
    candidates: Sequence,
    fidelities: dict,
    mode: str,
    incumbent_or_maxima,
    observed=(),
):
    """Pick the unobserved ``(mixture, fidelity_id)`` candidate with the highest acquisition.

    ``fidelities`` maps fidelity id to :class:`~mixopt.types.FidelitySpec`.
    ``observed`` is a collection of already-queried ``(mixture, fidelity_id)`` pairs.
    """
    seen = set(observed)
    pool = [c for c in candidates if (c[0], c[1]) not in seen]
    if not pool:
        raise CandidatesExhausted("all candidates have been observed")
    fids = {c[1] for c in pool}
    if mode.upper() == "EI" and len(fids) > 1:
        raise ValueError("EI selection needs a single-fidelity candidate set")
    X = _mixture_matrix(pool)
    scales = np.array([fidelities[c[1]].scale for c in pool])
    costs = np.array([fidelities[c[1]].cost for c in pool])
    if mode.upper() == "EI":
        vals = score_candidates(gp, X, scales, costs, "EI", incumbent=float(incumbent_or_maxima))
    else:
        vals = score_candidates(gp, X, scales, costs, "MES", maxima=incumbent_or_maxima)
    i = argmax_with_ties(vals, costs, X)
    return pool[i][0], pool[i][1]
