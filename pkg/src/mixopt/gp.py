"""Exact Gaussian-process regression over (mixture, model scale) inputs.

The covariance is a product of an RBF kernel over mixture weights and a
downsampling kernel over normalized model scale::

    k((p, s), (p', s')) = lam * exp(-|p - p'|^2 / (2 l^2)) * (c + (1 - s)^(1+delta) (1 - s')^(1+delta))

Hyperparameters are fitted by maximizing the log marginal likelihood with
analytic gradients (multi-restart L-BFGS-B in log space).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

from .types import MixtureWeights

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
VAR_FLOOR = 1e-12
JITTER_START = 1e-8
JITTER_MAX = 1e-2


class GPNumericalError(RuntimeError):
    """Raised when the Gram matrix stays non-positive-definite after jitter escalation."""


@dataclass(frozen=True)
class GPHyperparams:
    output_scale: float = 1.0
    lengthscale: object = 0.3
    ds_offset: float = 0.5
    ds_exponent: float = 0.0
    noise_var: float = 1e-3
    prior_mean: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if not (self.output_scale > 0 and self.ds_offset > 0 and self.noise_var > 0):
            raise ValueError(f"output_scale, ds_offset and noise_var must be positive: {self}")
        if self.ds_exponent < 0:
            raise ValueError("ds_exponent must be nonnegative")
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscale(s) must be positive and finite")
        if ls.size > 1:
            object.__setattr__(self, "lengthscale", tuple(float(x) for x in ls))
        else:
            object.__setattr__(self, "lengthscale", float(ls[0]))

    @property
    def ard(self) -> bool:
        return isinstance(self.lengthscale, tuple)

    def lengthscales(self, d: int) -> np.ndarray:
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if ls.size == 1:
            return np.full(d, ls[0])
        if ls.size != d:
            raise ValueError(f"ARD lengthscale has {ls.size} entries for {d} dimensions")
        return ls


@dataclass(frozen=True)
class PosteriorGaussian:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


# ---------------------------------------------------------------------------
# kernels


def _as_points(x) -> np.ndarray:
    if isinstance(x, MixtureWeights):
        return x.as_array()[None, :]
    arr = np.asarray(x, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


def _pairwise_sqdist(A, B, lengthscale) -> np.ndarray:
    # explicit differences: no cancellation, so k(a, a) is exactly 1
    ls = np.atleast_1d(np.asarray(lengthscale, dtype=float))
    diff = (A[:, None, :] - B[None, :, :]) / ls
    return (diff * diff).sum(-1)


def rbf_matrix(A, B, lengthscale) -> np.ndarray:
    A = _as_points(A)
    B = _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.exp(-0.5 * _pairwise_sqdist(A, B, lengthscale))


def rbf_kernel(a, b, lengthscale) -> float:
    """``exp(-|a - b|^2 / (2 lengthscale^2))`` for two mixtures."""
    if np.any(np.asarray(lengthscale, dtype=float) <= 0):
        raise ValueError("lengthscale must be positive")
    return float(rbf_matrix(a, b, lengthscale)[0, 0])


def _check_scales(s):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
        raise ValueError(f"scales must lie in [0, 1], got {s.tolist()}")
    return s


def _ds_factor(s, exponent) -> np.ndarray:
    return (1.0 - s) ** (1.0 + exponent)


def ds_matrix(sa, sb, offset, exponent) -> np.ndarray:
    sa = _check_scales(sa)
    sb = _check_scales(sb)
    return offset + np.outer(_ds_factor(sa, exponent), _ds_factor(sb, exponent))


def downsampling_kernel(s_a, s_b, offset, exponent) -> float:
    """``offset + (1 - s_a)^(1+exponent) (1 - s_b)^(1+exponent)``."""
    if offset <= 0 or exponent < 0:
        raise ValueError("offset must be positive and exponent nonnegative")
    return float(ds_matrix(s_a, s_b, offset, exponent)[0, 0])


def kernel_matrix(XA, sA, XB, sB, hyper: GPHyperparams) -> np.ndarray:
    XA = _as_points(XA)
    XB = _as_points(XB)
    ls = hyper.lengthscales(XA.shape[1])
    return (
        hyper.output_scale
        * rbf_matrix(XA, XB, ls)
        * ds_matrix(sA, sB, hyper.ds_offset, hyper.ds_exponent)
    )


def product_kernel(x, x2, hyper: GPHyperparams) -> float:
    """Covariance between two ``(mixture, scale)`` inputs."""
    (pa, sa), (pb, sb) = x, x2
    return float(kernel_matrix(pa, [sa], pb, [sb], hyper)[0, 0])


def kernel_diag(X, s, hyper: GPHyperparams) -> np.ndarray:
    s = _check_scales(s)
    u = _ds_factor(s, hyper.ds_exponent)
    return hyper.output_scale * (hyper.ds_offset + u * u)


# ---------------------------------------------------------------------------
# conditioning


def stable_cholesky(K: np.ndarray):
    """Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Returns ``(L, jitter)``. Jitter starts at 1e-8 * mean(diag K) and grows
    tenfold up to 1e-2 * mean(diag K).
    """
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    base = float(np.mean(np.diag(K)))
    if not np.isfinite(base) or base <= 0:
        raise GPNumericalError("Gram matrix has a non-positive or non-finite diagonal")
    jitter = JITTER_START * base
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * base * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GPNumericalError(
        f"Gram matrix of size {K.shape[0]} not positive definite after jitter {jitter / 10:.3g}"
    )


def _prepare_inputs(X, s):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    s = _check_scales(s)
    if s.size == 1 and X.shape[0] > 1:
        s = np.full(X.shape[0], s[0])
    if s.shape[0] != X.shape[0]:
        raise ValueError("number of scales does not match number of mixtures")
    return X, s


class FittedGP:
    """A GP conditioned on training data; immutable after construction.

    Scores are modelled in standardized units ``(y - y_offset) / y_scale``;
    all predictions are returned in the original units.
    """

    def __init__(self, X, s, y, hyper: GPHyperparams, y_offset=0.0, y_scale=1.0):
        X, s = _prepare_inputs(X, s)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError("scores and inputs differ in length")
        if y.shape[0] < 1:
            raise ValueError("need at least one observation")
        self.X = X.copy()
        self.s = s.copy()
        self.y_raw = y
        self.y_offset = float(y_offset)
        self.y_scale = float(y_scale)
        self.y = (y - self.y_offset) / self.y_scale
        self.hyper = hyper
        K = kernel_matrix(X, s, X, s, hyper)
        K = 0.5 * (K + K.T)
        K[np.diag_indices_from(K)] += hyper.noise_var
        self.gram = K
        self.L, self.jitter = stable_cholesky(K)
        self.alpha = cho_solve((self.L, True), self.y - hyper.prior_mean)
        for arr in (self.X, self.s, self.y, self.gram, self.L, self.alpha):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def predict(self, Xq, sq, full_cov: bool = False):
        """Posterior mean and variance (or covariance) of the latent function."""
        Xq, sq = _prepare_inputs(Xq, sq)
        Ks = kernel_matrix(Xq, sq, self.X, self.s, self.hyper)
        mean = self.hyper.prior_mean + Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        if full_cov:
            cov = kernel_matrix(Xq, sq, Xq, sq, self.hyper) - v.T @ v
            cov = 0.5 * (cov + cov.T)
            return self.y_offset + self.y_scale * mean, self.y_scale**2 * cov
        var = kernel_diag(Xq, sq, self.hyper) - (v * v).sum(0)
        var = np.maximum(var, VAR_FLOOR)
        return self.y_offset + self.y_scale * mean, self.y_scale**2 * var

    def log_marginal_likelihood(self) -> float:
        r = self.y - self.hyper.prior_mean
        return float(-0.5 * r @ self.alpha - np.log(np.diag(self.L)).sum() - 0.5 * self.n * LOG_2PI)


def posterior(gp: FittedGP, queries) -> list:
    """Posterior marginals at a list of ``(mixture, scale)`` pairs."""
    if not queries:
        return []
    Xq = np.array([_as_points(m)[0] for m, _ in queries])
    sq = np.array([float(sc) for _, sc in queries])
    mean, var = gp.predict(Xq, sq)
    return [PosteriorGaussian(float(m), float(v)) for m, v in zip(mean, var)]


# ---------------------------------------------------------------------------
# marginal likelihood and its gradient


class ParamPacking:
    """Maps :class:`GPHyperparams` to the unconstrained optimization vector.

    Layout: ``[log lam, log l (1 or d entries), log c, delta, log noise_var]``
    followed by ``prior_mean`` when it is learned.
    """

    def __init__(self, d: int, ard: bool = False, learn_prior_mean: bool = False):
        self.d = d
        self.ard = ard
        self.learn_prior_mean = learn_prior_mean
        self.n_ls = d if ard else 1

    @property
    def size(self) -> int:
        return 4 + self.n_ls + int(self.learn_prior_mean)

    def pack(self, h: GPHyperparams) -> np.ndarray:
        ls = np.atleast_1d(np.asarray(h.lengthscale, dtype=float))
        if ls.size != self.n_ls:
            ls = np.full(self.n_ls, float(np.exp(np.mean(np.log(ls)))))
        theta = [np.log(h.output_scale), *np.log(ls), np.log(h.ds_offset), h.ds_exponent, np.log(h.noise_var)]
        if self.learn_prior_mean:
            theta.append(h.prior_mean)
        return np.array(theta, dtype=float)

    def unpack(self, theta, prior_mean: float = 0.0) -> GPHyperparams:
        theta = np.asarray(theta, dtype=float)
        k = 1 + self.n_ls
        ls = np.exp(theta[1:k])
        return GPHyperparams(
            output_scale=float(np.exp(theta[0])),
            lengthscale=tuple(ls) if self.ard else float(ls[0]),
            ds_offset=float(np.exp(theta[k])),
            ds_exponent=float(theta[k + 1]),
            noise_var=float(np.exp(theta[k + 2])),
            prior_mean=float(theta[k + 3]) if self.learn_prior_mean else prior_mean,
        )

    def bounds(self, b: "HyperBounds"):
        out = [(np.log(b.output_scale[0]), np.log(b.output_scale[1]))]
        out += [(np.log(b.lengthscale[0]), np.log(b.lengthscale[1]))] * self.n_ls
        out += [
            (np.log(b.ds_offset[0]), np.log(b.ds_offset[1])),
            tuple(b.ds_exponent),
            (np.log(b.noise_var[0]), np.log(b.noise_var[1])),
        ]
        if self.learn_prior_mean:
            out.append((None, None))
        return out


def log_marginal_likelihood(X, s, y, hyper: GPHyperparams) -> float:
    """Log evidence of scores ``y`` at inputs ``(X, s)`` under ``hyper``."""
    return FittedGP(X, s, y, hyper).log_marginal_likelihood()


class LMLObjective:
    """Log marginal likelihood and gradient over the packed vector, with distances cached."""

    def __init__(self, X, s, y, packing: ParamPacking, prior_mean: float = 0.0):
        X, s = _prepare_inputs(X, s)
        self.y = np.asarray(y, dtype=float).ravel()
        self.s = s
        self.n = X.shape[0]
        self.packing = packing
        self.prior_mean = prior_mean
        diff = X[:, None, :] - X[None, :, :]
        self.raw_sq = diff * diff
        self.raw_sq_sum = self.raw_sq.sum(-1)
        one_minus = 1.0 - s
        self.log_1ms = np.where(one_minus > 0, np.log(np.where(one_minus > 0, one_minus, 1.0)), 0.0)
        self.log_pair = self.log_1ms[:, None] + self.log_1ms[None, :]
        self.eye = np.eye(self.n)

    def __call__(self, theta):
        packing = self.packing
        h = packing.unpack(theta, self.prior_mean)
        n = self.n
        if packing.ard:
            ls = np.asarray(h.lengthscale)
            per_dim = self.raw_sq / ls**2
            sq = per_dim.sum(-1)
        else:
            sq = self.raw_sq_sum / h.lengthscale**2
        R = np.exp(-0.5 * sq)
        u = _ds_factor(self.s, h.ds_exponent)
        uu = np.outer(u, u)
        Kf = h.output_scale * R * (h.ds_offset + uu)
        K = Kf + h.noise_var * self.eye
        L, info = lapack.dpotrf(K, lower=1)
        if info != 0:
            L, _ = stable_cholesky(K)
        r = self.y - h.prior_mean
        alpha, _ = lapack.dpotrs(L, r, lower=1)
        value = -0.5 * r @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI

        Kinv, _ = lapack.dpotri(L, lower=1)
        Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
        # dL/dtheta = 0.5 * tr((alpha alpha^T - K^-1) dK/dtheta)
        W = np.outer(alpha, alpha) - Kinv
        WKf = W * Kf
        grads = [0.5 * WKf.sum()]
        if packing.ard:
            grads += list(0.5 * np.einsum("ij,ijk->k", WKf, per_dim))
        else:
            grads.append(0.5 * np.sum(WKf * sq))
        WR = W * R
        grads.append(0.5 * h.output_scale * h.ds_offset * WR.sum())
        grads.append(0.5 * h.output_scale * np.sum(WR * uu * self.log_pair))
        grads.append(0.5 * h.noise_var * np.trace(W))
        if packing.learn_prior_mean:
            grads.append(float(alpha.sum()))
        return float(value), np.array(grads, dtype=float)


def lml_and_grad(theta, X, s, y, packing: ParamPacking, prior_mean: float = 0.0):
    """Log marginal likelihood and its gradient w.r.t. the packed vector ``theta``."""
    return LMLObjective(X, s, y, packing, prior_mean)(theta)


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class HyperBounds:
    output_scale: tuple = (1e-3, 10.0)
    lengthscale: tuple = (1e-3, 10.0)
    ds_offset: tuple = (1e-4, 10.0)
    ds_exponent: tuple = (0.0, 5.0)
    noise_var: tuple = (1e-8, 1.0)


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 10
    max_iter: int = 200
    ard: bool = False
    bounds: HyperBounds = field(default_factory=HyperBounds)


@dataclass(frozen=True)
class FitResult:
    hyper: GPHyperparams
    lml: float
    initial_lmls: tuple


def _random_init(rng, packing: ParamPacking, bounds):
    theta = np.empty(packing.size)
    for i, (lo, hi) in enumerate(bounds):
        theta[i] = rng.uniform(lo, hi)
    if packing.ard:
        # isotropic start: ARD dimensions begin tied and separate only if the data demands it
        theta[1 : 1 + packing.n_ls] = theta[1]
    return theta


def fit_hyperparameters_detailed(
    X, s, y, config: FitConfig = FitConfig(), rng_seed=None, inits: Sequence[GPHyperparams] = ()
) -> FitResult:
    X, s = _prepare_inputs(X, s)
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("hyperparameter fitting needs at least 2 observations")
    packing = ParamPacking(X.shape[1], ard=config.ard)
    bounds = packing.bounds(config.bounds)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(rng_seed)

    starts = [np.clip(packing.pack(h), lo, hi) for h in inits]
    starts += [_random_init(rng, packing, bounds) for _ in range(config.restarts)]

    lml = LMLObjective(X, s, y, packing)

    def objective(theta):
        try:
            v, g = lml(theta)
        except GPNumericalError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return 1e25, np.zeros_like(theta)
        return -v, -g

    best_theta, best_val = None, -np.inf
    initial = []
    for theta0 in starts:
        f0, _ = objective(theta0)
        initial.append(-f0 if f0 < 1e25 else -np.inf)
        try:
            res = minimize(
                objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": config.max_iter},
            )
            theta, val = res.x, -res.fun
        except (ValueError, FloatingPointError) as exc:
            logger.debug("restart failed: %s", exc)
            continue
        if val < initial[-1]:
            theta, val = theta0, initial[-1]
        if np.isfinite(val) and val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None:
        raise GPNumericalError("all hyperparameter restarts failed")
    return FitResult(packing.unpack(best_theta), float(best_val), tuple(initial))


def fit_hyperparameters(X, s, y, config: FitConfig = FitConfig(), rng_seed=None, inits=()) -> GPHyperparams:
    """Maximize the log marginal likelihood over kernel and noise hyperparameters.

    The prior mean is held at 0; callers standardize scores first (see :func:`fit_gp`).
    """
    return fit_hyperparameters_detailed(X, s, y, config, rng_seed, inits).hyper


def standardization(y):
    y = np.asarray(y, dtype=float)
    offset = float(y.mean())
    scale = float(y.std()) if y.size > 1 else 1.0
    if not scale > 1e-12:
        scale = 1.0
    return offset, scale


def fit_gp(
    X, s, y, config: FitConfig = FitConfig(), rng_seed=None,
    hyper: Optional[GPHyperparams] = None, inits=(),
) -> FittedGP:
    """Standardize scores, fit hyperparameters (unless ``hyper`` is given) and condition.

    With a single observation there is nothing to fit and the default
    hyperparameters are used.
    """
    X, s = _prepare_inputs(X, s)
    y = np.asarray(y, dtype=float).ravel()
    offset, scale = standardization(y)
    z = (y - offset) / scale
    if hyper is None:
        if y.size < 2:
            hyper = GPHyperparams()
            if config.ard:
                hyper = replace(hyper, lengthscale=tuple([hyper.lengthscale] * X.shape[1]))
        else:
            hyper = fit_hyperparameters(X, s, z, config, rng_seed, inits)
    return FittedGP(X, s, y, hyper, y_offset=offset, y_scale=scale)
