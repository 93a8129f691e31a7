"""Maximum marginal likelihood fits for the parametric prior families.

Parameters are optimized on an unconstrained scale: a logit transform for
the slab weight (alpha), a log transform for the slab scale (beta), and the
untransformed mode (gamma) when it is estimated. The default solver is a
Newton-type method with analytic gradients and a finite-difference Hessian,
safeguarded by backtracking line search with a gradient-descent fallback.

Boundary fits (the degenerate point mass and the pure slab) are always
evaluated as candidates, so the returned fit never falls below either; a
fit within 1e-6 log-units of the point mass is canonicalized to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .kernels import (
    _laplace_branch_logs,
    log_marginal_exp,
    log_marginal_point,
    norm_cdf_hazard,
)
from .model import ObservationSet, ParametricPrior, point_mass_prior

GRAD_TOL = 1e-8
OBJ_TOL = 1e-10
MAX_ITER = 200
HESS_STEP = 1e-4
# Log-likelihood slack under which a slab fit collapses to the point mass.
CANONICAL_TOL = 1e-6


@dataclass(frozen=True)
class TransformedParams:
    """Unconstrained optimizer coordinates; None marks an inactive field.

    alpha = logit of the slab weight 1 - pi0, beta = log of the slab scale,
    gamma = mode location (untransformed).
    """

    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None

    def as_array(self) -> np.ndarray:
        return np.array(
            [v for v in (self.alpha, self.beta, self.gamma) if v is not None],
            dtype=float,
        )

    def with_array(self, values: np.ndarray) -> "TransformedParams":
        vals = list(float(v) for v in values)
        out = {}
        for name in ("alpha", "beta", "gamma"):
            out[name] = vals.pop(0) if getattr(self, name) is not None else None
        return TransformedParams(**out)


class OptimizationError(RuntimeError):
    """No start converged; carries the best iterate seen."""

    def __init__(self, message, best: Optional[TransformedParams] = None, value=math.inf):
        super().__init__(message)
        self.best = best
        self.value = value


def _softplus(x):
    return np.logaddexp(0.0, x)


def _fd_hessian(fun, x: np.ndarray) -> np.ndarray:
    d = x.size
    hess = np.empty((d, d))
    for j in range(d):
        h = HESS_STEP * max(1.0, abs(x[j]))
        step = np.zeros(d)
        step[j] = h
        _, gp = fun(x + step)
        _, gm = fun(x - step)
        hess[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def _line_search(fun, x, f, g, d):
    """Backtracking Armijo search; returns (x, f, g) or None if no decrease."""
    gd = float(g @ d)
    if not np.isfinite(gd) or gd >= 0:
        return None
    t = 1.0
    while t >= 1e-18:
        xn = x + t * d
        fn, gn = fun(xn)
        if np.isfinite(fn) and fn <= f + 1e-4 * t * gd:
            return xn, fn, gn
        t *= 0.5
    return None


def _minimize(fun, x0: np.ndarray):
    """Newton with FD Hessian; returns (x, f, converged)."""
    x = np.asarray(x0, dtype=float).copy()
    if x.size == 0:
        f, _ = fun(x)
        return x, f, True
    f, g = fun(x)
    if not np.isfinite(f):
        raise OptimizationError("objective not finite at start", None, f)
    for _ in range(MAX_ITER):
        if np.max(np.abs(g)) <= GRAD_TOL:
            return x, f, True
        hess = _fd_hessian(fun, x)
        step = None
        try:
            newton = np.linalg.solve(hess, -g)
            if np.all(np.isfinite(newton)):
                step = _line_search(fun, x, f, g, newton)
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            step = _line_search(fun, x, f, g, -g)
        if step is None:
            # No descent along the gradient either: numerical floor reached.
            return x, f, True
        xn, fn, gn = step
        done = (f - fn) <= OBJ_TOL * max(1.0, abs(fn))
        x, f, g = xn, fn, gn
        if done:
            return x, f, True
    return x, f, False


def optimize_transformed(
    objective: Callable[[TransformedParams], tuple],
    starts: Sequence[TransformedParams],
) -> TransformedParams:
    """Minimize over all starts; return the best converged local optimum.

    ``objective(tp)`` must return ``(value, gradient)`` with the gradient
    aligned to the active fields of ``tp``. Convergence is declared when the
    gradient infinity-norm falls below 1e-8 or the relative objective change
    drops below 1e-10. Raises OptimizationError (best iterate attached) if
    no start converges.
    """
    if not starts:
        raise ValueError("at least one start is required")
    best_val = math.inf
    best_tp = None
    best_converged = False
    for tp0 in starts:
        def fun(vec, _tp0=tp0):
            return objective(_tp0.with_array(vec))

        x, f, converged = _minimize(fun, tp0.as_array())
        tp = tp0.with_array(x)
        if (converged, -f) > (best_converged, -best_val):
            best_val, best_tp, best_converged = f, tp, converged
    if not best_converged:
        raise OptimizationError("no optimizer start converged", best_tp, best_val)
    return best_tp


# ---------------------------------------------------------------------------
# Family objectives (negative marginal log-likelihood with analytic gradient).
# ---------------------------------------------------------------------------

_SLAB_KIND = {
    "normal": "normal",
    "point_normal": "normal",
    "point_laplace": "laplace",
    "point_exponential": "exponential",
}


def _slab_terms(kind: str, x, s, mu: float, scale: float):
    """Slab marginal log-density and its derivatives.

    Returns (logl, d logl / d log(scale), d logl / d mu) as vectors; scale
    is the slab variance for normal slabs and the rate for the others.
    """
    z = x - mu
    if kind == "normal":
        v = scale + s * s
        logl = -0.5 * (np.log(2.0 * math.pi * v) + z * z / v)
        dscale = 0.5 * (z * z / v - 1.0) / v
        return logl, scale * dscale, z / v
    if kind == "laplace":
        a = scale
        lpos, lneg = _laplace_branch_logs(x, s, mu, a)
        tot = np.logaddexp(lpos, lneg)
        wp = np.exp(lpos - tot)
        wn = np.exp(lneg - tot)
        hp = norm_cdf_hazard(z / s - a * s)
        hn = norm_cdf_hazard(-z / s - a * s)
        logl = math.log(a / 2.0) + tot
        da = 1.0 / a + wp * (a * s * s - z - s * hp) + wn * (a * s * s + z - s * hn)
        dz = wp * (-a + hp / s) + wn * (a - hn / s)
        return logl, a * da, -dz
    if kind == "exponential":
        a = scale
        u = z / s - a * s
        h = norm_cdf_hazard(u)
        logl = log_marginal_exp(z, s, a)
        da = 1.0 / a + a * s * s - z - s * h
        dz = -a + h / s
        return logl, a * da, -dz
    raise ValueError(f"unknown slab kind {kind!r}")


def make_objective(
    obs: ObservationSet,
    family: str,
    fixed_mode: float = 0.0,
    fixed_scale: Optional[float] = None,
    spike: bool = True,
):
    """Build the negative log-likelihood objective for one family.

    Active coordinates follow the TransformedParams passed at call time:
    alpha is used only when ``spike`` (ignored for the pure normal family),
    beta only when ``fixed_scale`` is None, gamma only when present.
    """
    kind = _SLAB_KIND[family]
    if family == "normal":
        spike = False
    x, s = obs.x, obs.s

    def objective(tp: TransformedParams):
        mu = fixed_mode if tp.gamma is None else tp.gamma
        if tp.beta is None:
            scale = fixed_scale
        else:
            with np.errstate(over="ignore"):
                scale = math.exp(tp.beta) if tp.beta < 709 else math.inf
        if not np.isfinite(scale):
            grad = np.full(tp.as_array().size, np.nan)
            return math.inf, grad
        slab_logl, slab_dbeta, slab_dmu = _slab_terms(kind, x, s, mu, scale)
        grad = []
        if spike and tp.alpha is not None:
            alpha = tp.alpha
            log_w = -_softplus(-alpha)
            log_pi0 = -_softplus(alpha)
            spike_logl = log_marginal_point(x, s, mu)
            l1 = log_w + slab_logl
            l0 = log_pi0 + spike_logl
            ll = np.logaddexp(l0, l1)
            r1 = np.exp(l1 - ll)
            r0 = np.exp(l0 - ll)
            w = expit(alpha)
            pi0 = expit(-alpha)
            nll = -float(np.sum(ll))
            grad.append(-(pi0 * float(np.sum(r1)) - w * float(np.sum(r0))))
            if tp.beta is not None:
                grad.append(-float(np.sum(r1 * slab_dbeta)))
            if tp.gamma is not None:
                spike_dmu = (x - mu) / (s * s)
                grad.append(-float(np.sum(r0 * spike_dmu + r1 * slab_dmu)))
        else:
            nll = -float(np.sum(slab_logl))
            if tp.beta is not None:
                grad.append(-float(np.sum(slab_dbeta)))
            if tp.gamma is not None:
                grad.append(-float(np.sum(slab_dmu)))
        return nll, np.array(grad)

    return objective


# ---------------------------------------------------------------------------
# Starting points and boundary candidates.
# ---------------------------------------------------------------------------

def _weighted_median(x: np.ndarray, w: np.ndarray) -> float:
    order = np.argsort(x)
    cw = np.cumsum(w[order])
    idx = int(np.searchsorted(cw, 0.5 * cw[-1]))
    return float(x[order][min(idx, x.size - 1)])


def _moment_scale(obs: ObservationSet, mu: float, kind: str) -> float:
    z = obs.x - mu
    v = float(np.mean(z * z - obs.s * obs.s))
    v = max(v, 1e-3 * float(np.mean(obs.s * obs.s)))
    if kind == "normal":
        return v
    return math.sqrt(2.0 / v)


def _precision_weighted_mean(obs: ObservationSet) -> float:
    w = 1.0 / (obs.s * obs.s)
    return float(np.sum(w * obs.x) / np.sum(w))


def _delta_loglik(obs: ObservationSet, mu: float) -> float:
    return float(np.sum(log_marginal_point(obs.x, obs.s, mu)))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _fit_slab_only(obs, family, fixed_mode, fixed_scale, estimate_mode, start_scale, start_mu):
    """Best pure-slab fit (pi0 = 0); returns (loglik, mu, scale) or None."""
    obj = make_objective(obs, family, fixed_mode=fixed_mode, fixed_scale=fixed_scale, spike=False)
    gamma = start_mu if estimate_mode else None
    if fixed_scale is None:
        starts = [
            TransformedParams(beta=math.log(start_scale), gamma=gamma),
            TransformedParams(beta=math.log(start_scale) - 3.0, gamma=gamma),
        ]
    else:
        starts = [TransformedParams(gamma=gamma)]
    try:
        tp = optimize_transformed(obj, starts)
    except OptimizationError:
        return None
    nll, _ = obj(tp)
    mu = tp.gamma if tp.gamma is not None else fixed_mode
    scale = fixed_scale if tp.beta is None else math.exp(tp.beta)
    return -nll, mu, scale


def _fit_point_family(obs, family, mode, scale, g_init):
    estimate_mode = mode == "estimate"
    fixed_mode = 0.0 if estimate_mode else float(mode)
    fixed_scale = scale
    kind = _SLAB_KIND[family]

    mu0 = _weighted_median(obs.x, 1.0 / obs.s**2) if estimate_mode else fixed_mode
    scale0 = _moment_scale(obs, mu0, kind)
    gamma0 = mu0 if estimate_mode else None

    def tp(alpha, sc):
        beta = None if fixed_scale is not None else math.log(sc)
        return TransformedParams(alpha=alpha, beta=beta, gamma=gamma0)

    starts = [tp(_logit(0.5), scale0), tp(_logit(0.05), scale0)]
    if isinstance(g_init, ParametricPrior) and g_init.family == family:
        pi0 = min(max(g_init.pi0, 1e-6), 1.0 - 1e-6)
        sc = max(g_init.scale, 1e-8 * scale0)
        starts.append(
            TransformedParams(
                alpha=_logit(1.0 - pi0),
                beta=None if fixed_scale is not None else math.log(sc),
                gamma=g_init.mu if estimate_mode else None,
            )
        )

    obj = make_objective(obs, family, fixed_mode=fixed_mode, fixed_scale=fixed_scale)
    best_tp = optimize_transformed(obj, starts)
    ll_main = -obj(best_tp)[0]

    mu_delta = _precision_weighted_mean(obs) if estimate_mode else fixed_mode
    ll_delta = _delta_loglik(obs, mu_delta)

    slab = _fit_slab_only(obs, family, fixed_mode, fixed_scale, estimate_mode, scale0, mu0)

    ll_best = max(ll_main, ll_delta, slab[0] if slab else -math.inf)
    if ll_delta >= ll_best - CANONICAL_TOL:
        return point_mass_prior(family, mu_delta)
    if slab is not None and slab[0] >= ll_best:
        _, mu_s, scale_s = slab
        return ParametricPrior(family=family, mu=mu_s, pi0=0.0, scale=scale_s)
    pi0 = float(expit(-best_tp.alpha))
    if pi0 > 1.0 - 1e-6:
        return point_mass_prior(family, mu_delta)
    mu = best_tp.gamma if best_tp.gamma is not None else fixed_mode
    fitted_scale = fixed_scale if best_tp.beta is None else math.exp(best_tp.beta)
    return ParametricPrior(family=family, mu=float(mu), pi0=pi0, scale=float(fitted_scale))


# ---------------------------------------------------------------------------
# Public fitting operations.
# ---------------------------------------------------------------------------

def fit_normal(
    obs: ObservationSet,
    mode: Union[float, str] = 0.0,
    scale: Optional[float] = None,
    g_init=None,
    _force_numeric: bool = False,
) -> ParametricPrior:
    """Fit a normal prior N(mu, scale) by maximum marginal likelihood.

    Homoskedastic data uses the closed form (mean and excess variance);
    heteroskedastic data maximizes the closed-form likelihood numerically.
    A zero fitted variance returns the canonical point mass.
    """
    estimate_mode = mode == "estimate"
    fixed_mode = 0.0 if estimate_mode else float(mode)

    if scale is None and obs.is_homoskedastic() and not _force_numeric:
        mu = float(np.mean(obs.x)) if estimate_mode else fixed_mode
        sigma2 = max(0.0, float(np.mean((obs.x - mu) ** 2) - obs.s[0] ** 2))
        if sigma2 == 0.0:
            return point_mass_prior("normal", mu)
        return ParametricPrior(family="normal", mu=mu, pi0=0.0, scale=sigma2)

    mu0 = _precision_weighted_mean(obs) if estimate_mode else fixed_mode
    scale0 = _moment_scale(obs, mu0, "normal")
    slab = _fit_slab_only(obs, "normal", fixed_mode, scale, estimate_mode, scale0, mu0)

    mu_delta = _precision_weighted_mean(obs) if estimate_mode else fixed_mode
    ll_delta = _delta_loglik(obs, mu_delta)
    if scale is None and (slab is None or ll_delta >= slab[0] - CANONICAL_TOL):
        return point_mass_prior("normal", mu_delta)
    if slab is None:
        raise OptimizationError("normal-family optimization failed")
    _, mu, fitted_scale = slab
    return ParametricPrior(family="normal", mu=float(mu), pi0=0.0, scale=float(fitted_scale))


def fit_point_normal(obs, mode: Union[float, str] = 0.0, scale=None, g_init=None):
    """Fit pi0 * delta(mu) + (1 - pi0) * N(mu, scale)."""
    return _fit_point_family(obs, "point_normal", mode, scale, g_init)


def fit_point_laplace(obs, mode: Union[float, str] = 0.0, scale=None, g_init=None):
    """Fit pi0 * delta(mu) + (1 - pi0) * Laplace(mu, scale)."""
    return _fit_point_family(obs, "point_laplace", mode, scale, g_init)


def fit_point_exponential(obs, mode: float = 0.0, scale=None, g_init=None):
    """Fit pi0 * delta(mu) + (1 - pi0) * Exp(scale) shifted to mode mu.

    The mode is always fixed (no estimation for this family).
    """
    if mode == "estimate":
        raise ValueError("point_exponential does not support mode estimation")
    return _fit_point_family(obs, "point_exponential", float(mode), scale, g_init)
