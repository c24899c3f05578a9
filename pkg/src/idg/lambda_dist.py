"""Beta distributions over risk levels in [0, 1].

The CDF is the regularised incomplete beta function evaluated by its
continued fraction (modified Lentz); the inverse CDF is a bracketed
Halley/bisection search on that CDF. Both are vectorised over numpy arrays
so that many ``(alpha, beta, u)`` triples can be solved in one call.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

ALPHA_MIN = 0.05
ALPHA_MAX = 50.0

ICDF_TOL = 1e-12
ICDF_MAX_ITER = 200
FD_DELTA = 1e-6

_CF_MAX_ITER = 400
_CF_EPS = 1e-15
_TINY = 1e-300

_lgamma = np.vectorize(math.lgamma, otypes=[float])


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters, clamped into ``[ALPHA_MIN, ALPHA_MAX]``."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"BetaParams.{name} must be finite")
            object.__setattr__(self, name, min(max(v, ALPHA_MIN), ALPHA_MAX))

    @property
    def mean(self):
        return self.alpha / (self.alpha + self.beta)

    def as_tuple(self):
        return (self.alpha, self.beta)


def _guard(v):
    v[np.abs(v) < _TINY] = _TINY
    return v


def _betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 / _guard(1.0 - qab * x / qap)
    h = d.copy()
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 / _guard(1.0 + aa * d)
        c = _guard(1.0 + aa / c)
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 / _guard(1.0 + aa * d)
        c = _guard(1.0 + aa / c)
        delta = d * c
        h *= delta
        if np.abs(delta - 1.0).max() < _CF_EPS:
            break
    return h


def _log_beta(a, b):
    return _lgamma(a) + _lgamma(b) - _lgamma(a + b)


def betainc(a, b, x):
    """Regularised incomplete beta ``I_x(a, b)``, broadcasting over inputs."""
    a, b, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x)))
    out = np.empty(x.shape)
    lo = x <= 0.0
    hi = x >= 1.0
    out[lo] = 0.0
    out[hi] = 1.0
    mid = ~(lo | hi)
    if np.any(mid):
        am, bm, xm = a[mid], b[mid], x[mid]
        lbt = -_log_beta(am, bm) + am * np.log(xm) + bm * np.log1p(-xm)
        bt = np.exp(lbt)
        direct = xm < (am + 1.0) / (am + bm + 2.0)
        # evaluate the fraction where it converges fast; use symmetry elsewhere
        aa = np.where(direct, am, bm)
        bb = np.where(direct, bm, am)
        xx = np.where(direct, xm, 1.0 - xm)
        cf = _betacf(aa, bb, xx)
        val = np.where(direct, bt * cf / am, 1.0 - bt * cf / bm)
        out[mid] = np.clip(val, 0.0, 1.0)
    return out


def _beta_pdf(a, b, x):
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - _log_beta(a, b)
    return np.exp(lp)


def _check_unit(v, name):
    v = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return v


def beta_cdf(params, x):
    x = _check_unit(x, "x")
    val = betainc(params.alpha, params.beta, x)
    return float(val) if val.ndim == 0 else val


def _initial_guess(a, b, u):
    # closed-form approximations of the Beta quantile (Abramowitz & Stegun
    # 26.5.22 for a, b >= 1, a power-law tail expansion otherwise)
    x = np.empty_like(u)
    big = (a >= 1.0) & (b >= 1.0)
    if np.any(big):
        ab, bb, ub = a[big], b[big], u[big]
        pp = np.where(ub < 0.5, ub, 1.0 - ub)
        t = np.sqrt(-2.0 * np.log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        z = np.where(ub < 0.5, -z, z)
        al = (z * z - 3.0) / 6.0
        h = 2.0 / (1.0 / (2.0 * ab - 1.0) + 1.0 / (2.0 * bb - 1.0))
        w = z * np.sqrt(al + h) / h - (1.0 / (2.0 * bb - 1.0) - 1.0 / (2.0 * ab - 1.0)) * (
            al + 5.0 / 6.0 - 2.0 / (3.0 * h))
        x[big] = ab / (ab + bb * np.exp(2.0 * w))
    small = ~big
    if np.any(small):
        a_s, b_s, u_s = a[small], b[small], u[small]
        lna = np.log(a_s / (a_s + b_s))
        lnb = np.log(b_s / (a_s + b_s))
        t = np.exp(a_s * lna) / a_s
        v = np.exp(b_s * lnb) / b_s
        w = t + v
        left = u_s < t / w
        with np.errstate(divide="ignore", over="ignore", under="ignore"):
            xl = np.power(a_s * w * u_s, 1.0 / a_s)
            xr = 1.0 - np.power(b_s * w * (1.0 - u_s), 1.0 / b_s)
        x[small] = np.where(left, xl, xr)
    return np.clip(np.nan_to_num(x, nan=0.5), 1e-300, 1.0 - 1e-16)


def _icdf(a, b, u, tol=ICDF_TOL, max_iter=ICDF_MAX_ITER):
    """Vectorised quantile search.

    Halley steps from a closed-form initial guess, safeguarded by a bracket
    ``[lo, hi]`` that always contains the root: a step that leaves the
    bracket, or fails to halve the residual, is replaced by bisection.
    """
    a, b, u = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, u)))
    shape = u.shape
    a, b, u = a.ravel().copy(), b.ravel().copy(), u.ravel().copy()
    x = np.where(u <= 0.0, 0.0, np.where(u >= 1.0, 1.0, np.nan))
    todo = np.flatnonzero(np.isnan(x))
    if todo.size:
        aa, bb, uu = a[todo], b[todo], u[todo]
        lo = np.zeros(todo.size)
        hi = np.ones(todo.size)
        f_lo = -uu
        f_hi = 1.0 - uu
        xx = _initial_guess(aa, bb, uu)
        prev_f = np.full(todo.size, np.inf)
        active = np.ones(todo.size, dtype=bool)
        for _ in range(max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xa, ai, bi = xx[idx], aa[idx], bb[idx]
            f = betainc(ai, bi, xa) - uu[idx]
            below = f < 0
            lo[idx] = np.where(below, xa, lo[idx])
            f_lo[idx] = np.where(below, f, f_lo[idx])
            hi[idx] = np.where(below, hi[idx], xa)
            f_hi[idx] = np.where(below, f_hi[idx], f)
            l, h = lo[idx], hi[idx]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                step = f / _beta_pdf(ai, bi, xa)
                curv = (ai - 1.0) / xa - (bi - 1.0) / (1.0 - xa)
                step = step / (1.0 - 0.5 * np.minimum(1.0, step * curv))
                cand = xa - step
            inside = np.isfinite(cand) & (cand > l) & (cand < h)
            # Halley is kept only while it at least halves the residual
            use_halley = inside & (np.abs(f) <= 0.5 * prev_f[idx])
            mid = 0.5 * (l + h)
            # bisect geometrically when the bracket spans many decades near 0
            geo = (l > 0.0) & (h > 1e3 * l)
            mid = np.where(geo, np.sqrt(l * h), mid)
            mid = np.where(l == 0.0, np.minimum(mid, 1e-3 * h), mid)
            prev_f[idx] = np.abs(f)
            nxt = np.where(use_halley, cand, mid)
            # within tolerance: one last Halley step (cubically convergent) and stop
            done = np.abs(f) <= tol
            # no double left strictly inside the bracket
            collapsed = np.nextafter(l, 2.0) >= h
            best = np.where(np.abs(f_lo[idx]) <= np.abs(f_hi[idx]), l, h)
            final = np.where(done & inside, cand, xa)
            xx[idx] = np.where(f == 0.0, xa, np.where(collapsed, best, np.where(done, final, nxt)))
            active[idx[done | collapsed | (f == 0.0)]] = False
        x[todo] = xx
    return np.clip(x, 0.0, 1.0).reshape(shape)


def beta_icdf(params, u):
    """Quantile of ``Beta(alpha, beta)`` at ``u``."""
    u = _check_unit(u, "u")
    val = _icdf(params.alpha, params.beta, u)
    return float(val) if val.ndim == 0 else val


def beta_icdf_array(alpha, beta, u):
    """Elementwise quantiles over broadcastable arrays of shapes and levels."""
    u = _check_unit(u, "u")
    a, b = (np.asarray(v, dtype=float) for v in (alpha, beta))
    if not (np.all(np.isfinite(a) & (a > 0)) and np.all(np.isfinite(b) & (b > 0))):
        raise DomainError("shape parameters must be positive and finite")
    return _icdf(a, b, u)


def icdf_fd_grad(params, u, delta=FD_DELTA, central=False):
    """Finite-difference derivatives of the quantile in ``alpha`` and ``beta``.

    One-sided forward differences with ``delta = 1e-6`` by default; the
    central variant exists for testing. Shifted parameters are not clamped.
    """
    u = float(u)
    if not 0.0 <= u <= 1.0:
        raise DomainError("u must lie in [0, 1]")
    if u in (0.0, 1.0):
        return 0.0, 0.0
    a, b = params.alpha, params.beta
    if central:
        pts = _icdf([a + delta, a - delta, a, a], [b, b, b + delta, b - delta], u)
        return (float((pts[0] - pts[1]) / (2 * delta)), float((pts[2] - pts[3]) / (2 * delta)))
    pts = _icdf([a, a + delta, a], [b, b, b + delta], u)
    return float((pts[1] - pts[0]) / delta), float((pts[2] - pts[0]) / delta)


def sample_crn(params, u_batch):
    """Map a fixed batch of uniforms through the quantile function.

    Holding ``u_batch`` fixed while ``params`` change gives a smooth
    reparameterised path of samples.
    """
    u = _check_unit(u_batch, "u_batch")
    if u.size == 0:
        raise DomainError("u_batch must be non-empty")
    return _icdf(params.alpha, params.beta, u)


def sample_many(param_list, u_batch):
    """Quantiles for several parameter pairs sharing the same uniforms.

    Returns an array of shape ``(len(param_list), len(u_batch))``.
    """
    u = _check_unit(u_batch, "u_batch")
    a = np.array([p.alpha for p in param_list])[:, None]
    b = np.array([p.beta for p in param_list])[:, None]
    return _icdf(a, b, u[None, :])
