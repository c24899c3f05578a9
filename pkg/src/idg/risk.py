"""Per-domain risks and CVaR aggregation of risk profiles.

Every aggregation here is an explicit weighted average of the per-domain
risks: :func:`cvar_weights` returns a point of the simplex and
:func:`aggregate` takes the dot product.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .losses import binary_ce_loss, loss_values, squared_error_loss  # noqa: F401

__all__ = [
    "RiskProfile",
    "AggregationWeights",
    "RiskLevel",
    "squared_error_loss",
    "binary_ce_loss",
    "domain_risk",
    "risk_profile",
    "risk_matrix",
    "cvar_weights",
    "cvar_weight_matrix",
    "aggregate",
    "cvar",
    "cvar_vrex",
    "rho",
    "RISK_MEASURES",
]

RISK_MEASURES = ("cvar", "cvar_vrex")

# tolerance for deciding that lambda * d sits on an integer
_QUANTILE_EPS = 1e-9


@dataclass(frozen=True)
class RiskLevel:
    value: float

    def __post_init__(self):
        check_level(self.value)

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class RiskProfile:
    risks: np.ndarray
    domain_ids: tuple = field(default=())

    def __post_init__(self):
        r = _as_profile(self.risks)
        object.__setattr__(self, "risks", r)
        ids = tuple(self.domain_ids) or tuple(str(i) for i in range(r.size))
        if len(ids) != r.size:
            raise ConfigError("domain_ids and risks differ in length")
        object.__setattr__(self, "domain_ids", ids)

    def __len__(self):
        return self.risks.size

    def __array__(self, dtype=None, copy=None):
        return self.risks if dtype is None else self.risks.astype(dtype)


@dataclass(frozen=True)
class AggregationWeights:
    weights: np.ndarray
    lam: float

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


def check_level(lam):
    lam = float(lam)
    if not (0.0 <= lam <= 1.0):
        raise DomainError(f"risk level must lie in [0, 1], got {lam}")
    return lam


def _as_profile(profile):
    r = np.asarray(getattr(profile, "risks", profile), dtype=float).ravel()
    if r.size == 0:
        raise ConfigError("empty risk profile")
    if not np.all(np.isfinite(r)):
        raise DomainError("risk profile contains non-finite entries")
    if np.any(r < 0):
        raise DomainError("risk profile contains negative entries")
    return r


def cvar_weights(profile, lam):
    """Simplex weights realising CVaR at level ``lam`` as a weighted mean.

    Domains strictly above the ``lam``-quantile get ``1 / (d (1 - lam))``
    each; the remaining mass ``(F(r_lam) - lam) / (1 - lam)`` is shared
    equally by the domains tied at the quantile. At ``lam = 1`` the maximum
    takes all the mass (shared among ties).
    """
    r = _as_profile(profile)
    lam = check_level(lam)
    d = r.size
    if lam == 1.0:
        top = r == r.max()
        w = top / np.count_nonzero(top)
        return AggregationWeights(w.astype(float), lam)
    k = max(1, math.ceil(lam * d - _QUANTILE_EPS))
    r_lam = np.partition(r, k - 1)[k - 1]
    tied = r == r_lam
    above = r > r_lam
    F = np.count_nonzero(r <= r_lam) / d
    w = np.where(above, 1.0 / (d * (1.0 - lam)), 0.0)
    atom = max(F - lam, 0.0) / (1.0 - lam)
    w[tied] = atom / np.count_nonzero(tied)
    # absorb rounding so the weights sum to one
    w /= w.sum()
    return AggregationWeights(w, lam)


def cvar_weight_matrix(risks, lams):
    """Row ``j`` holds ``cvar_weights(risks[j], lams[j])``; vectorised over rows."""
    R = np.asarray(risks, dtype=float)
    lams = np.asarray(lams, dtype=float).ravel()
    if R.ndim != 2 or R.shape[0] != lams.size:
        raise ConfigError("risks must have one row per level")
    for lam in (lams.min(), lams.max()):
        check_level(lam)
    L, d = R.shape
    top = lams == 1.0
    safe = np.where(top, 0.0, lams)
    k = np.maximum(1, np.ceil(safe * d - _QUANTILE_EPS).astype(int))
    r_lam = np.sort(R, axis=1)[np.arange(L), k - 1]
    r_lam = np.where(top, R.max(axis=1), r_lam)
    tied = R == r_lam[:, None]
    above = R > r_lam[:, None]
    F = np.count_nonzero(R <= r_lam[:, None], axis=1) / d
    tail = np.where(top, 0.0, 1.0 / (d * (1.0 - safe)))
    atom = np.where(top, 1.0, np.maximum(F - safe, 0.0) / (1.0 - safe))
    W = np.where(above, tail[:, None], 0.0)
    W = np.where(tied, (atom / np.count_nonzero(tied, axis=1))[:, None], W)
    return W / W.sum(axis=1, keepdims=True)


def aggregate(profile, weights):
    r = _as_profile(profile)
    w = np.asarray(getattr(weights, "weights", weights), dtype=float).ravel()
    if w.size != r.size:
        raise ConfigError(f"weights of length {w.size} for a profile of length {r.size}")
    return float(w @ r)


def cvar(profile, lam):
    return aggregate(profile, cvar_weights(profile, lam))


def cvar_vrex(profile, lam):
    """CVaR plus ``lam`` times the population variance of the profile."""
    r = _as_profile(profile)
    lam = check_level(lam)
    return cvar(r, lam) + lam * float(np.var(r))


def rho(profile, lam, risk_measure="cvar"):
    if risk_measure == "cvar":
        return cvar(profile, lam)
    if risk_measure == "cvar_vrex":
        return cvar_vrex(profile, lam)
    raise ConfigError(f"unknown risk measure {risk_measure!r}")


def rho_gradient_weights(profile, lam, risk_measure="cvar"):
    """d rho / d R_i with the CVaR weights frozen at the current profile."""
    r = _as_profile(profile)
    w = cvar_weights(r, lam).weights
    if risk_measure == "cvar":
        return w
    if risk_measure == "cvar_vrex":
        return w + lam * 2.0 * (r - r.mean()) / r.size
    raise ConfigError(f"unknown risk measure {risk_measure!r}")


def rho_gradient_matrix(risks, lams, risk_measure="cvar"):
    """Row-wise :func:`rho_gradient_weights` for a ``(L, d)`` risk matrix."""
    R = np.asarray(risks, dtype=float)
    lams = np.asarray(lams, dtype=float).ravel()
    W = cvar_weight_matrix(R, lams)
    if risk_measure == "cvar":
        return W
    if risk_measure == "cvar_vrex":
        return W + lams[:, None] * 2.0 * (R - R.mean(axis=1, keepdims=True)) / R.shape[1]
    raise ConfigError(f"unknown risk measure {risk_measure!r}")


def _default_loss(model):
    return "bce" if model.spec.output == "logit" else "squared"


def risk_matrix(model, domains, lams, loss_kind=None):
    """Risks of every domain for every level; shape ``(len(lams), len(domains))``.

    Row ``j`` is the profile of the model conditioned on ``lams[j]``.
    """
    from .models import forward_batch

    loss_kind = loss_kind or _default_loss(model)
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    out = np.empty((lams.size, len(domains)))
    for i, dom in enumerate(domains):
        if len(dom.targets) == 0:
            raise ConfigError(f"domain {dom.domain_id!r} is empty")
        pred = forward_batch(model, dom.features, lams)
        out[:, i] = loss_values(loss_kind, pred, dom.targets[None, :]).mean(axis=1)
    return out


def domain_risk(model, domain, lam, loss_kind=None):
    lam = check_level(lam)
    return float(risk_matrix(model, [domain], [lam], loss_kind)[0, 0])


def risk_profile(model, domains, lam, loss_kind=None):
    if not domains:
        raise ConfigError("risk_profile needs at least one domain")
    lam = check_level(lam)
    risks = risk_matrix(model, domains, [lam], loss_kind)[0]
    return RiskProfile(risks, tuple(d.domain_id for d in domains))
