"""Training over a continuum of risk levels.

All trainers share one step: evaluate the model on a stacked multi-domain
batch at a set of levels, freeze the aggregation weights at the current risk
profile, and back-propagate the weighted per-domain risks. They differ only
in where the levels come from:

* ``iro_train`` refits a Beta distribution each step so that the mean
  gradient over its samples has the smallest norm it can reach;
* ``plh_train`` samples from a fixed Beta prior;
* ``plf_train`` uses one fixed level (or a fresh uniform draw each step)
  with a model that ignores the level.
"""

import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import lambda_dist
from .errors import ConfigError, NumericError
from .lambda_dist import BetaParams
from .losses import loss_and_derivative
from .models import backward, init_params, value_and_state
from .risk import RISK_MEASURES, check_level, rho, rho_gradient_matrix
from .rng import stream

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(21))

_MAX_STEP_HALVINGS = 5


@dataclass(frozen=True)
class IroConfig:
    m: int = 20
    m_prime: int = 20
    eta: float = 1e-2
    eta_decay: float = 0.0
    inner_steps: int = 5
    inner_step_size: float = 1e-2
    fd_delta_ab: float = 1e-3
    epsilon_stop: float = 1e-4
    max_outer_steps: int = 500
    batch_size: int | None = None
    seed: int = 0
    risk_measure: str = "cvar"
    loss_kind: str | None = None
    q_init: tuple = (1.0, 1.0)
    # start each refit of Q from the previous step's shapes instead of q_init
    q_warm_start: bool = False

    def __post_init__(self):
        if self.m < 2 or self.m_prime < 2:
            raise ConfigError("m and m_prime must be at least 2")
        for name in ("eta", "inner_step_size", "fd_delta_ab", "epsilon_stop"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if not (math.isfinite(self.eta_decay) and self.eta_decay >= 0):
            raise ConfigError("eta_decay must be a non-negative number")
        if self.inner_steps < 0:
            raise ConfigError("inner_steps must be non-negative")
        if self.max_outer_steps < 1:
            raise ConfigError("max_outer_steps must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive or null")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.risk_measure not in RISK_MEASURES:
            raise ConfigError(f"risk_measure must be one of {RISK_MEASURES}")
        object.__setattr__(self, "q_init", tuple(float(v) for v in self.q_init))
        if len(self.q_init) != 2 or min(self.q_init) <= 0:
            raise ConfigError("q_init must be two positive shape parameters")

    def step_size(self, t):
        """Outer step size at step ``t``: ``eta / sqrt(1 + eta_decay * t)``."""
        return self.eta / math.sqrt(1.0 + self.eta_decay * t)

    def to_dict(self):
        d = asdict(self)
        d["q_init"] = list(self.q_init)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# -- stacked batches ----------------------------------------------------------

@dataclass(frozen=True)
class DomainBatch:
    """Samples of several domains concatenated; domain ``i`` occupies
    ``features[starts[i]:starts[i] + counts[i]]``."""

    features: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    counts: np.ndarray
    domain_ids: tuple

    def __len__(self):
        return self.counts.size


def stack_domains(domains):
    if isinstance(domains, DomainBatch):
        return domains
    if not domains:
        raise ConfigError("need at least one domain")
    counts = np.array([len(d.targets) for d in domains])
    if np.any(counts == 0):
        raise ConfigError("empty domain in training data")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return DomainBatch(
        np.concatenate([np.atleast_2d(np.asarray(d.features, dtype=float)) for d in domains]),
        np.concatenate([np.asarray(d.targets, dtype=float) for d in domains]),
        starts,
        counts,
        tuple(d.domain_id for d in domains),
    )


def minibatch(batch, batch_size, rng):
    """Per-domain subsample of at most ``batch_size`` rows, without replacement."""
    if batch_size is None or np.all(batch.counts <= batch_size):
        return batch
    rows = []
    for s, c in zip(batch.starts, batch.counts):
        take = min(c, batch_size)
        rows.append(s + np.sort(rng.choice(c, size=take, replace=False)))
    rows = np.concatenate(rows)
    counts = np.minimum(batch.counts, batch_size)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return DomainBatch(batch.features[rows], batch.targets[rows], starts, counts, batch.domain_ids)


def _loss_kind(model, loss_kind):
    return loss_kind or ("bce" if model.spec.output == "logit" else "squared")


def batch_risks(model, batch, lams, loss_kind=None):
    """Per-domain mean losses, shape ``(len(lams), num_domains)``."""
    batch = stack_domains(batch)
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    out, _ = value_and_state(model, batch.features, lams)
    loss, _ = loss_and_derivative(_loss_kind(model, loss_kind), out, batch.targets[None, :])
    return np.add.reduceat(loss, batch.starts, axis=1) / batch.counts


def level_gradients(model, batch, lams, risk_measure="cvar", loss_kind=None, per_level=True,
                    groups=None):
    """Risks and frozen-weight gradients of ``rho_lam`` at every level.

    Returns ``(risks, grads)`` with risks of shape ``(L, d)`` and grads of
    shape ``(L, P)``, or the ``(P,)`` sum over levels when ``per_level`` is
    false, or one summed row per group when ``groups`` labels the levels.
    """
    batch = stack_domains(batch)
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    out, state = value_and_state(model, batch.features, lams)
    loss, dl = loss_and_derivative(_loss_kind(model, loss_kind), out, batch.targets[None, :])
    risks = np.add.reduceat(loss, batch.starts, axis=1) / batch.counts
    weights = rho_gradient_matrix(risks, lams, risk_measure)
    per_sample = np.repeat(weights / batch.counts, batch.counts, axis=1)
    grads = backward(model, state, dl * per_sample, per_level=per_level, groups=groups)
    return risks, grads


# -- objective and its gradient -------------------------------------------------

def scalarized_objective(model, domains, lambdas, risk_measure="cvar", loss_kind=None):
    """Mean over ``lambdas`` of ``rho_lam`` with the model conditioned on ``lam``."""
    lams = [check_level(v) for v in np.atleast_1d(lambdas)]
    if not lams:
        raise ConfigError("lambdas must be non-empty")
    risks = batch_risks(model, domains, lams, loss_kind)
    return float(np.mean([rho(r, lam, risk_measure) for r, lam in zip(risks, lams)]))


def mc_scalarized_gradient(model, domains, lambdas, risk_measure="cvar", loss_kind=None):
    lams = np.array([check_level(v) for v in np.atleast_1d(lambdas)])
    if lams.size == 0:
        raise ConfigError("lambdas must be non-empty")
    _, g = level_gradients(model, domains, lams, risk_measure, loss_kind, per_level=False)
    return g / lams.size


# -- min-norm point of a convex hull --------------------------------------------

def _affine_min(M, S):
    """Minimum-norm point of the affine hull of the gradients in ``S``."""
    k = len(S)
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = M[np.ix_(S, S)]
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return sol[:k]


def _polish(M, q, tol, max_cycles=200):
    # Wolfe's active-set cycles, started from the Frank-Wolfe iterate
    S = [int(i) for i in np.flatnonzero(q > 0)]
    for _ in range(max_cycles):
        while True:
            y = _affine_min(M, S)
            qs = q[S]
            if np.all(y > 0):
                qs = y
            else:
                neg = y <= 0
                theta = np.min(qs[neg] / (qs[neg] - y[neg]))
                qs = (1.0 - theta) * qs + theta * y
            q = np.zeros_like(q)
            q[S] = np.clip(qs, 0.0, None)
            q /= q.sum()
            if np.all(y > 0):
                break
            S = [s for s in S if q[s] > 1e-15]
        Mq = M @ q
        i = int(np.argmin(Mq))
        if (q @ Mq) - Mq[i] <= tol or i in S:
            break
        S.append(i)
    return q


def min_norm_simplex(gradients, max_iter=500, gap_tol=1e-10):
    """Minimum-norm point of the convex hull of ``gradients``.

    Frank-Wolfe with away steps and the exact line search between two
    points; if the duality gap is still above ``gap_tol`` after
    ``max_iter`` iterations, a few active-set cycles finish the job.
    Returns ``(q, v)`` with ``v = q @ G``.
    """
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    k = G.shape[0]
    if k == 0:
        raise ConfigError("min_norm_simplex needs at least one gradient")
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite gradient passed to min_norm_simplex")
    if k == 1:
        return np.ones(1), G[0].copy()
    if not np.any(G):
        return np.full(k, 1.0 / k), np.zeros(G.shape[1])
    M = G @ G.T
    # start at the shortest gradient
    q = np.zeros(k)
    q[int(np.argmin(np.diag(M)))] = 1.0
    Mq = M @ q
    for _ in range(max_iter):
        vv = q @ Mq
        t = int(np.argmin(Mq))
        gap = vv - Mq[t]
        if gap <= gap_tol:
            break
        support = np.flatnonzero(q > 0)
        a = support[int(np.argmax(Mq[support]))]
        away_gap = Mq[a] - vv
        if gap >= away_gap:
            # toward vertex t: minimise |(1 - s) v + s g_t|^2 over s in [0, 1]
            d_dir = -q.copy()
            d_dir[t] += 1.0
            s_max = 1.0
        else:
            # away from vertex a
            d_dir = q.copy()
            d_dir[a] -= 1.0
            s_max = q[a] / (1.0 - q[a]) if q[a] < 1.0 else np.inf
        Md = M @ d_dir
        curv = d_dir @ Md
        if curv <= 0:
            break
        s = min(max(-(q @ Md) / curv, 0.0), s_max)
        q = q + s * d_dir
        q[q < 1e-18] = 0.0
        q /= q.sum()
        Mq = M @ q
    if (q @ Mq) - Mq.min() > gap_tol:
        q = _polish(M, q, gap_tol)
    return q, q @ G


# -- choosing the level distribution --------------------------------------------

def _clamp(v):
    return min(max(v, lambda_dist.ALPHA_MIN), lambda_dist.ALPHA_MAX)


def fit_beta_params(norm_fn, q_init, u_batch, steps, step_size, fd_delta):
    """Projected finite-difference descent of ``norm_fn`` over Beta shapes.

    ``norm_fn`` maps an ``(n, m)`` array of levels (one row per parameter
    pair) to ``n`` objective values. The uniforms in ``u_batch`` are shared
    by every evaluation. Returns the best parameters seen.
    """
    u = np.asarray(u_batch, dtype=float)
    a, b = q_init.alpha, q_init.beta
    best, best_val = q_init, math.inf
    h = step_size
    for k in range(steps + 1):
        alphas = np.array([a, a + fd_delta, a - fd_delta, a, a])
        betas = np.array([b, b, b, b + fd_delta, b - fd_delta])
        n = 1 if k == steps else 5
        lams = lambda_dist._icdf(alphas[:n, None], betas[:n, None], u[None, :])
        vals = norm_fn(lams)
        if not math.isfinite(vals[0]):
            return best
        if vals[0] < best_val:
            best, best_val = BetaParams(a, b), float(vals[0])
        if k == steps:
            break
        grad = np.array([vals[1] - vals[2], vals[3] - vals[4]]) / (2.0 * fd_delta)
        for _ in range(_MAX_STEP_HALVINGS):
            if np.all(np.isfinite(grad)):
                break
            h *= 0.5
            grad = np.nan_to_num(grad, nan=0.0, posinf=0.0, neginf=0.0)
        else:
            return best
        a, b = _clamp(a - h * grad[0]), _clamp(b - h * grad[1])
    return best


def fit_beta_q(model, domains, q_init, config, u_batch):
    """Beta distribution whose sampled levels give the smallest mean gradient."""
    batch = stack_domains(domains)
    u = np.asarray(u_batch, dtype=float)

    def norm_fn(lams):
        n, m = lams.shape
        _, g = level_gradients(model, batch, lams.ravel(), config.risk_measure, config.loss_kind,
                               groups=np.repeat(np.arange(n), m))
        return np.linalg.norm(g / m, axis=1)

    return fit_beta_params(norm_fn, q_init, u, config.inner_steps,
                           config.inner_step_size, config.fd_delta_ab)


def pareto_stationarity_residual(model, domains, lambda_grid=DEFAULT_GRID, risk_measure="cvar",
                                 loss_kind=None):
    """Norm of the min-norm point of the per-level gradients on a grid."""
    grid = np.array([check_level(v) for v in lambda_grid])
    if grid.size < 2:
        raise ConfigError("stationarity residual needs at least two grid levels")
    _, G = level_gradients(model, domains, grid, risk_measure, loss_kind)
    return float(np.linalg.norm(min_norm_simplex(G)[1]))


# -- training loops -------------------------------------------------------------

@dataclass
class TrainTrace:
    lambda_grid: tuple
    initial_risks: np.ndarray
    rows: list = field(default_factory=list)

    def record(self, step, q, grad_norm, risks):
        self.rows.append((step, q.alpha, q.beta, grad_norm, tuple(float(r) for r in risks)))

    @property
    def final_risks(self):
        return np.array(self.rows[-1][4]) if self.rows else self.initial_risks

    def columns(self):
        return ["step", "alpha", "beta", "grad_norm"] + [f"risk@{lam:g}" for lam in self.lambda_grid]

    def write_csv(self, path):
        """One row per completed step; grid risks are measured after the update."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for step, a, b, gn, risks in self.rows:
                w.writerow([step, repr(a), repr(b), repr(gn)] + [repr(r) for r in risks])


def _grid_values(model, batch, grid, config):
    if model.spec.film:
        risks = batch_risks(model, batch, grid, config.loss_kind)
    else:
        # a level-free model has one risk profile for every level
        risks = np.repeat(batch_risks(model, batch, grid[:1], config.loss_kind), len(grid), axis=0)
    return np.array([rho(r, lam, config.risk_measure) for r, lam in zip(risks, grid)])


def _descend(spec, domains, config, choose_levels, grid, init=None):
    """Shared gradient-descent loop; ``choose_levels(model, batch, t, q)``
    returns ``(q, levels)`` for step ``t``."""
    full = stack_domains(domains)
    grid = tuple(check_level(v) for v in grid)
    model = init if init is not None else init_params(spec, config.seed)
    if model.spec != spec:
        raise ConfigError("initial parameters do not match the architecture")
    q = BetaParams(*config.q_init)
    trace = TrainTrace(grid, _grid_values(model, full, grid, config))
    try:
        for t in range(config.max_outer_steps):
            batch = minibatch(full, config.batch_size, stream(config.seed, "minibatch", t))
            q, levels = choose_levels(model, batch, t, q)
            v = mc_scalarized_gradient(model, batch, levels, config.risk_measure, config.loss_kind)
            model = model.with_xi(model.xi - config.step_size(t) * v)
            grad_norm = float(np.linalg.norm(v))
            trace.record(t + 1, q, grad_norm, _grid_values(model, full, grid, config))
            if grad_norm <= config.epsilon_stop:
                break
    except NumericError as exc:
        exc.trace = trace
        raise
    return model, trace


def iro_train(spec, domains, config, grid=DEFAULT_GRID, init=None):
    """Imprecise risk optimisation; returns ``(params, trace)``.

    A level-free architecture or a single domain is accepted; both make
    every level's gradient identical, so the loop reduces to gradient
    descent on the pooled risk.
    """
    if not domains:
        raise ConfigError("iro_train needs at least one domain")

    def choose(model, batch, t, q):
        u = stream(config.seed, "q-uniforms", t).random(config.m)
        q = fit_beta_q(model, batch, q if config.q_warm_start else BetaParams(*config.q_init),
                       config, u)
        u_prime = stream(config.seed, "levels", t).random(config.m_prime)
        return q, lambda_dist.sample_crn(q, u_prime)

    return _descend(spec, domains, config, choose, grid, init)


def plh_train_traced(spec, domains, prior, config, grid=DEFAULT_GRID, init=None):
    if not spec.film:
        raise ConfigError("plh_train needs a level-conditioned architecture")

    def choose(model, batch, t, q):
        u = stream(config.seed, "levels", t).random(config.m_prime)
        return prior, lambda_dist.sample_crn(prior, u)

    return _descend(spec, domains, config, choose, grid, init)


def plh_train(spec, domains, prior, config):
    """Level-conditioned model trained with levels drawn from a fixed prior."""
    return plh_train_traced(spec, domains, prior, config)[0]


UNIFORM_RESAMPLE = "uniform-resample"


def plf_train_traced(spec, domains, lambda_fixed, config, grid=DEFAULT_GRID, init=None):
    if spec.film:
        raise ConfigError("plf_train needs an unconditioned architecture")
    resample = lambda_fixed == UNIFORM_RESAMPLE
    if not resample:
        lam = check_level(lambda_fixed)
    q = BetaParams(1.0, 1.0)

    def choose(model, batch, t, _q):
        if resample:
            return q, stream(config.seed, "levels", t).random(1)
        return q, np.array([lam])

    return _descend(spec, domains, config, choose, grid, init)


def plf_train(spec, domains, lambda_fixed, config):
    """Level-free model trained at one level, or at a fresh uniform level each step."""
    return plf_train_traced(spec, domains, lambda_fixed, config)[0]
