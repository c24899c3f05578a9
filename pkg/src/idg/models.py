"""Dense networks conditioned on a risk level through FiLM modulation.

A hidden layer computes ``act(gamma(lam) * (a @ W + b) + beta(lam))`` with
``gamma(lam) = g0 + g1 * lam`` and ``beta(lam) = b0 + b1 * lam`` per unit.
Networks without hidden layers apply the same modulation to the output.

All parameters live in one flat float64 vector ``xi``. Evaluation is
vectorised over a batch of levels: ``forward_batch`` returns an array of
shape ``(n_levels, n_samples)`` and ``backward`` returns one gradient row
per level (or their sum).
"""

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .losses import loss_and_derivative

ACTIVATIONS = ("identity", "relu", "tanh")
OUTPUTS = ("scalar-regression", "logit")
CONDITIONINGS = ("none", "film-affine")

CHECKPOINT_FORMAT = "idg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int
    hidden_layers: tuple = ()
    activation: str = "tanh"
    output: str = "scalar-regression"
    conditioning: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if int(self.input_dim) < 1:
            raise ConfigError("input_dim must be positive")
        object.__setattr__(self, "input_dim", int(self.input_dim))
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError("hidden widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.output not in OUTPUTS:
            raise ConfigError(f"output must be one of {OUTPUTS}")
        if self.conditioning not in CONDITIONINGS:
            raise ConfigError(f"conditioning must be one of {CONDITIONINGS}")

    @property
    def film(self):
        return self.conditioning == "film-affine"

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "activation": self.activation,
            "output": self.output,
            "conditioning": self.conditioning,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def precise(self):
        """The same architecture without conditioning."""
        return ArchitectureSpec(self.input_dim, self.hidden_layers, self.activation,
                                self.output, "none")

    def augmented(self):
        return ArchitectureSpec(self.input_dim, self.hidden_layers, self.activation,
                                self.output, "film-affine")


@lru_cache(maxsize=None)
def layout(spec):
    """Ordered ``(name, shape, offset)`` triples describing ``xi``."""
    entries = []
    offset = 0

    def add(name, shape):
        nonlocal offset
        entries.append((name, shape, offset))
        offset += int(np.prod(shape))

    fan_in = spec.input_dim
    for k, width in enumerate(spec.hidden_layers):
        add(f"W{k}", (fan_in, width))
        add(f"b{k}", (width,))
        if spec.film:
            for nm in ("g0", "g1", "c0", "c1"):
                add(f"{nm}_{k}", (width,))
        fan_in = width
    add("W_out", (fan_in, 1))
    add("b_out", (1,))
    if spec.film and not spec.hidden_layers:
        for nm in ("g0", "g1", "c0", "c1"):
            add(f"{nm}_out", (1,))
    return tuple(entries), offset


def param_count(spec):
    return layout(spec)[1]


@dataclass
class AugmentedParams:
    spec: ArchitectureSpec
    xi: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        n = param_count(self.spec)
        if self.xi.shape != (n,):
            raise ConfigError(f"expected {n} parameters, got shape {self.xi.shape}")
        if not np.all(np.isfinite(self.xi)):
            raise NumericError("parameter vector contains non-finite values")

    def copy(self):
        return AugmentedParams(self.spec, self.xi.copy())

    def with_xi(self, xi):
        return AugmentedParams(self.spec, xi)


def unflatten(params):
    """Views into ``params.xi`` keyed by parameter name."""
    entries, _ = layout(params.spec)
    return {name: params.xi[off:off + int(np.prod(shape))].reshape(shape)
            for name, shape, off in entries}


def flatten(spec, arrays):
    entries, n = layout(spec)
    xi = np.empty(n)
    for name, shape, off in entries:
        xi[off:off + int(np.prod(shape))] = np.asarray(arrays[name], dtype=float).ravel()
    return xi


def init_params(spec, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; FiLM at identity."""
    from .rng import stream

    rng = stream(seed, "init")
    arrays = {}
    fan_in = spec.input_dim
    for k, width in enumerate(spec.hidden_layers):
        bound = 1.0 / np.sqrt(fan_in)
        arrays[f"W{k}"] = rng.uniform(-bound, bound, (fan_in, width))
        arrays[f"b{k}"] = rng.uniform(-bound, bound, width)
        fan_in = width
    bound = 1.0 / np.sqrt(fan_in)
    arrays["W_out"] = rng.uniform(-bound, bound, (fan_in, 1))
    arrays["b_out"] = rng.uniform(-bound, bound, 1)
    if spec.film:
        suffixes = [str(k) for k in range(len(spec.hidden_layers))] or ["out"]
        for s in suffixes:
            width = arrays[f"b{s}"].size if s != "out" else 1
            arrays[f"g0_{s}"] = np.ones(width)
            arrays[f"g1_{s}"] = np.zeros(width)
            arrays[f"c0_{s}"] = np.zeros(width)
            arrays[f"c1_{s}"] = np.zeros(width)
    return AugmentedParams(spec, flatten(spec, arrays))


def film_modulate(z, lam, gamma_coeffs, beta_coeffs):
    """``(g0 + g1 lam) * z + (b0 + b1 lam)`` elementwise."""
    z = np.asarray(z, dtype=float)
    g0, g1 = (np.asarray(c, dtype=float) for c in gamma_coeffs)
    b0, b1 = (np.asarray(c, dtype=float) for c in beta_coeffs)
    for c in (g0, g1, b0, b1):
        if c.ndim and c.shape != z.shape[-1:] and c.shape != z.shape:
            raise ConfigError(f"FiLM coefficient shape {c.shape} does not match {z.shape}")
    return (g0 + g1 * lam) * z + (b0 + b1 * lam)


def _act(name, u):
    if name == "tanh":
        return np.tanh(u)
    if name == "relu":
        return np.maximum(u, 0.0)
    return u


def _act_grad(name, u, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        # subgradient 0 at the kink
        return (u > 0).astype(float)
    return np.ones_like(u)


def _check_input(spec, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, spec.input_dim) if spec.input_dim > 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ConfigError(f"features of shape {X.shape} do not match input_dim={spec.input_dim}")
    return X


def _check_finite(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activations at layer {layer}", layer=layer)


def _forward(params, X, lams, keep):
    spec = params.spec
    P = unflatten(params)
    X = _check_input(spec, X)
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    lam_col = lams[:, None, None]
    cache = []
    a = X[None]  # (1, n, p); grows a leading level axis once FiLM applies
    for k in range(len(spec.hidden_layers)):
        z = a @ P[f"W{k}"] + P[f"b{k}"]
        if spec.film:
            gam = P[f"g0_{k}"] + P[f"g1_{k}"] * lam_col
            u = gam * z + (P[f"c0_{k}"] + P[f"c1_{k}"] * lam_col)
        else:
            gam = None
            u = z
        a_next = _act(spec.activation, u)
        _check_finite(a_next, k)
        if keep:
            cache.append((a, z, gam, u, a_next))
        a = a_next
    z = (a @ P["W_out"])[..., 0] + P["b_out"][0]
    gam = None
    if spec.film and not spec.hidden_layers:
        gam = P["g0_out"][0] + P["g1_out"][0] * lams[:, None]
        out = gam * z + (P["c0_out"][0] + P["c1_out"][0] * lams[:, None])
    else:
        out = z
    out = np.broadcast_to(out, (lams.size, X.shape[0]))
    _check_finite(out, len(spec.hidden_layers))
    return out, (a, z, gam, cache, lams)


def forward_batch(params, X, lams):
    """Outputs for every sample of ``X`` at every level in ``lams``."""
    return _forward(params, X, lams, keep=False)[0]


def forward(params, x, lam):
    """Single-sample output (regression value or logit)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(forward_batch(params, x, [lam])[0, 0])


def _wgrad(a, delta, per_level, reduce):
    # a: (1|L, n, i), delta: (L, n, o) -> (rows, i, o) or (i, o)
    if per_level:
        if a.shape[0] == 1:
            # a level-free input lets the levels be combined before the product
            return a[0].T @ reduce(delta)
        return reduce(np.swapaxes(a, 1, 2) @ delta)
    if a.shape[0] == 1:
        return a[0].T @ delta.sum(axis=0)
    return a.reshape(-1, a.shape[-1]).T @ delta.reshape(-1, delta.shape[-1])


def backward(params, state, dout, per_level=True, groups=None):
    """Gradient of ``sum(dout * out)`` with respect to ``xi``.

    ``dout`` has shape ``(L, n)``. Returns ``(L, P)`` when ``per_level``
    else the ``(P,)`` sum over levels. ``groups`` maps each level to a row
    index; the result then holds one summed gradient per group, which is
    much cheaper than summing the per-level rows afterwards.
    """
    spec = params.spec
    P = unflatten(params)
    a_last, z_out, gam_out, cache, lams = state
    L = lams.size
    if groups is not None:
        groups = np.asarray(groups)
        if groups.shape != (L,):
            raise ConfigError("groups must give one row index per level")
        onehot = np.zeros((int(groups.max()) + 1, L))
        onehot[groups, np.arange(L)] = 1.0
        per_level = True

        def reduce(g):
            return np.tensordot(onehot, g, axes=(1, 0))
    else:
        def reduce(g):
            return g
    rows = L if groups is None else onehot.shape[0]
    entries, n_params = layout(spec)
    offsets = {name: (off, int(np.prod(shape))) for name, shape, off in entries}
    grad = np.zeros((rows, n_params)) if per_level else np.zeros(n_params)

    def put(name, g):
        off, size = offsets[name]
        if per_level:
            grad[:, off:off + size] = g.reshape(rows, size)
        else:
            grad[off:off + size] = g.ravel()

    lam_l = lams[:, None]
    if spec.film and not spec.hidden_layers:
        # out = gam * z + c, z = x @ W + b
        dz = dout * gam_out
        put_sum = (lambda g: reduce(g.sum(axis=1))) if per_level else (lambda g: g.sum())
        put("g0_out", put_sum(dout * z_out))
        put("g1_out", put_sum(dout * z_out * lam_l))
        put("c0_out", put_sum(dout))
        put("c1_out", put_sum(dout * lam_l))
    else:
        dz = dout
    dz3 = dz[..., None]  # (L, n, 1)
    put("W_out", _wgrad(a_last, dz3, per_level, reduce))
    put("b_out", reduce(dz.sum(axis=1)) if per_level else dz.sum())
    da = dz3 @ P["W_out"].T  # (L, n, width)

    sum_n = (lambda g: reduce(g.sum(axis=1))) if per_level else (lambda g: g.sum(axis=(0, 1)))
    for k in reversed(range(len(spec.hidden_layers))):
        a_prev, z, gam, u, a = cache[k]
        du = da * _act_grad(spec.activation, u, a)
        if spec.film:
            # per-level sums over samples; the lam-weighted terms are scaled copies
            gz = np.einsum("lno,no->lo", du, z[0]) if z.shape[0] == 1 else np.einsum("lno,lno->lo", du, z)
            s = du.sum(axis=1)
            for name, v in ((f"g0_{k}", gz), (f"g1_{k}", gz * lam_l), (f"c0_{k}", s), (f"c1_{k}", s * lam_l)):
                put(name, reduce(v) if per_level else v.sum(axis=0))
            dz = du * gam
            db = gam[:, 0, :] * s
            put(f"b{k}", reduce(db) if per_level else db.sum(axis=0))
        else:
            dz = du
            put(f"b{k}", sum_n(dz))
        if dz.shape[0] != L:
            dz = np.broadcast_to(dz, (L,) + dz.shape[1:])
        put(f"W{k}", _wgrad(a_prev, dz, per_level, reduce))
        if k > 0:
            da = dz @ P[f"W{k}"].T
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return grad


def value_and_state(params, X, lams):
    return _forward(params, X, lams, keep=True)


def loss_gradient(params, batch, lam, loss_kind=None, weight_decay=0.0):
    """Mean loss over ``batch`` at level ``lam`` and its gradient in ``xi``."""
    loss_kind = loss_kind or ("bce" if params.spec.output == "logit" else "squared")
    y = np.asarray(batch.targets, dtype=float)
    if y.size == 0:
        raise ConfigError("loss_gradient on an empty batch")
    out, state = _forward(params, batch.features, [lam], keep=True)
    loss, dl = loss_and_derivative(loss_kind, out, y[None, :])
    g = backward(params, state, dl / y.size, per_level=False)
    value = float(loss.mean())
    if weight_decay:
        value += weight_decay * float(params.xi @ params.xi)
        g = g + 2.0 * weight_decay * params.xi
    return value, g


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(params, path):
    """Write a JSON checkpoint.

    Field order: ``format``, ``format_version``, ``spec`` (input_dim,
    hidden_layers, activation, output, conditioning), ``param_count``,
    ``layout`` (name and shape per block, in ``xi`` order), ``xi``. Floats
    are written with ``repr`` precision so loading is bit-exact.
    """
    entries, n = layout(params.spec)
    record = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "spec": params.spec.to_dict(),
        "param_count": n,
        "layout": [[name, list(shape)] for name, shape, _ in entries],
        "xi": [float(v) for v in params.xi],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            record = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a checkpoint ({exc})") from None
    if record.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unknown checkpoint format")
    if record.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported format_version {record.get('format_version')}")
    spec = ArchitectureSpec.from_dict(record["spec"])
    xi = np.array(record["xi"], dtype=np.float64)
    if xi.size != record["param_count"]:
        raise DataError(f"{path}: param_count does not match xi length")
    return AugmentedParams(spec, xi)
