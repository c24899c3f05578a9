"""Domain datasets: synthetic generators, coloured digits, hourly bike rentals.

Every generator draws domain ``i`` from its own counter-based stream, so a
domain's samples do not depend on how many other domains are generated.
"""

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import stream

__all__ = [
    "DomainDataset",
    "gen_synthetic",
    "gen_appendix_beta",
    "read_idx",
    "write_idx",
    "build_cmnist",
    "load_bike_csv",
    "BIKE_FEATURES",
    "CMNIST_TRAIN_RATES",
    "CMNIST_TEST_RATES",
    "export_csv",
    "import_csv",
]

CMNIST_TRAIN_RATES = (0.01, 0.02, 0.05, 0.07, 0.09, 0.12, 0.14, 0.58, 0.7, 0.99)
CMNIST_TEST_RATES = tuple(round(0.1 * i, 1) for i in range(11))
BIKE_FEATURES = ("temp", "atemp", "hum", "windspeed", "hr", "workingday", "weathersit")


@dataclass(frozen=True)
class DomainDataset:
    domain_id: str
    features: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.targets, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise DataError(f"domain {self.domain_id}: features {X.shape} do not match {y.size} targets")
        if y.size == 0:
            raise DataError(f"domain {self.domain_id} has no samples")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError(f"domain {self.domain_id} contains non-finite values")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "domain_id", str(self.domain_id))

    def __len__(self):
        return self.targets.size


def _spread(value, is_variance):
    return math.sqrt(value) if is_variance else value


def _check_counts(num_domains, samples_per_domain):
    if num_domains < 1 or samples_per_domain < 1:
        raise ConfigError("domain and sample counts must be positive")


def gen_synthetic(num_domains, samples_per_domain, seed, split="train", *, x_mean=1.0,
                  x_spread=0.5, noise_spread=0.1, spread_is_variance=True, thetas=None):
    """Two-cluster linear domains ``y = theta * x + noise``.

    ``theta`` is drawn from U(1, 1.1) or U(-1.1, -1) with equal probability.
    The spreads of ``x`` and of the noise are variances unless
    ``spread_is_variance`` is false. ``thetas`` overrides the slope draw.
    """
    _check_counts(num_domains, samples_per_domain)
    if thetas is not None and len(thetas) != num_domains:
        raise ConfigError("thetas must give one slope per domain")
    sx = _spread(x_spread, spread_is_variance)
    se = _spread(noise_spread, spread_is_variance)
    out = []
    for i in range(num_domains):
        rng = stream(seed, f"synthetic/{split}", i)
        positive = rng.random() < 0.5
        mag = rng.uniform(1.0, 1.1)
        theta = float(thetas[i]) if thetas is not None else (mag if positive else -mag)
        x = rng.normal(x_mean, sx, samples_per_domain)
        y = theta * x + rng.normal(0.0, 1.0, samples_per_domain) * se
        out.append(DomainDataset(f"{split}-{i:04d}", x[:, None], y, {"theta": theta}))
    return out


def gen_appendix_beta(num_domains, samples_per_domain, seed, split="train", *,
                      spread_is_variance=True):
    """Linear domains with ``theta ~ Beta(0.1, 0.2)``, ``x ~ N(2, 0.2)``, noise ``N(0, 0.1)``."""
    _check_counts(num_domains, samples_per_domain)
    sx = _spread(0.2, spread_is_variance)
    se = _spread(0.1, spread_is_variance)
    out = []
    for i in range(num_domains):
        rng = stream(seed, f"beta-slopes/{split}", i)
        theta = float(rng.beta(0.1, 0.2))
        x = rng.normal(2.0, sx, samples_per_domain)
        y = theta * x + rng.normal(0.0, se, samples_per_domain)
        out.append(DomainDataset(f"{split}-{i:04d}", x[:, None], y, {"theta": theta}))
    return out


# -- IDX files ------------------------------------------------------------------

_IDX_TYPES = {0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
              0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, expect_magic=None):
    """Read an IDX array (optionally gzip-compressed)."""
    try:
        with _open(path) as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataError(f"IDX file not found: {path}") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header at offset {len(raw)}")
    magic = struct.unpack(">I", raw[:4])[0]
    if raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise DataError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    if expect_magic is not None and magic != expect_magic:
        raise DataError(f"{path}: magic 0x{magic:08x} at offset 0, expected 0x{expect_magic:08x}")
    ndim = raw[3]
    off = 4 + 4 * ndim
    if len(raw) < off:
        raise DataError(f"{path}: truncated dimension list at offset {len(raw)}")
    shape = struct.unpack(f">{ndim}I", raw[4:off])
    dtype = _IDX_TYPES[raw[2]]
    need = int(np.prod(shape)) * dtype.itemsize
    if len(raw) - off != need:
        raise DataError(f"{path}: expected {need} data bytes from offset {off}, found {len(raw) - off}")
    return np.frombuffer(raw, dtype=dtype, offset=off).reshape(shape)


def write_idx(path, array):
    array = np.asarray(array)
    codes = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    code = codes.get(array.dtype.newbyteorder("="))
    if code is None:
        raise DataError(f"dtype {array.dtype} has no IDX type code")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + array.astype(_IDX_TYPES[code]).tobytes())


def _downsample(images, factor):
    if factor == 1:
        return images
    n, h, w = images.shape
    if h % factor or w % factor:
        raise ConfigError(f"downsample factor {factor} does not divide {h}x{w}")
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def build_cmnist(idx_images_path, idx_labels_path, env_rates, label_noise=0.25, seed=0, *,
                 images_per_env=None, first_image=0, downsample=1, split="train"):
    """Coloured digit environments.

    Each environment takes its own slice of a seeded permutation of the
    images, starting at ``first_image``. The label is ``digit >= 5``,
    flipped with probability ``label_noise``; the image is coloured red
    with probability ``e`` when the label is 1 and ``1 - e`` when it is 0,
    so ``P(Y=1 | red) = e`` for balanced labels. Features are the red and
    green channels, flattened and scaled to [0, 1].
    """
    images = read_idx(idx_images_path, expect_magic=0x00000803)
    labels = read_idx(idx_labels_path, expect_magic=0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    if not env_rates:
        raise ConfigError("env_rates must be non-empty")
    if not 0.0 <= label_noise <= 1.0:
        raise ConfigError("label_noise must lie in [0, 1]")
    n_env = len(env_rates)
    avail = images.shape[0] - first_image
    per_env = images_per_env or avail // n_env
    if per_env < 1 or per_env * n_env > avail:
        raise ConfigError(f"{n_env} environments of {per_env} images need more than {avail} images")
    order = stream(seed, "cmnist/permutation").permutation(images.shape[0])
    pixels = _downsample(images.astype(float) / 255.0, downsample).reshape(images.shape[0], -1)
    out = []
    for j, e in enumerate(env_rates):
        e = float(e)
        if not 0.0 <= e <= 1.0:
            raise ConfigError(f"environment rate {e} outside [0, 1]")
        idx = order[first_image + j * per_env:first_image + (j + 1) * per_env]
        rng = stream(seed, f"cmnist/{split}", j)
        digit_group = (labels[idx] >= 5).astype(int)
        flip = rng.random(idx.size) < label_noise
        y = np.where(flip, 1 - digit_group, digit_group)
        agree = rng.random(idx.size) < e
        red = np.where(agree, y, 1 - y)
        img = pixels[idx]
        X = np.concatenate([img * red[:, None], img * (1 - red)[:, None]], axis=1)
        out.append(DomainDataset(f"{split}-e{e:g}", X, y.astype(float),
                                 {"env_rate": e, "red": red, "digit_group": digit_group}))
    return out


# -- bike rentals ----------------------------------------------------------------

def _read_table(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [r for r in reader if r]
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    if not header:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in header], rows


def load_bike_csv(path, feature_columns=BIKE_FEATURES):
    """Eight season-by-year domains from an hourly rentals table.

    The first year (``yr == 0``) gives the four training domains, the
    second year the four test domains. Features and the rental count are
    standardised with statistics of the training rows only.
    """
    header, rows = _read_table(path)
    for col in ("season", "yr", "cnt", *feature_columns):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    pos = {name: header.index(name) for name in header}
    try:
        season = np.array([int(r[pos["season"]]) for r in rows])
        year = np.array([int(r[pos["yr"]]) for r in rows])
        X = np.array([[float(r[pos[c]]) for c in feature_columns] for r in rows])
        y = np.array([float(r[pos["cnt"]]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    train = year == 0
    if not np.any(train):
        raise DataError(f"{path}: no first-year rows")
    mu, sd = X[train].mean(axis=0), X[train].std(axis=0)
    sd[sd == 0] = 1.0
    y_mu, y_sd = y[train].mean(), y[train].std()
    if y_sd == 0:
        raise DataError(f"{path}: constant rental count")
    Xs = (X - mu) / sd
    ys = (y - y_mu) / y_sd
    splits = ([], [])
    for yr, bucket in ((0, splits[0]), (1, splits[1])):
        for s in (1, 2, 3, 4):
            mask = (year == yr) & (season == s)
            if not np.any(mask):
                raise DataError(f"{path}: no rows for season {s}, yr {yr}")
            bucket.append(DomainDataset(f"season{s}-yr{yr}", Xs[mask], ys[mask],
                                        {"season": s, "year": yr}))
    return splits


# -- CSV export -----------------------------------------------------------------

def export_csv(domains, path):
    """Write ``domain_id, x0, ..., x{p-1}, target`` rows."""
    p = domains[0].features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain_id"] + [f"x{j}" for j in range(p)] + ["target"])
        for d in domains:
            if d.features.shape[1] != p:
                raise ConfigError("feature width differs between domains")
            for x, t in zip(d.features, d.targets):
                w.writerow([d.domain_id] + [repr(float(v)) for v in x] + [repr(float(t))])


def import_csv(path):
    header, rows = _read_table(path)
    if header[0] != "domain_id" or header[-1] != "target":
        raise DataError(f"{path}: expected domain_id ... target columns")
    groups = {}
    for k, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{k}: expected {len(header)} fields")
        try:
            vals = [float(v) for v in r[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{k}: {exc}") from None
        groups.setdefault(r[0], []).append(vals)
    return [DomainDataset(k, np.array(v)[:, :-1], np.array(v)[:, -1]) for k, v in groups.items()]
