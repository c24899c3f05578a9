"""Experiment configuration and the pipelines behind the command line.

A configuration is a flat JSON object. Every key has a default, and the
fully materialised configuration is written into each run's manifest so a
run can be regenerated from its manifest alone.
"""

import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .data import (CMNIST_TEST_RATES, CMNIST_TRAIN_RATES, BIKE_FEATURES, build_cmnist,
                   gen_appendix_beta, gen_synthetic, load_bike_csv)
from .errors import ConfigError, DataError
from .eval import ideal_curve, max_regret, risk_curve, RiskCurve
from .iro import (DEFAULT_GRID, UNIFORM_RESAMPLE, IroConfig, iro_train, plf_train_traced,
                  plh_train_traced)
from .lambda_dist import BetaParams
from .models import ArchitectureSpec

EXPERIMENTS = ("synthetic", "appendix-beta", "cmnist", "bike")
METHODS = ("iro", "plf", "plh", "erm")

_TRAINING_KEYS = tuple(f.name for f in fields(IroConfig) if f.name != "seed")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "synthetic"
    method: str = "iro"
    lambda_fixed: object = 0.0
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    hidden_layers: tuple = ()
    activation: str = "tanh"
    # data
    num_train_domains: int = 250
    num_test_domains: int = 250
    samples_per_domain: int = 100
    spread_is_variance: bool = True
    data_dir: str | None = None
    images: str = "train-images-idx3-ubyte"
    labels: str = "train-labels-idx1-ubyte"
    train_env_rates: tuple = CMNIST_TRAIN_RATES
    test_env_rates: tuple = CMNIST_TEST_RATES
    images_per_env: int | None = None
    test_images_per_env: int | None = None
    downsample: int = 1
    label_noise: float = 0.25
    bike_csv: str = "hour.csv"
    bike_fraction: float = 1.0
    feature_columns: tuple = BIKE_FEATURES
    # evaluation
    lambda_grid: tuple = DEFAULT_GRID
    seeds: tuple = (0,)
    output_dir: str = "runs"
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("hidden_layers", "train_env_rates", "test_env_rates", "feature_columns",
                     "lambda_grid", "seeds"):
            v = getattr(self, name)
            if isinstance(v, (str, bytes)) or not hasattr(v, "__iter__"):
                raise ConfigError(f"{name} must be a list")
            object.__setattr__(self, name, tuple(v))
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any((not isinstance(s, int)) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if self.method == "plf" and self.lambda_fixed != UNIFORM_RESAMPLE:
            try:
                lam = float(self.lambda_fixed)
            except (TypeError, ValueError):
                raise ConfigError(f"lambda_fixed must be a level or {UNIFORM_RESAMPLE!r}") from None
            if not 0.0 <= lam <= 1.0:
                raise ConfigError("lambda_fixed must lie in [0, 1]")
        if self.method == "plh" and min(self.prior_alpha, self.prior_beta) <= 0:
            raise ConfigError("prior_alpha and prior_beta must be positive")
        if not 0.0 < self.bike_fraction <= 1.0:
            raise ConfigError("bike_fraction must lie in (0, 1]")
        for name in ("num_train_domains", "num_test_domains", "samples_per_domain", "downsample"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        self.iro_config(self.seeds[0])

    # flat dictionaries
    def to_dict(self):
        d = {}
        for f in fields(self):
            if f.name == "training":
                continue
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        base = IroConfig(**self.training).to_dict()
        for k in _TRAINING_KEYS:
            d[k] = base[k]
        return d

    @classmethod
    def from_dict(cls, d):
        own = {f.name for f in fields(cls)} - {"training"}
        unknown = set(d) - own - set(_TRAINING_KEYS)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
        kw = {k: v for k, v in d.items() if k in own}
        training = {k: v for k, v in d.items() if k in _TRAINING_KEYS}
        if "q_init" in training:
            training["q_init"] = tuple(training["q_init"])
        try:
            return cls(**kw, training=training)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def iro_config(self, seed):
        try:
            return IroConfig(**{**self.training, "seed": int(seed)})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def output_kind(self):
        return "logit" if self.experiment == "cmnist" else "scalar-regression"


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return ExperimentConfig.from_dict(raw)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


def manifest(command, config, seed=None, outputs=()):
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config.to_dict(),
        "outputs": sorted(outputs),
    }


# -- presets ---------------------------------------------------------------------

SYNTHETIC_TRAINING = {"eta": 0.05, "eta_decay": 0.05, "max_outer_steps": 1000, "batch_size": 25,
                      "epsilon_stop": 1e-4}

PRESETS = {
    "synthetic": {"experiment": "synthetic", "hidden_layers": [], "seeds": [0, 1, 2],
                  **SYNTHETIC_TRAINING},
    "bike": {"experiment": "bike", "hidden_layers": [16], "activation": "tanh", "seeds": [0, 1, 2],
             "eta": 0.05, "eta_decay": 0.05, "max_outer_steps": 1000, "batch_size": 64},
    "cmnist": {"experiment": "cmnist", "hidden_layers": [32], "activation": "relu", "seeds": [0],
               "downsample": 4, "images_per_env": 200, "test_images_per_env": 200,
               "eta": 0.5, "max_outer_steps": 1500, "batch_size": 50, "epsilon_stop": 1e-6},
}


def preset(name, **overrides):
    return ExperimentConfig.from_dict({**PRESETS[name], **overrides})


# -- data ------------------------------------------------------------------------

def _data_path(config, name):
    if os.path.isabs(name) or os.path.exists(name):
        return name
    root = config.data_dir or os.environ.get("IDG_DATA_DIR")
    if not root:
        raise DataError(f"{name} not found; set data_dir or IDG_DATA_DIR")
    path = os.path.join(root, name)
    if not os.path.exists(path):
        raise DataError(f"{name} not found under {root}")
    return path


def load_domains(config, seed):
    """``(train, test)`` domain lists for ``config`` and ``seed``."""
    if config.experiment == "synthetic":
        kw = {"spread_is_variance": config.spread_is_variance}
        return (gen_synthetic(config.num_train_domains, config.samples_per_domain, seed, "train", **kw),
                gen_synthetic(config.num_test_domains, config.samples_per_domain, seed, "test", **kw))
    if config.experiment == "appendix-beta":
        kw = {"spread_is_variance": config.spread_is_variance}
        return (gen_appendix_beta(config.num_train_domains, config.samples_per_domain, seed, "train", **kw),
                gen_appendix_beta(config.num_test_domains, config.samples_per_domain, seed, "test", **kw))
    if config.experiment == "cmnist":
        images, labels = _data_path(config, config.images), _data_path(config, config.labels)
        per_train = config.images_per_env
        train = build_cmnist(images, labels, config.train_env_rates, config.label_noise, seed,
                             images_per_env=per_train, downsample=config.downsample, split="train")
        used = sum(len(d) for d in train)
        test = build_cmnist(images, labels, config.test_env_rates, config.label_noise, seed,
                            images_per_env=config.test_images_per_env, first_image=used,
                            downsample=config.downsample, split="test")
        return train, test
    train, test = load_bike_csv(_data_path(config, config.bike_csv), config.feature_columns)
    if config.bike_fraction < 1.0:
        train = [_subsample(d, config.bike_fraction, seed) for d in train]
    return train, test


def _subsample(domain, fraction, seed):
    from .data import DomainDataset
    from .rng import stream

    n = len(domain)
    keep = max(1, int(round(fraction * n)))
    idx = np.sort(stream(seed, f"subsample/{domain.domain_id}").choice(n, keep, replace=False))
    return DomainDataset(domain.domain_id, domain.features[idx], domain.targets[idx], dict(domain.meta))


def architecture(config, train):
    return ArchitectureSpec(train[0].features.shape[1], config.hidden_layers, config.activation,
                            config.output_kind(), "none" if config.method in ("plf", "erm") else "film-affine")


# -- training --------------------------------------------------------------------

def train_method(config, train, seed, method=None, lambda_fixed=None, prior=None):
    """Train one model; returns ``(params, trace)``."""
    method = method or config.method
    spec = architecture(config.replace(method=method), train)
    iro_cfg = config.iro_config(seed)
    grid = config.lambda_grid
    if method == "iro":
        return iro_train(spec, train, iro_cfg, grid)
    if method == "plh":
        prior = prior or BetaParams(config.prior_alpha, config.prior_beta)
        return plh_train_traced(spec, train, prior, iro_cfg, grid)
    if method == "erm":
        return plf_train_traced(spec, train, 0.0, iro_cfg, grid)
    lam = config.lambda_fixed if lambda_fixed is None else lambda_fixed
    if lam != UNIFORM_RESAMPLE:
        lam = float(lam)
    return plf_train_traced(spec, train, lam, iro_cfg, grid)


# Learners compared in the regret tables; labels double as report series names.
SYNTHETIC_LEARNERS = (
    ("IL", "iro", None, None),
    ("PL-f(0)", "plf", 0.0, None),
    ("PL-f(1)", "plf", 1.0, None),
    ("PL-f(U)", "plf", UNIFORM_RESAMPLE, None),
    ("PL-h(5,5)", "plh", None, (5.0, 5.0)),
    ("PL-h(5,1)", "plh", None, (5.0, 1.0)),
    ("INF-TASK(1,1)", "plh", None, (1.0, 1.0)),
)

BIKE_LEARNERS = SYNTHETIC_LEARNERS


def compare_learners(config, learners, seed, log=None):
    """Curves of every learner and of the ideal reference for one seed."""
    train, test = load_domains(config, seed)
    grid = config.lambda_grid
    iro_cfg = config.iro_config(seed)
    spec = architecture(config.replace(method="iro"), train)
    curves = {}
    for label, method, lam, prior in learners:
        model, _ = train_method(config, train, seed, method, lam,
                                BetaParams(*prior) if prior else None)
        curves[label] = risk_curve(model, test, grid, iro_cfg.risk_measure, label=label,
                                   loss_kind=iro_cfg.loss_kind)
        if log:
            log(f"seed {seed}: trained {label}")
    curves["ideal"] = ideal_curve(spec, train, test, grid, iro_cfg)
    if log:
        log(f"seed {seed}: trained ideal reference")
    return curves


def regret_table(config, learners, log=None):
    """Mean curves and mean max-regret over ``config.seeds``.

    Returns ``(mean_curves, regrets, per_seed)`` where ``per_seed`` maps
    labels to the list of per-seed regrets.
    """
    per_seed = {label: [] for label, *_ in learners}
    sums = {}
    for seed in config.seeds:
        curves = compare_learners(config, learners, seed, log)
        for label in per_seed:
            per_seed[label].append(max_regret(curves[label], curves["ideal"]))
        for label, c in curves.items():
            sums[label] = sums.get(label, 0.0) + c.as_array()
    n = len(config.seeds)
    mean_curves = [RiskCurve(config.lambda_grid, sums[label] / n, label)
                   for label in [*per_seed, "ideal"]]
    regrets = {label: float(np.mean(v)) for label, v in per_seed.items()}
    regrets["ideal"] = 0.0
    return mean_curves, regrets, per_seed


def standard_error(values):
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
