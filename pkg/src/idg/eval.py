"""Risk curves over deployment levels, the ideal reference, and regret reports."""

import csv
import os
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError, DataError, IDGError
from .iro import DEFAULT_GRID, plf_train
from .risk import check_level, rho, risk_matrix

__all__ = [
    "RiskCurve",
    "risk_curve",
    "ideal_curve",
    "max_regret",
    "accuracy",
    "emit_report",
    "read_curves_csv",
    "read_regret_csv",
]


@dataclass(frozen=True)
class RiskCurve:
    lambda_grid: tuple
    values: tuple
    label: str = ""

    def __post_init__(self):
        grid = tuple(check_level(v) for v in self.lambda_grid)
        values = tuple(float(v) for v in self.values)
        if len(grid) != len(values):
            raise ConfigError(f"curve {self.label!r}: {len(grid)} levels but {len(values)} values")
        if not grid:
            raise ConfigError("a risk curve needs at least one level")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"curve {self.label!r}: levels must be strictly increasing")
        object.__setattr__(self, "lambda_grid", grid)
        object.__setattr__(self, "values", values)

    def as_array(self):
        return np.array(self.values)


def risk_curve(model, test_domains, lambda_grid=DEFAULT_GRID, risk_measure="cvar", mode=None,
               label="", loss_kind=None):
    """Aggregated test risk at each level.

    ``mode="augmented"`` conditions the model on each level before
    evaluating; ``mode="fixed"`` evaluates a level-free model once. The
    default follows the architecture.
    """
    grid = tuple(check_level(v) for v in lambda_grid)
    if not grid:
        raise ConfigError("lambda_grid must be non-empty")
    mode = mode or ("augmented" if model.spec.film else "fixed")
    if mode == "augmented":
        risks = risk_matrix(model, test_domains, grid, loss_kind)
    elif mode == "fixed":
        if model.spec.film:
            raise ConfigError("fixed-mode curves need a level-free model")
        risks = np.repeat(risk_matrix(model, test_domains, [0.0], loss_kind), len(grid), axis=0)
    else:
        raise ConfigError(f"unknown curve mode {mode!r}")
    return RiskCurve(grid, [rho(r, lam, risk_measure) for r, lam in zip(risks, grid)], label)


def ideal_curve(spec, train_domains, test_domains, lambda_grid, config, label="ideal"):
    """Curve of level-free models each trained at the level it is evaluated at."""
    spec = spec.precise()
    grid = tuple(check_level(v) for v in lambda_grid)
    values = []
    for lam in grid:
        model = plf_train(spec, train_domains, lam, config)
        values.append(risk_curve(model, test_domains, [lam], config.risk_measure,
                                 loss_kind=config.loss_kind).values[0])
    return RiskCurve(grid, values, label)


def max_regret(curve, ideal):
    if curve.lambda_grid != ideal.lambda_grid:
        raise ConfigError(f"curves {curve.label!r} and {ideal.label!r} use different level grids")
    return float(np.max(curve.as_array() - ideal.as_array()))


def accuracy(model, domain, lam):
    """Fraction of correct sign predictions of a logit model at level ``lam``."""
    from .models import forward_batch

    logits = forward_batch(model, domain.features, [check_level(lam)])[0]
    return float(np.mean((logits > 0) == (domain.targets > 0.5)))


# -- reports ---------------------------------------------------------------------

_SVG_W, _SVG_H, _PAD = 640, 400, 60
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def _svg(curves):
    lo = min(min(c.values) for c in curves)
    hi = max(max(c.values) for c in curves)
    if hi == lo:
        hi = lo + 1.0
    w, h = _SVG_W - 2 * _PAD, _SVG_H - 2 * _PAD

    def px(lam, v):
        return _PAD + lam * w, _SVG_H - _PAD - (v - lo) / (hi - lo) * h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{_PAD}" y1="{_SVG_H - _PAD}" x2="{_SVG_W - _PAD}" y2="{_SVG_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_SVG_H - _PAD}" stroke="black"/>',
        f'<text x="{_SVG_W / 2}" y="{_SVG_H - 15}" text-anchor="middle" font-size="14">λ_op</text>',
        f'<text x="18" y="{_SVG_H / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {_SVG_H / 2})">aggregated risk</text>',
    ]
    for t in (0.0, 0.5, 1.0):
        x, _ = px(t, lo)
        parts.append(f'<text x="{x:.1f}" y="{_SVG_H - _PAD + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
    for v in (lo, hi):
        _, y = px(0.0, v)
        parts.append(f'<text x="{_PAD - 6}" y="{y:.1f}" text-anchor="end" font-size="11">{v:.3g}</text>')
    for k, c in enumerate(curves):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join("{:.2f},{:.2f}".format(*px(lam, v)) for lam, v in zip(c.lambda_grid, c.values))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}">'
                     f'<title>{escape(c.label)}</title></polyline>')
        parts.append(f'<text x="{_SVG_W - _PAD + 4}" y="{_PAD + 14 * k}" font-size="11" '
                     f'fill="{color}">{escape(c.label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(curves, regrets, out_dir, png=True):
    """Write curves.csv, regret.csv, curves.svg and (optionally) curves.png.

    ``regrets`` maps curve labels to max-regret values; rows follow the
    order of ``curves``. With ``regrets=None`` no regret table is written.
    """
    if not curves:
        raise ConfigError("emit_report needs at least one curve")
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, name)
                 for name in ("curves.csv", "regret.csv", "curves.svg", "curves.png")}
        with open(paths["curves.csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "lambda", "value"])
            for c in curves:
                for lam, v in zip(c.lambda_grid, c.values):
                    w.writerow([c.label, repr(lam), repr(v)])
        if regrets is None:
            del paths["regret.csv"]
        else:
            with open(paths["regret.csv"], "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["label", "max_regret"])
                for c in curves:
                    w.writerow([c.label, repr(float(regrets[c.label]))])
        with open(paths["curves.svg"], "w", encoding="utf-8") as fh:
            fh.write(_svg(curves))
        if png:
            from .plotting import plot_curves

            plot_curves(curves, paths["curves.png"])
        else:
            del paths["curves.png"]
    except OSError as exc:
        raise IDGError(f"cannot write report to {exc.filename or out_dir}: {exc.strerror}") from None
    return paths


def read_curves_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise DataError(f"curves file not found: {path}") from None
    series = {}
    for r in rows:
        try:
            series.setdefault(r["label"], []).append((float(r["lambda"]), float(r["value"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed row {r} ({exc})") from None
    return [RiskCurve([p[0] for p in pts], [p[1] for p in pts], label) for label, pts in series.items()]


def read_regret_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return {r["label"]: float(r["max_regret"]) for r in csv.DictReader(fh)}
    except FileNotFoundError:
        raise DataError(f"regret file not found: {path}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed regret table ({exc})") from None
