"""Pointwise losses and their derivatives with respect to the model output."""

import math

import numpy as np

from .errors import DomainError

LOSS_KINDS = ("squared", "bce")


def squared_error_loss(prediction, target):
    if not (math.isfinite(prediction) and math.isfinite(target)):
        raise DomainError("squared_error_loss: non-finite input")
    return (prediction - target) ** 2


def binary_ce_loss(logit, target):
    """Binary cross-entropy on a logit, in the log-sum-exp form."""
    if not math.isfinite(logit):
        raise DomainError("binary_ce_loss: non-finite logit")
    if target not in (0, 1):
        raise DomainError("binary_ce_loss: target must be 0 or 1")
    return max(logit, 0.0) - logit * target + math.log1p(math.exp(-abs(logit)))


def loss_and_derivative(kind, out, y):
    """Elementwise loss and d(loss)/d(out); ``out`` broadcasts against ``y``."""
    if kind == "squared":
        r = out - y
        return r * r, 2.0 * r
    if kind == "bce":
        loss = np.maximum(out, 0.0) - out * y + np.log1p(np.exp(-np.abs(out)))
        # sigmoid without overflow
        e = np.exp(-np.abs(out))
        sig = np.where(out >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return loss, sig - y
    raise DomainError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss_values(kind, out, y):
    return loss_and_derivative(kind, out, y)[0]
