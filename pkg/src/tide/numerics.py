"""Stable scalar nonlinearities shared across the model, trainer, and generator."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# tanh saturates to exactly +/-1.0 in float64 near |x| ~ 19, which would leak
# zero-gradient, boundary-valued scores; clamp to the largest open-interval
# representables instead.
_TANH_HI = np.nextafter(1.0, 0.0)
_TANH_LO = np.nextafter(-1.0, 0.0)


def softplus(x):
    """log(1 + exp(x)), stable in both tails."""
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    """Inverse of softplus for y > 0: log(expm1(y))."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("inv_softplus requires positive input")
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def sigmoid(x):
    return expit(x)


def bounded_tanh(x):
    """tanh clamped to the open interval (-1, 1)."""
    return np.clip(np.tanh(x), _TANH_LO, _TANH_HI)


def bpr_loss(pos_scores, neg_scores):
    """-log sigmoid(pos - neg), elementwise, as softplus(neg - pos)."""
    return softplus(np.asarray(neg_scores) - np.asarray(pos_scores))


def elu_plus_one(x):
    """exp(x) for x < 0, x + 1 otherwise: positive, smooth, identity-sloped."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0, np.exp(np.minimum(x, 0.0)), x + 1.0)


def elu_plus_one_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0, np.exp(np.minimum(x, 0.0)), 1.0)
