"""ADAM updates with a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the step was not applied."""


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    """Learning rate at ``step`` (0-based) of a half-cosine decay that starts
    at ``lr_max`` and would reach ``lr_min`` at ``step == total_steps``, so
    every step inside the budget has a positive rate."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    frac = min(max(step, 0), total_steps) / total_steps
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def sgd_step(net, grads, lr, state: AdamState):
    """Apply one ADAM step to ``net`` in place and return it.

    Masked entries are left at exactly zero whatever their gradient says.
    """
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    params = net.params
    for name, g in grads.items():
        if name not in params or np.shape(g) != params[name].shape:
            raise ValueError(f"gradient {name!r} is not congruent with the network")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"gradient {name!r} has {bad} non-finite entries")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        g = np.where(net.masks[name], g, 0.0)
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        params[name][~net.masks[name]] = 0.0
    return net
