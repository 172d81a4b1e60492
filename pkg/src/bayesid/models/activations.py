"""Elementwise activations with first and second derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def _sigmoid(h):
    out = np.empty_like(np.asarray(h, dtype=float))
    h = np.asarray(h, dtype=float)
    pos = h >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-h[pos]))
    e = np.exp(h[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _sigmoid_d1(h):
    s = _sigmoid(h)
    return s * (1.0 - s)


def _sigmoid_d2(h):
    s = _sigmoid(h)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _tanh_d1(h):
    return 1.0 - np.tanh(h) ** 2


def _tanh_d2(h):
    t = np.tanh(h)
    return -2.0 * t * (1.0 - t * t)


@dataclass(frozen=True)
class Activation:
    name: str
    f: Callable
    d1: Callable
    d2: Callable

    def __call__(self, h):
        return self.f(h)

    def __repr__(self):
        return f"Activation({self.name!r})"

    def __reduce__(self):
        # the callables are lambdas; pickle by registry name instead
        return get_activation, (self.name,)


IDENTITY = Activation(
    "identity",
    lambda h: np.asarray(h, dtype=float).copy(),
    lambda h: np.ones_like(np.asarray(h, dtype=float)),
    lambda h: np.zeros_like(np.asarray(h, dtype=float)),
)
# second derivative of relu is 0 everywhere, kink included
RELU = Activation(
    "relu",
    lambda h: np.maximum(np.asarray(h, dtype=float), 0.0),
    lambda h: (np.asarray(h) > 0).astype(float),
    lambda h: np.zeros_like(np.asarray(h, dtype=float)),
)
TANH = Activation("tanh", np.tanh, _tanh_d1, _tanh_d2)
SIGMOID = Activation("sigmoid", _sigmoid, _sigmoid_d1, _sigmoid_d2)

ACTIVATIONS = {a.name: a for a in (IDENTITY, RELU, TANH, SIGMOID)}
ACTIVATIONS["linear"] = IDENTITY


def get_activation(name) -> Activation:
    if isinstance(name, Activation):
        return name
    try:
        return ACTIVATIONS[str(name).lower()]
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None
