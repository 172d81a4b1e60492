"""Seeded generators with known ground truth."""

from __future__ import annotations

import numpy as np

from .data import TimeSeriesDataset


def arx_system(T=800, a=(0.7,), b=(0.5,), noise_std=0.01, seed=0, u=None, noise_free=False):
    """``y(t) = sum_i a_i y(t-i) + sum_i b_i u(t-i) + e(t)`` with white
    Gaussian input (unless ``u`` is given) and noise. Zero initial
    conditions."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(T) if u is None else np.asarray(u, dtype=float)
    T = len(u)
    e = np.zeros(T) if noise_free else noise_std * rng.standard_normal(T)
    y = np.zeros(T)
    for t in range(T):
        acc = e[t]
        for i, ai in enumerate(a, start=1):
            if t - i >= 0:
                acc += ai * y[t - i]
        for i, bi in enumerate(b, start=1):
            if t - i >= 0:
                acc += bi * u[t - i]
        y[t] = acc
    return TimeSeriesDataset.from_arrays(u, y, name="arx")


def two_tank_system(T=1024, noise_std=0.01, seed=0, dt=1.0, k1=0.5, k2=0.4, k_in=0.3):
    """Cascaded-tank style recursion: the upper level is filled by the pump
    input and drains into the lower one through a square-root outflow::

        x1(t+1) = x1 + dt (k_in u - k1 sqrt(x1))
        x2(t+1) = x2 + dt (k1 sqrt(x1) - k2 sqrt(x2))
        y = x2 + e

    Levels are clipped at zero. The input is a piecewise-constant random
    level sequence in ``[0, 1]``.
    """
    rng = np.random.default_rng(seed)
    hold = 20
    u = np.repeat(rng.uniform(0.0, 1.0, T // hold + 1), hold)[:T]
    x1 = x2 = 0.0
    y = np.empty(T)
    for t in range(T):
        y[t] = x2
        q1 = k1 * np.sqrt(x1)
        x1 = max(x1 + dt * (k_in * u[t] - q1), 0.0)
        x2 = max(x2 + dt * (q1 - k2 * np.sqrt(x2)), 0.0)
    y = y + noise_std * rng.standard_normal(T)
    return TimeSeriesDataset.from_arrays(u, y, name="two_tank")
