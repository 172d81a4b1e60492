"""Posterior sampling, Monte-Carlo predictive statistics, free-run
simulation and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import RegressorConfig, regressor_row
from .models.mlp import MlpNetwork


@dataclass
class PosteriorModel:
    """Diagonal Gaussian over the weights of ``net`` plus noise variance
    ``zeta``. ``variances`` maps parameter names to per-entry variances;
    missing names are treated as known exactly."""

    net: object
    variances: dict
    zeta: float = 0.0

    def __post_init__(self):
        if not self.zeta >= 0:
            raise ValueError("zeta must be non-negative")
        params = self.net.params
        clean = {}
        for name, v in self.variances.items():
            v = np.asarray(v, dtype=float)
            if name not in params or v.shape != params[name].shape:
                raise ValueError(f"variance {name!r} not congruent with the network")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"variance {name!r} must be finite and non-negative")
            clean[name] = np.where(self.net.masks[name], v, 0.0)
        self.variances = clean

    def std(self, name):
        v = self.variances.get(name)
        return None if v is None else np.sqrt(v)


@dataclass
class PredictiveBand:
    mean: np.ndarray
    std: np.ndarray
    n_samples: int

    @property
    def lower(self):
        return self.mean - 2.0 * self.std

    @property
    def upper(self):
        return self.mean + 2.0 * self.std


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _sample_stack(pm: PosteriorModel, rng, n):
    """``n`` posterior draws of every parameter, stacked on a leading axis."""
    out = {}
    for name, mu in pm.net.params.items():
        s = pm.std(name)
        if s is None or not np.any(s):
            out[name] = np.broadcast_to(mu, (n, *mu.shape))
        else:
            draw = mu + s * rng.standard_normal((n, *mu.shape))
            out[name] = np.where(pm.net.masks[name], draw, 0.0)
    return out


def sample_posterior(pm: PosteriorModel, rng):
    """One network drawn from the posterior; pruned entries stay zero."""
    stack = _sample_stack(pm, rng, 1)
    net = pm.net.copy()
    net.set_params({k: v[0] for k, v in stack.items()})
    return net


def _mlp_stacked_forward(net: MlpNetwork, stack, X):
    """Outputs of ``S`` weight draws on the rows of ``X`` (shared) or on
    per-draw rows ``X[s]``; returns ``(S, N)``."""
    a = X
    for l, sig in enumerate(net.activations):
        W = stack[f"W{l + 1}"]
        h = np.einsum("nj,sij->sni" if a.ndim == 2 else "snj,sij->sni", a, W)
        b = stack.get(f"b{l + 1}")
        if b is not None:
            h = h + b[:, None, :]
        a = sig(h)
    return a[..., 0]


def _stacked_predict(net, stack, Z):
    if isinstance(net, MlpNetwork):
        return _mlp_stacked_forward(net, stack, np.atleast_2d(Z))
    S = next(iter(stack.values())).shape[0]
    out = []
    work = net.copy()
    for s in range(S):
        work.set_params({k: v[s] for k, v in stack.items()})
        out.append(work.predict(Z))
    return np.asarray(out)


def _moments(F):
    """Mean and population variance over axis 0, shifted by the first sample
    so identical samples give exactly zero variance."""
    d = F - F[0]
    md = d.mean(axis=0)
    var = np.mean((d - md) ** 2, axis=0)
    return F[0] + md, var


def predictive_stats(pm: PosteriorModel, Z, M, rng=None, chunk=2048):
    """Monte-Carlo predictive mean and variance at the rows of ``Z``.

    The variance adds ``zeta`` to the spread of the network outputs over
    ``M`` posterior draws, so it never falls below ``zeta``.
    """
    if M < 2:
        raise ValueError("need at least two Monte-Carlo samples")
    rng = np.random.default_rng(rng)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if all(not np.any(v) for v in pm.variances.values()):
        return pm.net.predict(Z), np.full(len(Z), float(pm.zeta))
    # chunked Welford-style merge of (count, mean, M2)
    n_tot, mean, m2 = 0, None, None
    done = 0
    while done < M:
        k = min(chunk, M - done)
        F = _stacked_predict(pm.net, _sample_stack(pm, rng, k), Z)
        mu_c, var_c = _moments(F)
        if mean is None:
            n_tot, mean, m2 = k, mu_c, var_c * k
        else:
            delta = mu_c - mean
            n_new = n_tot + k
            mean = mean + delta * k / n_new
            m2 = m2 + var_c * k + delta ** 2 * n_tot * k / n_new
            n_tot = n_new
        done += k
    return mean, pm.zeta + m2 / n_tot


def predictive_band(pm: PosteriorModel, Z, M, rng=None):
    mean, var = predictive_stats(pm, Z, M, rng)
    return PredictiveBand(mean, np.sqrt(var), M)


# ---------------------------------------------------------------------------
# free run
# ---------------------------------------------------------------------------

def free_run_start(cfg: RegressorConfig, n_init):
    """Index of the first simulated sample given ``n_init`` initial outputs."""
    return max(cfg.first_index, int(n_init))


def _prepare_free_run(u, y_init, cfg):
    u = np.asarray(u, dtype=float)
    y_init = np.atleast_1d(np.asarray(y_init, dtype=float))
    if len(y_init) < cfg.l_y:
        raise ValueError(f"need at least l_y={cfg.l_y} initial outputs, got {len(y_init)}")
    start = free_run_start(cfg, len(y_init))
    if len(u) <= start:
        raise ValueError(f"input horizon {len(u)} does not exceed the lag depth {start}")
    return u, y_init, start


def free_run_simulate(net, u, y_init, cfg: RegressorConfig):
    """Simulate from inputs alone, feeding predictions back as output lags.

    ``y_init`` are the outputs immediately preceding the first simulated
    sample, which is at index ``max(cfg.first_index, len(y_init))`` of ``u``.
    Returns the simulated outputs from that index to the end of ``u``.
    Recurrent networks start from a zero state at the first simulated sample.
    """
    u, y_init, start = _prepare_free_run(u, y_init, cfg)
    T = len(u)
    hist = np.zeros(T)
    hist[start - len(y_init):start] = y_init
    recurrent = not isinstance(net, MlpNetwork)
    state = None
    for k in range(start, T):
        z = regressor_row(u, hist, k, cfg)
        if recurrent:
            hist[k], state = net.step(z, state)
        else:
            hist[k] = net.predict(z[None, :])[0]
    return hist[start:].copy()


def _stacked_free_run(pm, stack, u, y_init, cfg):
    """Free run of every stacked draw; returns ``(S, T - start)``."""
    u, y_init, start = _prepare_free_run(u, y_init, cfg)
    S = next(iter(stack.values())).shape[0]
    if not isinstance(pm.net, MlpNetwork):
        work = pm.net.copy()
        rows = []
        for s in range(S):
            work.set_params({k: v[s] for k, v in stack.items()})
            rows.append(free_run_simulate(work, u, y_init, cfg))
        return np.asarray(rows)
    T = len(u)
    hist = np.zeros((S, T))
    hist[:, start - len(y_init):start] = y_init
    u_lags = np.arange(cfg.l_u + 1)
    y_lags = np.arange(1, cfg.l_y + 1)
    for k in range(start, T):
        Zs = np.concatenate([np.broadcast_to(u[k - u_lags], (S, cfg.l_u + 1)),
                             hist[:, k - y_lags]], axis=1)
        hist[:, k] = _mlp_stacked_forward(pm.net, stack, Zs[:, None, :])[:, 0]
    return hist[:, start:]


def mc_free_run(pm: PosteriorModel, u, y_init, cfg: RegressorConfig, M, rng=None, chunk=512):
    """Free-run band: every trajectory uses one posterior draw for its whole
    horizon; ``zeta`` is added to the spread across trajectories."""
    if M < 2:
        raise ValueError("need at least two Monte-Carlo samples")
    rng = np.random.default_rng(rng)
    runs = []
    done = 0
    while done < M:
        k = min(chunk, M - done)
        runs.append(_stacked_free_run(pm, _sample_stack(pm, rng, k), u, y_init, cfg))
        done += k
    mean, var = _moments(np.concatenate(runs, axis=0))
    return PredictiveBand(mean, np.sqrt(pm.zeta + var), M)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def rmse(yhat, y):
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat.shape != y.shape or yhat.size == 0:
        raise ValueError(f"rmse needs equal non-empty lengths, got {yhat.shape} and {y.shape}")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def sparsity(net, names=None):
    """Fraction of exactly-zero entries over the given (default: all)
    parameter arrays."""
    params = net.params
    names = list(params) if names is None else list(names)
    total = sum(params[n].size for n in names)
    if total == 0:
        raise ValueError("network has no parameters")
    zeros = sum(int(np.count_nonzero(params[n] == 0)) for n in names)
    return zeros / total


def estimate_zeta(residuals):
    """Population variance of one-step residuals."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("no residuals")
    return float(np.var(r))


def write_simulation_csv(path, t, u, band: PredictiveBand, y_true=None):
    """Columns ``t, u, [y_true,] y_mean, y_std, y_lower, y_upper``."""
    cols = [("t", t), ("u", u)]
    if y_true is not None:
        cols.append(("y_true", y_true))
    cols += [("y_mean", band.mean), ("y_std", band.std),
             ("y_lower", band.lower), ("y_upper", band.upper)]
    n = len(band.mean)
    for name, c in cols:
        if len(c) != n:
            raise ValueError(f"column {name} has length {len(c)}, expected {n}")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c[0] for c in cols])
        for i in range(n):
            w.writerow([repr(float(c[1][i])) for c in cols])
    return path
