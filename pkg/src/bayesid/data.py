"""Time-series ingestion and lagged regressor construction.

A regressor row for predicting ``y(k)`` is::

    z(k) = [u(k), u(k-1), ..., u(k-l_u), y(k-1), ..., y(k-l_y)]

which has ``l_u + 1`` input entries and ``l_y`` output entries, so the row
width is ``l_u + l_y + 1``. Rows that would need samples before the start of
the record are dropped, so the first usable index is ``max(l_u, l_y)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised when a dataset cannot be loaded or windowed."""


@dataclass(frozen=True)
class TimeSeriesDataset:
    time: np.ndarray
    u: np.ndarray
    y: np.ndarray
    sample_period: float = 1.0
    offsets: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.time, dtype=float)
        if u.ndim != 1 or y.ndim != 1:
            raise DataError("u and y must be one-dimensional")
        if len(u) != len(y) or len(t) != len(u):
            raise DataError(
                f"channel length mismatch: time={len(t)}, u={len(u)}, y={len(y)}"
            )
        if len(u) < 2:
            raise DataError("a dataset needs at least 2 samples")
        if not self.sample_period > 0:
            raise DataError("sample_period must be positive")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "time", t)

    def __len__(self):
        return len(self.u)

    @classmethod
    def from_arrays(cls, u, y, sample_period=1.0, name=""):
        u = np.asarray(u, dtype=float)
        return cls(np.arange(len(u), dtype=float) * sample_period, u, y,
                   sample_period=sample_period, name=name)


@dataclass(frozen=True)
class RegressorConfig:
    l_u: int
    l_y: int

    def __post_init__(self):
        for name in ("l_u", "l_y"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise DataError(f"{name} must be a nonnegative integer, got {v!r}")

    @property
    def width(self) -> int:
        return self.l_u + self.l_y + 1

    @property
    def first_index(self) -> int:
        return max(self.l_u, self.l_y)

    def labels(self) -> list[str]:
        """Column labels, e.g. ``['u(t-0)', 'u(t-1)', 'y(t-1)']``."""
        return ([f"u(t-{k})" for k in range(self.l_u + 1)]
                + [f"y(t-{k})" for k in range(1, self.l_y + 1)])

    def lag_of_column(self, col: int) -> tuple[str, int]:
        if col <= self.l_u:
            return "u", col
        return "y", col - self.l_u


@dataclass(frozen=True)
class RegressionMatrix:
    Z: np.ndarray
    targets: np.ndarray
    first_index: int
    cfg: RegressorConfig = field(default=None)

    def __len__(self):
        return len(self.targets)


def load_csv(path, u_col="u", y_col="y", time_col="t", sample_period=None):
    """Read a dataset from a CSV file with a header row.

    ``time_col`` may be None (or absent from the file), in which case sample
    indices are used. ``sample_period`` is inferred from the time column when
    not given.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    for col in (u_col, y_col):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r} (have {header})")
    cols = {"u": header.index(u_col), "y": header.index(y_col)}
    if time_col is not None and time_col in header:
        cols["t"] = header.index(time_col)

    out = {k: [] for k in cols}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        for key, idx in cols.items():
            cell = row[idx].strip()
            try:
                val = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric value {cell!r} in column "
                    f"{header[idx]!r}") from None
            if not math.isfinite(val):
                raise DataError(f"{path}:{lineno}: non-finite value in {header[idx]!r}")
            out[key].append(val)

    u = np.array(out["u"])
    y = np.array(out["y"])
    if "t" in out:
        t = np.array(out["t"])
        if sample_period is None:
            dt = np.diff(t)
            sample_period = float(np.median(dt)) if len(dt) and np.median(dt) > 0 else 1.0
    else:
        sample_period = 1.0 if sample_period is None else sample_period
        t = np.arange(len(u)) * sample_period
    return TimeSeriesDataset(t, u, y, sample_period=float(sample_period), name=path.stem)


def detrend(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Remove the per-channel mean; the removed means are kept in ``offsets``."""
    mu_u = float(np.mean(ds.u))
    mu_y = float(np.mean(ds.y))
    u = ds.u - mu_u
    y = ds.y - mu_y
    # a second pass removes the residual rounding left by the first
    du, dy = float(np.mean(u)), float(np.mean(y))
    u, y = u - du, y - dy
    prev = ds.offsets or (0.0, 0.0)
    return replace(ds, u=u, y=y, offsets=(prev[0] + mu_u + du, prev[1] + mu_y + dy))


def retrend(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Undo :func:`detrend` by adding the stored offsets back."""
    if ds.offsets is None:
        return ds
    ou, oy = ds.offsets
    return replace(ds, u=ds.u + ou, y=ds.y + oy, offsets=None)


def build_regressors(ds, cfg: RegressorConfig) -> RegressionMatrix:
    """Window ``ds`` into regressor rows and one-step-ahead targets."""
    u = ds.u if isinstance(ds, TimeSeriesDataset) else np.asarray(ds[0], float)
    y = ds.y if isinstance(ds, TimeSeriesDataset) else np.asarray(ds[1], float)
    T = len(u)
    k0 = cfg.first_index
    if T <= k0 + 1:
        raise DataError(
            f"series of length {T} too short for lags l_u={cfg.l_u}, l_y={cfg.l_y}")
    ks = np.arange(k0, T)
    u_idx = ks[:, None] - np.arange(cfg.l_u + 1)[None, :]
    y_idx = ks[:, None] - np.arange(1, cfg.l_y + 1)[None, :]
    Z = np.concatenate([u[u_idx], y[y_idx]], axis=1)
    return RegressionMatrix(Z=Z, targets=y[ks].copy(), first_index=k0, cfg=cfg)


def regressor_row(u, y_hist, k, cfg: RegressorConfig) -> np.ndarray:
    """Single regressor row for index ``k`` from an input array and any
    indexable output history (measured or simulated)."""
    row = np.empty(cfg.width)
    row[: cfg.l_u + 1] = u[k - np.arange(cfg.l_u + 1)]
    for i in range(cfg.l_y):
        row[cfg.l_u + 1 + i] = y_hist[k - 1 - i]
    return row


def split(ds: TimeSeriesDataset, n_est: int):
    """Contiguous estimation/validation split, estimation first."""
    T = len(ds)
    if not 0 < n_est < T:
        raise DataError(f"n_est must satisfy 0 < n_est < {T}, got {n_est}")
    cut = lambda a, s: a[s].copy()
    first = replace(ds, time=cut(ds.time, slice(0, n_est)), u=cut(ds.u, slice(0, n_est)),
                    y=cut(ds.y, slice(0, n_est)))
    second = replace(ds, time=cut(ds.time, slice(n_est, None)), u=cut(ds.u, slice(n_est, None)),
                     y=cut(ds.y, slice(n_est, None)))
    return first, second
