"""Prior widths, posterior variances and the group-sparsity penalty.

Group names refer to the stored arrays, which use the ``h = W a`` layout:
``row`` groups are the rows of ``W`` (one per output neuron) and ``col``
groups are its columns (one per input, so column groups of the first matrix
select regressors).

Pruned entries carry ``psi = 0``, ``omega = 0`` and ``Sigma = 0`` and are
skipped by every update; groups whose entries are all pruned likewise get
zero width and weight and are never divided by.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

OMEGA_FLOOR = 1e-8
PSI_CAP = 1e8


class PriorGrouping(str, enum.Enum):
    SHAPE = "shape_wise"
    ROW = "row_wise"
    COLUMN = "column_wise"
    COMBINED = "row_and_column"

    @property
    def groups(self):
        return {"shape_wise": ("entry",), "row_wise": ("row",), "column_wise": ("col",),
                "row_and_column": ("row", "col")}[self.value]


def as_grouping(g):
    try:
        return PriorGrouping(g)
    except ValueError:
        names = ", ".join(x.value for x in PriorGrouping)
        raise ValueError(f"unknown prior grouping {g!r}; expected one of {names}") from None


# ---------------------------------------------------------------------------
# elementwise formulas
# ---------------------------------------------------------------------------

def posterior_variance(H, psi, mask=None):
    """``Sigma = 1 / (H + 1/psi)`` entrywise; zero where ``mask`` is False."""
    H = np.asarray(H, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), H.shape)
    live = np.ones(H.shape, bool) if mask is None else np.asarray(mask, bool)
    if np.any(psi[live] <= 0):
        raise ValueError("prior widths must be positive for unpruned entries")
    if np.any(H[live] < 0):
        raise ValueError("Hessian diagonal must be clamped to >= 0")
    out = np.zeros(H.shape)
    out[live] = psi[live] / (H[live] * psi[live] + 1.0)
    return out


def update_alpha(Sigma, psi, mask=None):
    """``alpha = 1/psi - Sigma/psi**2``; zero where ``mask`` is False."""
    Sigma = np.asarray(Sigma, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), Sigma.shape)
    live = np.ones(Sigma.shape, bool) if mask is None else np.asarray(mask, bool)
    s, p = Sigma[live], psi[live]
    if np.any(p <= 0):
        raise ValueError("prior widths must be positive for unpruned entries")
    if np.any(s > p * (1.0 + 1e-12)) or np.any(s <= 0):
        raise ValueError("posterior variance outside (0, psi]; was the Hessian clamped?")
    out = np.zeros(Sigma.shape)
    out[live] = np.maximum((1.0 - s / p) / p, 0.0)
    return out


def alpha_from_hessian(H, psi):
    """Closed form of ``update_alpha(posterior_variance(H, psi), psi)``:
    ``H / (H psi + 1)``."""
    H = np.asarray(H, dtype=float)
    return H / (H * psi + 1.0)


def combined_prior_width(psi_row, psi_col):
    """``1 / (1/psi_row + 1/psi_col)``; broadcasting a row vector of shape
    ``(m, 1)`` against a column vector ``(1, n)`` gives the entry widths."""
    psi_row = np.asarray(psi_row, dtype=float)
    psi_col = np.asarray(psi_col, dtype=float)
    if np.any(psi_row <= 0) or np.any(psi_col <= 0):
        raise ValueError("prior widths must be positive")
    with np.errstate(divide="ignore"):
        return 1.0 / (1.0 / psi_row + 1.0 / psi_col)


def solve_psi_scalar(W, alpha):
    """Minimiser of ``W**2/psi + alpha*psi`` over ``psi > 0`` and the
    objective value there.

    Returns ``(psi_star, objective)``. ``W = 0`` gives ``psi_star = 0``. With
    ``alpha = 0`` and ``W = 0`` the problem is flat and ``(nan, 0.0)`` is
    returned so the caller keeps its current width; ``alpha <= 0`` with
    ``W != 0`` has no minimiser and raises.
    """
    W = float(W)
    alpha = float(alpha)
    if alpha <= 0:
        if W == 0.0 and alpha == 0.0:
            return float("nan"), 0.0
        raise ValueError("objective unbounded below: alpha <= 0 with W != 0")
    r = np.sqrt(alpha)
    return abs(W) / r, 2.0 * r * abs(W)


def cccp_gap(psi_candidate, psi_k, H):
    """Over-estimation gap of the tangent to ``v(psi) = sum log(H psi + 1)``
    taken at ``psi_k`` and evaluated at ``psi_candidate``. Non-negative
    because ``v`` is concave."""
    psi_candidate = np.asarray(psi_candidate, dtype=float)
    psi_k = np.asarray(psi_k, dtype=float)
    H = np.asarray(H, dtype=float)
    if np.any(psi_candidate <= 0) or np.any(psi_k <= 0):
        raise ValueError("prior widths must be positive")
    if np.any(H < 0):
        raise ValueError("Hessian diagonal must be >= 0")
    alpha = alpha_from_hessian(H, psi_k)
    # log1p differences keep the gap accurate when psi_candidate ~ psi_k
    dv = np.log1p(H * (psi_candidate - psi_k) / (H * psi_k + 1.0))
    return float(np.sum(alpha * (psi_candidate - psi_k) - dv))


# ---------------------------------------------------------------------------
# per-matrix state
# ---------------------------------------------------------------------------

def _group_norms(W, axis):
    return np.sqrt(np.sum(W * W, axis=axis))


@dataclass
class MatrixPrior:
    """Prior/posterior bookkeeping for one parameter array."""

    grouping: PriorGrouping
    shape: tuple
    omega: dict = field(default_factory=dict)      # "entry"|"row"|"col" -> array
    psi: dict = field(default_factory=dict)
    psi_entry: np.ndarray = None
    alpha: np.ndarray = None
    Sigma: np.ndarray = None
    H: np.ndarray = None

    @classmethod
    def initial(cls, shape, grouping):
        """``Psi(0) = I`` and ``omega(0) = 1``."""
        grouping = as_grouping(grouping)
        if len(shape) == 1 and grouping is not PriorGrouping.SHAPE:
            raise ValueError("vectors only support shape-wise priors")
        m = cls(grouping, tuple(shape))
        for g in grouping.groups:
            n = {"entry": shape, "row": (shape[0],), "col": (shape[-1],)}[g]
            m.omega[g] = np.ones(n)
            m.psi[g] = np.ones(n)
        m.psi_entry = np.ones(shape)
        m.alpha = np.zeros(shape)
        m.Sigma = np.ones(shape)
        m.H = np.zeros(shape)
        return m

    def entry_omega_view(self):
        """Omega broadcast to entries (diagnostics only)."""
        out = np.zeros(self.shape)
        for g, w in self.omega.items():
            out = out + (w if g == "entry" else w[:, None] if g == "row" else w[None, :])
        return out


def update_omega_psi(W, alpha, grouping, mask=None):
    """Regularisation weights and prior widths for one array.

    Returns ``(omega, psi, psi_entry)`` where ``omega`` and ``psi`` map group
    kinds (``entry``, ``row``, ``col``) to arrays and ``psi_entry`` is the
    per-entry width used by the posterior (harmonic combination for the
    row-and-column grouping).
    """
    W = np.asarray(W, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    grouping = as_grouping(grouping)
    live = np.ones(W.shape, bool) if mask is None else np.asarray(mask, bool)
    if np.any(alpha[live] < 0):
        raise ValueError("alpha must be non-negative")
    a = np.where(live, alpha, 0.0)
    omega, psi = {}, {}
    for g in grouping.groups:
        if g == "entry":
            alive, asum, norm = live, a, np.abs(W)
        else:
            axis = 1 if g == "row" else 0
            alive = live.any(axis=axis)
            asum = a.sum(axis=axis)
            norm = _group_norms(np.where(live, W, 0.0), axis)
        om = np.where(alive, np.maximum(np.sqrt(asum), OMEGA_FLOOR), 0.0)
        ps = np.zeros(om.shape)
        ps[alive] = np.minimum(norm[alive] / om[alive], PSI_CAP)
        omega[g], psi[g] = om, ps
    if grouping is PriorGrouping.SHAPE:
        psi_entry = psi["entry"]
    elif grouping is PriorGrouping.ROW:
        psi_entry = np.broadcast_to(psi["row"][:, None], W.shape).copy()
    elif grouping is PriorGrouping.COLUMN:
        psi_entry = np.broadcast_to(psi["col"][None, :], W.shape).copy()
    else:
        pr, pc = psi["row"][:, None], psi["col"][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            psi_entry = np.where((pr > 0) & (pc > 0), pr * pc / (pr + pc), 0.0)
    return omega, psi, np.where(live, psi_entry, 0.0)


def default_groupings(net, input_grouping=PriorGrouping.COMBINED, other=PriorGrouping.SHAPE):
    """Input matrices get ``input_grouping``; everything else, and every bias
    vector, is shape-wise unless ``other`` says otherwise."""
    out = {}
    for name, arr in net.params.items():
        if arr.ndim == 1:
            out[name] = PriorGrouping.SHAPE
        elif name in net.input_matrices:
            out[name] = as_grouping(input_grouping)
        else:
            out[name] = as_grouping(other)
    return out


class PosteriorState(dict):
    """Mapping of parameter name -> :class:`MatrixPrior`."""

    @classmethod
    def initial(cls, net, groupings=None):
        groupings = default_groupings(net) if groupings is None else groupings
        return cls({name: MatrixPrior.initial(arr.shape, groupings[name])
                    for name, arr in net.params.items()})

    def update(self, net, H_clamped):
        """One evidence step: ``Sigma``, ``alpha`` from the current widths and
        the clamped Hessian, then new ``omega`` and ``psi`` from the trained
        weights."""
        params = net.params
        for name, st in self.items():
            mask = net.masks[name]
            H = np.asarray(H_clamped[name], dtype=float)
            st.H = np.where(mask, H, 0.0)
            st.Sigma = posterior_variance(st.H, np.where(mask, st.psi_entry, 1.0), mask)
            st.alpha = update_alpha(st.Sigma, np.where(mask, st.psi_entry, 1.0), mask)
            st.omega, st.psi, st.psi_entry = update_omega_psi(
                params[name], st.alpha, st.grouping, mask)
        return self

    def variances(self):
        return {name: st.Sigma.copy() for name, st in self.items()}


# ---------------------------------------------------------------------------
# penalty
# ---------------------------------------------------------------------------

def penalty(W, omega, grouping):
    """``rho(omega, W)`` for one array."""
    W = np.asarray(W, dtype=float)
    total = 0.0
    for g in as_grouping(grouping).groups:
        if g == "entry":
            total += float(np.sum(omega["entry"] * np.abs(W)))
        else:
            axis = 1 if g == "row" else 0
            total += float(np.sum(omega[g] * _group_norms(W, axis)))
    return total


def penalty_grad(W, omega, grouping):
    """A subgradient of :func:`penalty` (zero at zero, entrywise and for
    all-zero groups)."""
    W = np.asarray(W, dtype=float)
    out = np.zeros(W.shape)
    for g in as_grouping(grouping).groups:
        if g == "entry":
            out += omega["entry"] * np.sign(W)
        else:
            axis = 1 if g == "row" else 0
            norms = np.expand_dims(_group_norms(W, axis), axis)
            w = np.expand_dims(omega[g], axis)
            with np.errstate(divide="ignore", invalid="ignore"):
                out += np.where(norms > 0, w * W / norms, 0.0)
    return out


def regularised_loss(E, net, state: PosteriorState, lam):
    """``E + lam * sum_l rho(omega^l, W^l)``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    params = net.params
    return E + lam * sum(penalty(params[n], st.omega, st.grouping) for n, st in state.items())


def regularised_grad(grads, net, state: PosteriorState, lam):
    """Data gradients plus ``lam`` times the penalty subgradient (masked)."""
    params = net.params
    out = {}
    for name, g in grads.items():
        st = state.get(name)
        extra = 0.0 if st is None or lam == 0 else \
            lam * penalty_grad(params[name], st.omega, st.grouping)
        out[name] = np.where(net.masks[name], g + extra, 0.0)
    return out


def sparse_group_lasso(net, groupings):
    """Unit-weight penalty: entrywise l1 for shape-wise arrays and unweighted
    group l2 norms for grouped ones."""
    total = 0.0
    for name, W in net.params.items():
        g = as_grouping(groupings[name])
        if g is PriorGrouping.SHAPE:
            total += float(np.abs(W).sum())
        if g in (PriorGrouping.ROW, PriorGrouping.COMBINED):
            total += float(np.linalg.norm(W, axis=1).sum())
        if g in (PriorGrouping.COLUMN, PriorGrouping.COMBINED):
            total += float(np.linalg.norm(W, axis=0).sum())
    return total


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def prune(net, psi_entry, kappa_psi=1e-3, kappa_w=1e-3):
    """New masks: existing mask AND ``psi >= kappa_psi`` AND
    ``|W| >= kappa_w``. ``psi_entry`` maps names to per-entry widths; arrays
    absent from it are judged on magnitude only."""
    if kappa_psi < 0 or kappa_w < 0:
        raise ValueError("pruning thresholds must be non-negative")
    out = {}
    for name, W in net.params.items():
        keep = net.masks[name] & (np.abs(W) >= kappa_w)
        if name in psi_entry:
            keep &= np.asarray(psi_entry[name]) >= kappa_psi
        out[name] = keep
    return out
