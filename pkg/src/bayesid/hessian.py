"""Layer-wise (block-diagonal) Hessians of the one-step squared-error loss.

All routines work with the per-sample loss ``l_n = 0.5 * (y_hat_n - y_n)**2``
and return the Hessian of the *mean* loss, i.e. the average of per-sample
Hessians. Diagonals are returned as arrays congruent to the weight matrix;
``vec`` turns one into the column-stacked vector that indexes the full block
returned by :func:`fc_hessian_exact`.

For ``h^l = W^l a^{l-1}`` the within-layer block is
``(a^{l-1} a^{l-1}^T) kron H^l`` where ``H^l`` is the Hessian of the loss with
respect to the pre-activation ``h^l``. The exact recursion is::

    H^l = B W^{l+1}^T H^{l+1} W^{l+1} B + D,   B = diag(s'(h^l)),
                                              D = diag(s''(h^l) * dL/da^l)

and the simplified one keeps only diagonals::

    H^l = s'(h^l)**2 * ((W^{l+1}**2)^T H^{l+1}) + s''(h^l) * dL/da^l
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .models.mlp import MlpNetwork, MlpTrace
from .models.recurrent import GATES, LstmNetwork, RnnNetwork, _check_tau, _shift


class HessianSizeError(ValueError):
    pass


def vec(A):
    """Column-stacking vectorisation."""
    return np.asarray(A).ravel(order="F")


def unvec(v, shape):
    return np.asarray(v).reshape(shape, order="F")


def clamp_psd(diag):
    """Negative diagonal entries set to zero (applied to dicts or arrays)."""
    if isinstance(diag, dict):
        return {k: np.maximum(v, 0.0) for k, v in diag.items()}
    return np.maximum(diag, 0.0)


# ---------------------------------------------------------------------------
# fully connected layers
# ---------------------------------------------------------------------------

def activation_grads(net: MlpNetwork, trace: MlpTrace, residual):
    """Per-sample ``dl_n/da^l`` for every layer (list indexed like layers)."""
    g = np.asarray(residual, dtype=float).reshape(-1, 1)
    out = [None] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        out[l] = g
        g = (g * net.activations[l].d1(trace.pre[l])) @ net.weights[l]
    return out


def fc_hessian_diag(net: MlpNetwork, trace: MlpTrace, layer, next_pre_hessian, dL_da):
    """One step of the simplified recursion for layer index ``layer`` (0-based).

    ``next_pre_hessian`` is the per-sample diagonal pre-activation Hessian of
    layer ``layer + 1`` with shape ``(N, n_{l+1})``, or None for the output
    layer (where the loss curvature ``d2l/dy^2 = 1`` is used). ``dL_da`` is the
    per-sample gradient with respect to this layer's activation.

    Returns ``(diag, pre_hessian)``: the batch-mean diagonal Hessian of
    ``W^l`` (shape of ``W^l``) and this layer's per-sample ``H^l``.
    """
    h = trace.pre[layer]
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite pre-activations in trace")
    if next_pre_hessian is None:
        if layer != net.n_layers - 1:
            raise ValueError("only the output layer may omit next_pre_hessian")
        curv_a = np.ones_like(h)
    else:
        W_next = net.weights[layer + 1]
        if next_pre_hessian.shape != (h.shape[0], W_next.shape[0]):
            raise ValueError("next_pre_hessian shape does not match layer")
        curv_a = next_pre_hessian @ (W_next ** 2)
    sig = net.activations[layer]
    H = sig.d1(h) ** 2 * curv_a + sig.d2(h) * dL_da
    a_prev = trace.inputs if layer == 0 else trace.act[layer - 1]
    N = h.shape[0]
    return H.T @ (a_prev ** 2) / N, H


def _exact_pre_hessians(net: MlpNetwork, trace: MlpTrace, dL_da):
    """Full per-sample pre-activation Hessians, shape ``(N, n_l, n_l)``."""
    L = net.n_layers
    out = [None] * L
    for l in range(L - 1, -1, -1):
        h = trace.pre[l]
        sig = net.activations[l]
        B = sig.d1(h)
        if l == L - 1:
            A = np.ones((h.shape[0], 1, 1))
        else:
            W = net.weights[l + 1]
            A = np.einsum("ki,nkm,mj->nij", W, out[l + 1], W)
        H = B[:, :, None] * A * B[:, None, :]
        idx = np.arange(h.shape[1])
        H[:, idx, idx] += sig.d2(h) * dL_da[l]
        out[l] = H
    return out


def fc_hessian_exact(net: MlpNetwork, X, y, layer, max_size=10_000):
    """Exact within-layer Hessian block of ``W^l`` (0-based ``layer``) as an
    ``(mn, mn)`` matrix in column-stacked order."""
    m, n = net.weights[layer].shape
    if m * n > max_size:
        raise HessianSizeError(f"layer {layer} has {m * n} weights; exact block limited "
                               f"to {max_size}")
    yhat, trace = net.forward(X)
    dL_da = activation_grads(net, trace, yhat - np.asarray(y, dtype=float))
    H = _exact_pre_hessians(net, trace, dL_da)[layer]
    a = trace.inputs if layer == 0 else trace.act[layer - 1]
    N = a.shape[0]
    # mean_n kron(a_n a_n^T, H_n)
    block = np.einsum("nj,nk,nab->jakb", a, a, H) / N
    return block.reshape(n * m, n * m)


def mlp_hessian_diag(net: MlpNetwork, X, y, variant="simplified"):
    """Diagonal Hessians of every weight (and bias) array of an MLP.

    ``variant`` is ``"simplified"`` (diagonal recursion) or ``"exact"``
    (diagonal of the exact block).
    """
    yhat, trace = net.forward(X)
    dL_da = activation_grads(net, trace, yhat - np.asarray(y, dtype=float))
    N = trace.inputs.shape[0]
    out = {}
    if variant == "simplified":
        H_next = None
        for l in range(net.n_layers - 1, -1, -1):
            diag, H_next = fc_hessian_diag(net, trace, l, H_next, dL_da[l])
            out[f"W{l + 1}"] = diag
            if net.biases[l] is not None:
                out[f"b{l + 1}"] = H_next.mean(axis=0)
    elif variant == "exact":
        Hs = _exact_pre_hessians(net, trace, dL_da)
        for l in range(net.n_layers):
            Hd = np.einsum("nii->ni", Hs[l])
            a = trace.inputs if l == 0 else trace.act[l - 1]
            out[f"W{l + 1}"] = Hd.T @ (a ** 2) / N
            if net.biases[l] is not None:
                out[f"b{l + 1}"] = Hd.mean(axis=0)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return out


def pre_activation_hessians(net: MlpNetwork, X, y, variant="simplified"):
    """Per-layer batch-mean pre-activation Hessians (vectors for the
    simplified variant, full blocks for the exact one)."""
    yhat, trace = net.forward(X)
    dL_da = activation_grads(net, trace, yhat - np.asarray(y, dtype=float))
    if variant == "exact":
        return [H.mean(axis=0) for H in _exact_pre_hessians(net, trace, dL_da)]
    out = [None] * net.n_layers
    H_next = None
    for l in range(net.n_layers - 1, -1, -1):
        _, H_next = fc_hessian_diag(net, trace, l, H_next, dL_da[l])
        out[l] = H_next.mean(axis=0)
    return out


# ---------------------------------------------------------------------------
# recurrent layers
# ---------------------------------------------------------------------------

def rnn_hessian_diag(net: RnnNetwork, Z, y, tau=None):
    """Block-diagonal Hessian diagonals of ``W_o``, ``W_h`` and ``W_i``.

    Every output time ``t`` seeds ``H^{t,t} = s'(hbar(t))**2 * (W_o**2)^T +
    s''(hbar(t)) * dl_t/dh(t)``; the ``W_h`` recursion then runs back through
    ``W_h`` for ``tau`` steps carrying the ``s''`` term, while the ``W_i``
    recursion uses the same product of squared Jacobians without it. Each
    weight Hessian sums ``input**2 (x) H^{t,j}`` over the horizon and
    averages over ``t``.
    """
    yhat, tr = net.forward(Z)
    T = len(yhat)
    tau = _check_tau(tau, T)
    r = yhat - np.asarray(y, dtype=float)
    sig = net.activation
    d1, d2 = sig.d1(tr.pre), sig.d2(tr.pre)
    Wo, Wh = net.W_o[0], net.W_h
    out = {"W_o": (tr.h ** 2).sum(axis=0)[None, :] / T}   # output pre-activation Hessian is 1

    g_h = np.outer(r, Wo)                                  # dl_t/dh(t-d)
    curv_h = np.tile(Wo ** 2, (T, 1))                      # diag d2l_t/dh(t-d)^2 (Gauss-Newton part)
    Hh_sum = np.zeros_like(net.W_h)
    Hi_sum = np.zeros_like(net.W_i)
    Hi = None
    for d in range(tau):
        B, D = _shift(d1, d), _shift(d2, d)
        Hh = B ** 2 * curv_h + D * g_h
        Hi = Hh if d == 0 else B ** 2 * (Hi @ Wh ** 2)
        Hh_sum += Hh.T @ _shift(tr.h_prev, d) ** 2
        Hi_sum += Hi.T @ _shift(tr.Z, d) ** 2
        curv_h = Hh @ Wh ** 2
        g_h = (g_h * B) @ Wh
    out["W_h"] = Hh_sum / T
    out["W_i"] = Hi_sum / T
    return out


def lstm_hessian_diag(net: LstmNetwork, Z, y, tau=None):
    """Approximate diagonal Hessians of every LSTM matrix.

    Diagonal curvature is carried backwards through both the hidden state and
    the cell state, using the gate values stored in the forward trace as the
    local Jacobians. Each gate's pre-activation curvature is formed from the
    squared gate Jacobian times the carried curvature plus the gate's
    second-derivative term, and weight diagonals follow as in the RNN case.
    """
    yhat, tr = net.forward(Z)
    T = len(yhat)
    tau = _check_tau(tau, T)
    r = yhat - np.asarray(y, dtype=float)
    Wout = net.W_out[0]
    out = {"W_out": (tr.h ** 2).sum(axis=0)[None, :] / T}
    acc = {f"W_i{g}": np.zeros_like(net.W_in[g]) for g in GATES}
    acc.update({f"W_h{g}": np.zeros_like(net.W_rec[g]) for g in GATES})
    if net.b is not None:
        acc.update({f"b_{g}": np.zeros(net.hidden_size) for g in GATES})

    dh = np.outer(r, Wout)
    dc = np.zeros_like(dh)
    Hh = np.tile(Wout ** 2, (T, 1))
    Hc = np.zeros_like(dh)
    rows = np.arange(T)
    for d in range(tau):
        valid = (rows >= d)[:, None]
        gv = {g: _shift(tr.gate[g], d) for g in GATES}
        c, cp = _shift(tr.c, d), _shift(tr.c_prev, d)
        tc = np.tanh(c)
        dtc = 1.0 - tc ** 2
        o, i, j, f = gv["o"], gv["i"], gv["j"], gv["f"]
        dct = dc + dh * o * dtc
        Hct = Hc + (o * dtc) ** 2 * Hh + o * (-2.0 * tc * dtc) * dh
        s1 = {g: gv[g] * (1.0 - gv[g]) for g in ("i", "f", "o")}
        s2 = {g: s1[g] * (1.0 - 2.0 * gv[g]) for g in ("i", "f", "o")}
        t1 = 1.0 - j ** 2
        t2 = -2.0 * j * t1
        Ha = {
            "o": (tc * s1["o"]) ** 2 * Hh + tc * s2["o"] * dh,
            "i": (j * s1["i"]) ** 2 * Hct + j * s2["i"] * dct,
            "j": (i * t1) ** 2 * Hct + i * t2 * dct,
            "f": (cp * s1["f"]) ** 2 * Hct + cp * s2["f"] * dct,
        }
        da = {
            "o": dh * tc * s1["o"],
            "i": dct * j * s1["i"],
            "j": dct * i * t1,
            "f": dct * cp * s1["f"],
        }
        zs, hp = _shift(tr.Z, d), _shift(tr.h_prev, d)
        for g in GATES:
            Ha[g] = np.where(valid, Ha[g], 0.0)
            acc[f"W_i{g}"] += Ha[g].T @ zs ** 2
            acc[f"W_h{g}"] += Ha[g].T @ hp ** 2
            if net.b is not None:
                acc[f"b_{g}"] += Ha[g].sum(axis=0)
        Hc = f ** 2 * Hct
        Hh = sum(Ha[g] @ net.W_rec[g] ** 2 for g in GATES)
        dc = dct * f
        dh = sum(da[g] @ net.W_rec[g] for g in GATES)
    out.update({k: v / T for k, v in acc.items()})
    return out


def network_hessian_diag(net, X, y, tau=None, variant="simplified"):
    """Dispatch on network type; returns raw (unclamped) diagonals."""
    if isinstance(net, MlpNetwork):
        return mlp_hessian_diag(net, X, y, variant=variant)
    if isinstance(net, LstmNetwork):
        return lstm_hessian_diag(net, X, y, tau)
    if isinstance(net, RnnNetwork):
        return rnn_hessian_diag(net, X, y, tau)
    raise TypeError(f"unsupported network {type(net).__name__}")


# ---------------------------------------------------------------------------
# oracles and bookkeeping
# ---------------------------------------------------------------------------

def mean_loss(net, X, y):
    r = net.predict(X) - np.asarray(y, dtype=float)
    return 0.5 * float(r @ r) / len(r)


def finite_diff_hessian(net, X, y, eps=1e-4, max_params=1000, loss=None):
    """Central second differences of the mean loss, one entry at a time.

    ``loss(net)`` can replace the default half mean squared error.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    n_params = sum(a.size for a in net.params.values())
    if n_params > max_params:
        raise HessianSizeError(f"{n_params} parameters exceed the finite-difference "
                               f"guard of {max_params}")
    f = loss if loss is not None else (lambda m: mean_loss(m, X, y))
    work = net.copy()
    for m in work.masks.values():
        m[...] = True
    # restore the zeroed entries' true values (masks were widened above)
    for name, arr in work.params.items():
        arr[...] = net.params[name]
    L0 = f(work)
    out = {}
    for name, arr in work.params.items():
        diag = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            w = arr[idx]
            arr[idx] = w + eps
            Lp = f(work)
            arr[idx] = w - eps
            Lm = f(work)
            arr[idx] = w
            diag[idx] = (Lp - 2.0 * L0 + Lm) / eps ** 2
        out[name] = diag
    return out


def finite_diff_scalar(fun, w, eps=1e-4):
    """Second central difference of a scalar function of one variable."""
    return (fun(w + eps) - 2.0 * fun(w) + fun(w - eps)) / eps ** 2


def mac_count(variant, m, n):
    """Multiply-accumulate count for one layer's Hessian, ``W`` of shape
    ``(m, n)``: ``n(2m^2+2n^2+4mn+3m-1)`` for the exact Kronecker recursion,
    ``n(2+4m)`` for the diagonal one."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    if variant == "exact":
        return n * (2 * m * m + 2 * n * n + 4 * m * n + 3 * m - 1)
    if variant == "simplified":
        return n * (2 + 4 * m)
    raise ValueError(f"unknown variant {variant!r}")


def dump_hessian_csv(diags, directory, prefix="hessian"):
    """Write one CSV per matrix: flattened (column-stacked) index, raw value,
    clamped value. Returns the list of written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, raw in diags.items():
        p = directory / f"{prefix}_{name}.csv"
        v = vec(raw)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "raw", "clamped"])
            for k, x in enumerate(v):
                w.writerow([k, repr(float(x)), repr(float(max(x, 0.0)))])
        paths.append(p)
    return paths
