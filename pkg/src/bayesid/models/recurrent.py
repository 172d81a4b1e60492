"""Single-layer recurrent networks driven by lagged regressor rows.

Both networks keep their state across the whole sequence (zero initial
state) and emit a scalar linear readout at every step.

Truncated BPTT with horizon ``tau`` sums, for every output time ``t``, the
contributions of parameter uses at steps ``t, t-1, ..., t-tau+1``. It is
evaluated for all ``t`` at once: iteration ``d`` of the backward sweep holds
``dL_t/dh(t-d)`` for every ``t`` in one ``(T, H)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import IDENTITY, SIGMOID, TANH, get_activation

GATES = ("i", "j", "f", "o")


def _shift(arr, d):
    """Rows ``t`` of the result hold ``arr[t - d]``; rows ``t < d`` are zero."""
    out = np.zeros_like(arr)
    if d < len(arr):
        out[d:] = arr[: len(arr) - d]
    return out


def _check_tau(tau, T):
    if tau is None:
        return T
    if int(tau) != tau or tau < 1:
        raise ValueError(f"BPTT horizon must be an integer >= 1, got {tau!r}")
    return min(int(tau), T)


class _MaskedParams:
    """Shared bookkeeping for networks whose parameters live in a dict."""

    def _init_masks(self, masks):
        self.masks = {}
        for name, arr in self.params.items():
            m = np.ones(arr.shape, dtype=bool) if masks is None or name not in masks \
                else np.asarray(masks[name], dtype=bool)
            if m.shape != arr.shape:
                raise ValueError(f"mask for {name} has shape {m.shape}, expected {arr.shape}")
            self.masks[name] = m
        self._enforce_masks()

    def _enforce_masks(self):
        for name, arr in self.params.items():
            arr[~self.masks[name]] = 0.0

    def set_params(self, new):
        for name, val in new.items():
            self.params[name][...] = val
        self._enforce_masks()

    def predict(self, X):
        return self.forward(X)[0]

    def __call__(self, X):
        return self.predict(X)

    def loss_grad(self, X, y, tau=None):
        yhat, trace = self.forward(X)
        r = yhat - np.asarray(y, dtype=float)
        T = len(r)
        return 0.5 * float(r @ r) / T, self.bptt(trace, r / T, tau)

    def free_run(self, u, y_init, cfg):
        from ..prediction import free_run_simulate
        return free_run_simulate(self, u, y_init, cfg)


# ---------------------------------------------------------------------------
# plain RNN
# ---------------------------------------------------------------------------

@dataclass
class RnnTrace:
    Z: np.ndarray        # inputs z(t), (T, n)
    pre: np.ndarray      # hbar(t), (T, H)
    h: np.ndarray        # h(t), (T, H)
    h_prev: np.ndarray   # h(t-1), (T, H)
    y: np.ndarray        # (T,)


class RnnNetwork(_MaskedParams):
    """``h(t) = s(W_i z(t) + W_h h(t-1))``, ``y(t) = W_o h(t)``."""

    kind = "rnn"

    def __init__(self, W_i, W_h, W_o, activation="tanh", masks=None, seed=None):
        self.W_i = np.array(W_i, dtype=float, ndmin=2)
        self.W_h = np.array(W_h, dtype=float, ndmin=2)
        self.W_o = np.array(W_o, dtype=float, ndmin=2)
        H = self.W_h.shape[0]
        if self.W_h.shape != (H, H) or self.W_i.shape[0] != H or self.W_o.shape != (1, H):
            raise ValueError("inconsistent RNN matrix shapes")
        self.activation = get_activation(activation)
        self.seed = seed
        self._init_masks(masks)

    @classmethod
    def init(cls, n_in, hidden_size, activation="tanh", seed=0):
        rng = np.random.default_rng(seed)
        r_in, r_h = np.sqrt(1.0 / n_in), np.sqrt(1.0 / hidden_size)
        return cls(rng.uniform(-r_in, r_in, (hidden_size, n_in)),
                   rng.uniform(-r_h, r_h, (hidden_size, hidden_size)),
                   rng.uniform(-r_h, r_h, (1, hidden_size)), activation, seed=seed)

    @property
    def params(self):
        return {"W_i": self.W_i, "W_h": self.W_h, "W_o": self.W_o}

    @property
    def input_matrices(self):
        return ["W_i"]

    @property
    def hidden_size(self):
        return self.W_h.shape[0]

    def copy(self):
        return RnnNetwork(self.W_i, self.W_h, self.W_o, self.activation,
                          masks={k: v.copy() for k, v in self.masks.items()}, seed=self.seed)

    def forward(self, Z, h0=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.W_i.shape[1]:
            raise ValueError(f"row width {Z.shape[1]} != input width {self.W_i.shape[1]}")
        T, H = len(Z), self.hidden_size
        pre = np.empty((T, H))
        hs = np.empty((T, H))
        h_prev = np.empty((T, H))
        h = np.zeros(H) if h0 is None else np.asarray(h0, dtype=float)
        drive = Z @ self.W_i.T
        for t in range(T):
            h_prev[t] = h
            pre[t] = drive[t] + self.W_h @ h
            h = self.activation(pre[t])
            hs[t] = h
        y = hs @ self.W_o[0]
        return y, RnnTrace(Z, pre, hs, h_prev, y)

    def step(self, z, state):
        h = np.zeros(self.hidden_size) if state is None else state
        h = self.activation(self.W_i @ z + self.W_h @ h)
        return float(self.W_o[0] @ h), h

    def bptt(self, trace: RnnTrace, dL_dy, tau=None):
        g = np.asarray(dL_dy, dtype=float)
        T = len(trace.y)
        if g.shape != (T,):
            raise ValueError("dL_dy must have one entry per time step")
        tau = _check_tau(tau, T)
        grads = {"W_o": (g @ trace.h)[None, :]}
        gh = np.outer(g, self.W_o[0])             # dL_t/dh(t-d), rows t
        dWi = np.zeros_like(self.W_i)
        dWh = np.zeros_like(self.W_h)
        sp = self.activation.d1(trace.pre)
        for d in range(tau):
            delta = gh * _shift(sp, d)
            dWi += delta.T @ _shift(trace.Z, d)
            dWh += delta.T @ _shift(trace.h_prev, d)
            gh = delta @ self.W_h
        grads["W_i"], grads["W_h"] = dWi, dWh
        for name in grads:
            grads[name][~self.masks[name]] = 0.0
        return grads

    def to_dict(self):
        return {"kind": self.kind, "activation": self.activation.name,
                "W_i": self.W_i.tolist(), "W_h": self.W_h.tolist(), "W_o": self.W_o.tolist(),
                "masks": {k: v.astype(int).tolist() for k, v in self.masks.items()},
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["W_i"], d["W_h"], d["W_o"], d["activation"],
                   masks={k: np.array(v, dtype=bool) for k, v in d["masks"].items()},
                   seed=d.get("seed"))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LstmTrace:
    Z: np.ndarray
    pre: dict            # gate -> pre-activation (T, H)
    gate: dict           # gate -> gate value (T, H)
    c: np.ndarray        # c(t)
    c_prev: np.ndarray   # c(t-1)
    h: np.ndarray        # h(t)
    h_prev: np.ndarray   # h(t-1)
    y: np.ndarray
    extra: dict = field(default_factory=dict)


class LstmNetwork(_MaskedParams):
    """Standard LSTM cell with a linear scalar readout.

    Gates: input ``i``, candidate ``j`` (tanh), forget ``f`` and output ``o``
    (sigmoid)::

        c(t) = f * c(t-1) + i * j
        h(t) = o * tanh(c(t))
        y(t) = W_out h(t)

    Input matrices are named ``W_i<g>`` and recurrent ones ``W_h<g>``.
    """

    kind = "lstm"
    gate_act = {"i": SIGMOID, "j": TANH, "f": SIGMOID, "o": SIGMOID}

    def __init__(self, W_in, W_rec, W_out, biases=None, masks=None, seed=None):
        self.W_in = {g: np.array(W_in[g], dtype=float, ndmin=2) for g in GATES}
        self.W_rec = {g: np.array(W_rec[g], dtype=float, ndmin=2) for g in GATES}
        self.W_out = np.array(W_out, dtype=float, ndmin=2)
        H = self.W_out.shape[1]
        n = self.W_in["i"].shape[1]
        for g in GATES:
            if self.W_in[g].shape != (H, n) or self.W_rec[g].shape != (H, H):
                raise ValueError(f"gate {g} matrices inconsistent with hidden size {H}")
        if self.W_out.shape != (1, H):
            raise ValueError("W_out must be 1 x hidden_size")
        self.b = None if biases is None else {g: np.array(biases[g], dtype=float).reshape(H)
                                              for g in GATES}
        self.seed = seed
        self._init_masks(masks)

    @classmethod
    def init(cls, n_in, hidden_size, bias=False, seed=0):
        rng = np.random.default_rng(seed)
        r_in, r_h = np.sqrt(1.0 / n_in), np.sqrt(1.0 / hidden_size)
        W_in = {g: rng.uniform(-r_in, r_in, (hidden_size, n_in)) for g in GATES}
        W_rec = {g: rng.uniform(-r_h, r_h, (hidden_size, hidden_size)) for g in GATES}
        W_out = rng.uniform(-r_h, r_h, (1, hidden_size))
        b = {g: rng.uniform(-r_h, r_h, hidden_size) for g in GATES} if bias else None
        return cls(W_in, W_rec, W_out, biases=b, seed=seed)

    @property
    def hidden_size(self):
        return self.W_out.shape[1]

    @property
    def n_in(self):
        return self.W_in["i"].shape[1]

    @property
    def params(self):
        out = {f"W_i{g}": self.W_in[g] for g in GATES}
        out.update({f"W_h{g}": self.W_rec[g] for g in GATES})
        out["W_out"] = self.W_out
        if self.b is not None:
            out.update({f"b_{g}": self.b[g] for g in GATES})
        return out

    @property
    def input_matrices(self):
        return [f"W_i{g}" for g in GATES]

    def copy(self):
        return LstmNetwork(self.W_in, self.W_rec, self.W_out, biases=self.b,
                           masks={k: v.copy() for k, v in self.masks.items()}, seed=self.seed)

    def _pre(self, g, z, h):
        a = z @ self.W_in[g].T + h @ self.W_rec[g].T
        if self.b is not None:
            a = a + self.b[g]
        return a

    def forward(self, Z, state=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.n_in:
            raise ValueError(f"row width {Z.shape[1]} != input width {self.n_in}")
        T, H = len(Z), self.hidden_size
        pre = {g: np.empty((T, H)) for g in GATES}
        gate = {g: np.empty((T, H)) for g in GATES}
        cs, c_prev, hs, h_prev = (np.empty((T, H)) for _ in range(4))
        h, c = (np.zeros(H), np.zeros(H)) if state is None else state
        drive = {g: Z @ self.W_in[g].T + (0.0 if self.b is None else self.b[g]) for g in GATES}
        for t in range(T):
            h_prev[t], c_prev[t] = h, c
            for g in GATES:
                pre[g][t] = drive[g][t] + self.W_rec[g] @ h
                gate[g][t] = self.gate_act[g](pre[g][t])
            c = gate["f"][t] * c + gate["i"][t] * gate["j"][t]
            h = gate["o"][t] * np.tanh(c)
            cs[t], hs[t] = c, h
        y = hs @ self.W_out[0]
        return y, LstmTrace(Z, pre, gate, cs, c_prev, hs, h_prev, y)

    def step(self, z, state):
        H = self.hidden_size
        h, c = (np.zeros(H), np.zeros(H)) if state is None else state
        gv = {g: self.gate_act[g](self._pre(g, z, h)) for g in GATES}
        c = gv["f"] * c + gv["i"] * gv["j"]
        h = gv["o"] * np.tanh(c)
        return float(self.W_out[0] @ h), (h, c)

    def backward_sweep(self, trace: LstmTrace, dL_dy, tau=None, visit=None):
        """Truncated backward sweep. ``visit(d, quantities)`` is called at every
        depth with the per-row adjoints; the Hessian code hooks in here."""
        g_out = np.asarray(dL_dy, dtype=float)
        T = len(trace.y)
        if g_out.shape != (T,):
            raise ValueError("dL_dy must have one entry per time step")
        tau = _check_tau(tau, T)
        dh = np.outer(g_out, self.W_out[0])
        dc = np.zeros_like(dh)
        grads = {f"W_i{g}": np.zeros_like(self.W_in[g]) for g in GATES}
        grads.update({f"W_h{g}": np.zeros_like(self.W_rec[g]) for g in GATES})
        grads["W_out"] = (g_out @ trace.h)[None, :]
        if self.b is not None:
            grads.update({f"b_{g}": np.zeros(self.hidden_size) for g in GATES})
        tr = trace
        for d in range(tau):
            gv = {g: _shift(tr.gate[g], d) for g in GATES}
            c, cp = _shift(tr.c, d), _shift(tr.c_prev, d)
            tc = np.tanh(c)
            dct = dc + dh * gv["o"] * (1.0 - tc * tc)
            da = {
                "o": dh * tc * gv["o"] * (1.0 - gv["o"]),
                "i": dct * gv["j"] * gv["i"] * (1.0 - gv["i"]),
                "j": dct * gv["i"] * (1.0 - gv["j"] ** 2),
                "f": dct * cp * gv["f"] * (1.0 - gv["f"]),
            }
            zs, hp = _shift(tr.Z, d), _shift(tr.h_prev, d)
            for g in GATES:
                grads[f"W_i{g}"] += da[g].T @ zs
                grads[f"W_h{g}"] += da[g].T @ hp
                if self.b is not None:
                    grads[f"b_{g}"] += da[g].sum(axis=0)
            if visit is not None:
                visit(d, dict(dh=dh, dc=dc, dct=dct, da=da, gate=gv, c=c, c_prev=cp))
            dc = dct * gv["f"]
            dh = sum(da[g] @ self.W_rec[g] for g in GATES)
        for name in grads:
            grads[name][~self.masks[name]] = 0.0
        return grads

    def bptt(self, trace, dL_dy, tau=None):
        return self.backward_sweep(trace, dL_dy, tau)

    def to_dict(self):
        return {"kind": self.kind, "hidden_size": self.hidden_size,
                "W_in": {g: self.W_in[g].tolist() for g in GATES},
                "W_rec": {g: self.W_rec[g].tolist() for g in GATES},
                "W_out": self.W_out.tolist(),
                "biases": None if self.b is None else {g: self.b[g].tolist() for g in GATES},
                "masks": {k: v.astype(int).tolist() for k, v in self.masks.items()},
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        H = d["hidden_size"]
        W_in = {g: np.array(v, dtype=float).reshape(H, -1) for g, v in d["W_in"].items()}
        return cls(W_in, d["W_rec"], d["W_out"], biases=d["biases"],
                   masks={k: np.array(v, dtype=bool) for k, v in d["masks"].items()},
                   seed=d.get("seed"))


def lstm_forward(net: LstmNetwork, sequence):
    return net.forward(sequence)


def bptt(net, trace, dL_dy, tau):
    """Truncated backpropagation through time for :class:`RnnNetwork` or
    :class:`LstmNetwork`."""
    if tau is None or int(tau) != tau or tau < 1:
        raise ValueError(f"BPTT horizon must be an integer >= 1, got {tau!r}")
    return net.bptt(trace, dL_dy, tau)
