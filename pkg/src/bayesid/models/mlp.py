"""Fully connected network with per-weight prune masks.

Weight matrices follow the ``h = W a`` convention: ``W^l`` has shape
``(n_l, n_{l-1})``, so column ``c`` of the first matrix multiplies regressor
entry ``c``. Evaluation is batched: a batch of regressors is an ``(N, n_0)``
array and pre-activations are ``(N, n_l)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import IDENTITY, get_activation


@dataclass
class MlpTrace:
    inputs: np.ndarray           # a^0, (N, n_0)
    pre: list                    # h^l, (N, n_l)
    act: list                    # a^l, (N, n_l)

    @property
    def output(self):
        return self.act[-1][:, 0]


class MlpNetwork:
    kind = "mlp"

    def __init__(self, weights, activations, biases=None, masks=None, seed=None):
        self.weights = [np.array(W, dtype=float) for W in weights]
        if len(self.weights) == 0:
            raise ValueError("an MLP needs at least one layer")
        for l in range(1, len(self.weights)):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(
                    f"layer {l + 1} expects {self.weights[l].shape[1]} inputs but layer "
                    f"{l} produces {self.weights[l - 1].shape[0]}")
        if len(activations) != len(self.weights):
            raise ValueError("one activation per layer required")
        self.activations = [get_activation(a) for a in activations]
        if biases is None:
            self.biases = [None] * len(self.weights)
        else:
            self.biases = [None if b is None else np.array(b, dtype=float).reshape(-1)
                           for b in biases]
        self.masks = {}
        for name, arr in self.params.items():
            m = np.ones(arr.shape, dtype=bool) if masks is None or name not in masks \
                else np.asarray(masks[name], dtype=bool)
            if m.shape != arr.shape:
                raise ValueError(f"mask for {name} has shape {m.shape}, expected {arr.shape}")
            self.masks[name] = m
        self.seed = seed
        self._enforce_masks()

    # -- construction -------------------------------------------------------
    @classmethod
    def init(cls, n_in, hidden, activation="identity", bias=False, seed=0, n_out=1):
        """Random network with ``hidden`` units per hidden layer (a list) and a
        linear readout. Entries are uniform in ``+-sqrt(1/fan_in)``."""
        rng = np.random.default_rng(seed)
        sizes = [n_in, *hidden, n_out]
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            r = np.sqrt(1.0 / fan_in)
            Ws.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
            bs.append(rng.uniform(-r, r, size=fan_out) if bias else None)
        acts = [activation] * len(hidden) + [IDENTITY]
        return cls(Ws, acts, biases=bs, seed=seed)

    def copy(self):
        net = MlpNetwork(self.weights, self.activations,
                         biases=[None if b is None else b.copy() for b in self.biases],
                         masks={k: v.copy() for k, v in self.masks.items()}, seed=self.seed)
        return net

    # -- parameter views ----------------------------------------------------
    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_in(self):
        return self.weights[0].shape[1]

    @property
    def params(self):
        """Name -> array view of every trainable array (weights then biases)."""
        out = {f"W{l + 1}": W for l, W in enumerate(self.weights)}
        for l, b in enumerate(self.biases):
            if b is not None:
                out[f"b{l + 1}"] = b
        return out

    @property
    def input_matrices(self):
        return ["W1"]

    def set_params(self, new):
        for name, val in new.items():
            arr = self.params[name]
            arr[...] = val
        self._enforce_masks()

    def _enforce_masks(self):
        for name, arr in self.params.items():
            arr[~self.masks[name]] = 0.0

    # -- evaluation ---------------------------------------------------------
    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_in:
            raise ValueError(f"regressor width {X.shape[1]} != network input width {self.n_in}")
        pre, act = [], []
        a = X
        for W, b, sig in zip(self.weights, self.biases, self.activations):
            h = a @ W.T
            if b is not None:
                h = h + b
            a = sig(h)
            pre.append(h)
            act.append(a)
        return act[-1][:, 0], MlpTrace(X, pre, act)

    def predict(self, X):
        return self.forward(X)[0]

    def __call__(self, X):
        return self.predict(X)

    def backward(self, trace: MlpTrace, dL_dy):
        """Gradients of ``sum_n L_n`` given ``dL_n/dy_n`` for every sample."""
        g = np.asarray(dL_dy, dtype=float).reshape(-1, 1)
        if len(trace.pre) != self.n_layers or g.shape[0] != trace.inputs.shape[0]:
            raise ValueError("trace does not belong to this network/batch")
        grads = {}
        # g holds dL/da^l on entry to each iteration
        for l in range(self.n_layers - 1, -1, -1):
            delta = g * self.activations[l].d1(trace.pre[l])
            a_prev = trace.inputs if l == 0 else trace.act[l - 1]
            grads[f"W{l + 1}"] = delta.T @ a_prev
            if self.biases[l] is not None:
                grads[f"b{l + 1}"] = delta.sum(axis=0)
            g = delta @ self.weights[l]
        for name in grads:
            grads[name][~self.masks[name]] = 0.0
        return grads

    def loss_grad(self, X, y, tau=None):
        """Half mean squared one-step error and its gradient. ``tau`` is
        accepted for interface parity with the recurrent networks."""
        yhat, trace = self.forward(X)
        r = yhat - np.asarray(y, dtype=float)
        N = len(r)
        loss = 0.5 * float(r @ r) / N
        return loss, self.backward(trace, r / N)

    def hessian_diag(self, X, y, variant="simplified"):
        from ..hessian import mlp_hessian_diag
        return mlp_hessian_diag(self, X, y, variant=variant)

    def free_run(self, u, y_init, cfg):
        from ..prediction import free_run_simulate
        return free_run_simulate(self, u, y_init, cfg)

    # -- serialisation ------------------------------------------------------
    def to_dict(self):
        return {
            "kind": self.kind,
            "activations": [a.name for a in self.activations],
            "weights": [W.tolist() for W in self.weights],
            "biases": [None if b is None else b.tolist() for b in self.biases],
            "masks": {k: v.astype(int).tolist() for k, v in self.masks.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([np.array(W, dtype=float).reshape(len(W), -1) for W in d["weights"]],
                   d["activations"], biases=d["biases"],
                   masks={k: np.array(v, dtype=bool) for k, v in d["masks"].items()},
                   seed=d.get("seed"))


def mlp_forward(net: MlpNetwork, z):
    """Forward pass for one regressor vector. Returns ``(y_hat, trace)``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("mlp_forward takes a single regressor vector")
    yhat, trace = net.forward(z[None, :])
    return float(yhat[0]), trace


def mlp_backward(net: MlpNetwork, trace: MlpTrace, dL_dy):
    return net.backward(trace, np.atleast_1d(dL_dy))
