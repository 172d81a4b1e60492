"""Network definitions: MLP, plain RNN and LSTM, plus the optimiser."""

import json
from pathlib import Path

import numpy as np

from .activations import ACTIVATIONS, IDENTITY, RELU, SIGMOID, TANH, Activation, get_activation
from .mlp import MlpNetwork, MlpTrace, mlp_backward, mlp_forward
from .optim import AdamState, NonFiniteGradientError, cosine_lr, sgd_step
from .recurrent import GATES, LstmNetwork, LstmTrace, RnnNetwork, RnnTrace, bptt, lstm_forward

_KINDS = {"mlp": MlpNetwork, "lstm": LstmNetwork, "rnn": RnnNetwork}

SNAPSHOT_FORMAT = "bayesid-model/1"


def apply_mask(net, mask):
    """Return a copy of ``net`` with entries where ``mask`` is False zeroed and
    the mask stored (combined with any existing mask)."""
    out = net.copy()
    for name, m in mask.items():
        if name not in out.masks:
            raise ValueError(f"unknown parameter {name!r}")
        m = np.asarray(m, dtype=bool)
        if m.shape != out.masks[name].shape:
            raise ValueError(f"mask for {name} has shape {m.shape}, "
                             f"expected {out.masks[name].shape}")
        out.masks[name] = out.masks[name] & m
    out._enforce_masks()
    return out


def network_from_dict(d):
    try:
        cls = _KINDS[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown network kind {d.get('kind')!r}") from None
    return cls.from_dict(d)


def save_snapshot(net, path, extra=None):
    """Write a self-describing JSON snapshot. Floats are written with
    ``repr`` precision so a reload is bit-exact."""
    doc = {"format": SNAPSHOT_FORMAT, "network": net.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_snapshot(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"{path}: not a model snapshot")
    return network_from_dict(doc["network"]), doc


__all__ = [
    "ACTIVATIONS", "IDENTITY", "RELU", "SIGMOID", "TANH", "Activation", "get_activation",
    "MlpNetwork", "MlpTrace", "mlp_forward", "mlp_backward",
    "RnnNetwork", "RnnTrace", "LstmNetwork", "LstmTrace", "GATES", "lstm_forward", "bptt",
    "AdamState", "NonFiniteGradientError", "cosine_lr", "sgd_step",
    "apply_mask", "network_from_dict", "save_snapshot", "load_snapshot",
]
