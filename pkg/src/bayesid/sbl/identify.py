"""The identification loop: regularised training cycles, evidence updates,
pruning and free-run model selection over seeded repeats."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import RegressionMatrix, RegressorConfig, TimeSeriesDataset, build_regressors
from ..hessian import clamp_psd, network_hessian_diag
from ..models import (LstmNetwork, MlpNetwork, NonFiniteGradientError, RnnNetwork, AdamState,
                      cosine_lr, network_from_dict, sgd_step)
from ..prediction import estimate_zeta, free_run_simulate, rmse, sparsity
from .priors import (PosteriorState, PriorGrouping, as_grouping, default_groupings, prune,
                     regularised_grad, regularised_loss)

log = logging.getLogger("bayesid")

REPORT_FORMAT = "bayesid-report/1"


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class AllRepeatsDivergedError(RuntimeError):
    pass


@dataclass
class ArchitectureSpec:
    kind: str = "mlp"                    # mlp | lstm | rnn
    hidden: tuple = (10,)
    activation: str = "identity"
    bias: bool = False

    def validate(self):
        errs = []
        if self.kind not in ("mlp", "lstm", "rnn"):
            errs.append(f"model.type must be mlp, lstm or rnn, got {self.kind!r}")
        if len(self.hidden) == 0 and self.kind != "mlp":
            errs.append("model.units: recurrent models need a hidden size")
        if any(int(h) < 1 for h in self.hidden):
            errs.append("model.units: every layer needs at least one unit")
        if self.kind in ("lstm", "rnn") and len(self.hidden) != 1:
            errs.append(f"model.units: {self.kind} supports a single recurrent layer, "
                        f"got {len(self.hidden)} sizes")
        return errs

    def build(self, n_in, seed):
        if self.kind == "mlp":
            return MlpNetwork.init(n_in, list(self.hidden), self.activation, bias=self.bias,
                                   seed=seed)
        if self.kind == "lstm":
            return LstmNetwork.init(n_in, int(self.hidden[0]), bias=self.bias, seed=seed)
        return RnnNetwork.init(n_in, int(self.hidden[0]), self.activation, seed=seed)


@dataclass
class IdentificationConfig:
    lam: float = 1e-3
    c_max: int = 6
    e_max: int = 50
    repeats: int = 1
    kappa_psi: float = 1e-3
    kappa_w: float = 1e-3
    input_grouping: str = PriorGrouping.COMBINED.value
    other_grouping: str = PriorGrouping.SHAPE.value
    tau: int = 10
    seed: int = 0
    lr: float = 1e-2
    lr_min: float = 0.0
    batch_size: int = 32
    freeze_omega: bool = False
    hessian_variant: str = "simplified"
    # multiplier turning the mean-loss Hessian into the Hessian of the summed
    # energy; "samples" uses the number of estimation rows
    hessian_scale: object = "samples"
    # validation RMSEs within this relative distance of the best count as ties
    selection_rtol: float = 0.05
    workers: int = 0                     # 0: min(repeats, cpu count)

    def validate(self):
        errs = []
        for name in ("c_max", "e_max", "repeats", "tau", "batch_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                errs.append(f"identification.{name} must be an integer >= 1, got {v!r}")
        for name in ("lam", "kappa_psi", "kappa_w", "lr_min"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                errs.append(f"identification.{name} must be >= 0, got {v!r}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            errs.append(f"identification.lr must be > 0, got {self.lr!r}")
        for name in ("input_grouping", "other_grouping"):
            try:
                as_grouping(getattr(self, name))
            except ValueError as e:
                errs.append(f"identification.{name}: {e}")
        if self.hessian_variant not in ("simplified", "exact"):
            errs.append(f"identification.hessian_variant must be simplified or exact")
        if self.hessian_scale != "samples":
            try:
                ok = float(self.hessian_scale) > 0
            except (TypeError, ValueError):
                ok = False
            if not ok:
                errs.append("identification.hessian_scale must be 'samples' or a positive number")
        if not (np.isfinite(self.selection_rtol) and self.selection_rtol >= 0):
            errs.append("identification.selection_rtol must be >= 0")
        if self.workers < 0:
            errs.append("identification.workers must be >= 0")
        return errs

    def scale_for(self, n_rows):
        return float(n_rows) if self.hessian_scale == "samples" else float(self.hessian_scale)

    def repeat_seeds(self):
        children = np.random.SeedSequence(self.seed).spawn(self.repeats)
        return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class CycleRecord:
    cycle: int
    train_loss: float
    val_rmse: float
    sparsity: float
    n_nonzero: int
    pruned_regressors: list
    masks: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("masks")
        return d


@dataclass
class RepeatRecord:
    index: int
    seed: int
    status: str = "ok"
    error: str = ""
    cycles: list = field(default_factory=list)
    best_cycle: int = -1
    snapshots: list = field(default_factory=list, repr=False)   # per cycle

    @property
    def best(self):
        return self.snapshots[self.best_cycle]


@dataclass
class IdentificationReport:
    config: dict
    architecture: dict
    regressors: dict
    repeats: list
    best_repeat: int
    best_cycle: int
    best_val_rmse: float
    best_sparsity: float
    best_model: object = None
    best_variances: dict = None
    zeta: float = 0.0

    @property
    def best_record(self):
        return self.repeats[self.best_repeat].cycles[self.best_cycle]

    def digest(self):
        doc = json.dumps({"config": self.config, "architecture": self.architecture,
                          "regressors": self.regressors}, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:12]

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "architecture": self.architecture,
            "regressors": self.regressors,
            "config_digest": self.digest(),
            "repeats": [{"index": r.index, "seed": r.seed, "status": r.status,
                         "error": r.error, "best_cycle": r.best_cycle,
                         "cycles": [c.to_dict() for c in r.cycles]} for r in self.repeats],
            "best": {"repeat": self.best_repeat, "cycle": self.best_cycle,
                     "val_rmse": self.best_val_rmse, "sparsity": self.best_sparsity,
                     "zeta": self.zeta,
                     "pruned_regressors": self.best_record.pruned_regressors},
            "best_model": None if self.best_model is None else self.best_model.to_dict(),
            "best_variances": None if self.best_variances is None else
            {k: v.tolist() for k, v in self.best_variances.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != REPORT_FORMAT:
            raise ValueError("not an identification report")
        repeats = [RepeatRecord(r["index"], r["seed"], r["status"], r["error"],
                                [CycleRecord(**c) for c in r["cycles"]], r["best_cycle"])
                   for r in d["repeats"]]
        best = d["best"]
        model = None if d.get("best_model") is None else network_from_dict(d["best_model"])
        var = None if d.get("best_variances") is None else \
            {k: np.array(v, dtype=float).reshape(model.params[k].shape)
             for k, v in d["best_variances"].items()}
        return cls(d["config"], d["architecture"], d["regressors"], repeats, best["repeat"],
                   best["cycle"], best["val_rmse"], best["sparsity"], model, var,
                   best.get("zeta", 0.0))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def sequences_from_regression(rm: RegressionMatrix):
    """Recover ``(u, y)`` aligned with the original time axis from a
    regression matrix. Samples that no row references are left at zero."""
    cfg, k0 = rm.cfg, rm.first_index
    n = len(rm.targets)
    u = np.zeros(n + k0)
    y = np.zeros(n + k0)
    u[k0:] = rm.Z[:, 0]
    y[k0:] = rm.targets
    for i in range(1, cfg.l_u + 1):
        u[k0 - i] = rm.Z[0, i]
    for i in range(1, cfg.l_y + 1):
        y[k0 - i] = rm.Z[0, cfg.l_u + i]
    return u, y


def pruned_regressors(net, cfg: RegressorConfig):
    """Labels of regressors whose input columns are masked in every input
    matrix."""
    dead = np.ones(cfg.width, bool)
    for name in net.input_matrices:
        dead &= ~net.masks[name].any(axis=0)
    labels = cfg.labels()
    return [labels[c] for c in np.flatnonzero(dead)]


def _final_state(net, trace):
    if isinstance(net, LstmNetwork):
        return trace.h[-1].copy(), trace.c[-1].copy()
    return trace.h[-1].copy()


def _train_epoch(net, Z, y, cfg, state, adam, rng, step, total_steps):
    """One pass over the estimation rows. Returns the updated step count."""
    N = len(y)
    B = min(cfg.batch_size, N)
    recurrent = not isinstance(net, MlpNetwork)
    if recurrent:
        order = np.arange(N)
    else:
        order = rng.permutation(N)
    carry = None
    for lo in range(0, N, B):
        idx = order[lo:lo + B]
        if recurrent:
            yhat, trace = net.forward(Z[idx], carry)
            r = yhat - y[idx]
            grads = net.bptt(trace, r / len(idx), cfg.tau)
            carry = _final_state(net, trace)
            loss = 0.5 * float(r @ r) / len(idx)
        else:
            loss, grads = net.loss_grad(Z[idx], y[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at step {step}")
        grads = regularised_grad(grads, net, state, cfg.lam)
        lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min)
        try:
            sgd_step(net, grads, lr, adam)
        except NonFiniteGradientError as e:
            raise DivergenceError(str(e)) from e
        step += 1
    return step


def _one_step_predict(net, Z):
    return net.predict(Z)


def select_best(candidates, rtol):
    """Pick from ``(rmse, sparsity, *tiebreak)`` tuples: every candidate
    within ``rtol`` (relative) of the smallest RMSE is a tie, and ties go to
    the sparsest, then the smallest RMSE, then the remaining fields.
    Returns the index of the chosen candidate."""
    finite = [i for i, c in enumerate(candidates) if np.isfinite(c[0])]
    if not finite:
        return min(range(len(candidates)), key=lambda i: candidates[i][2:])
    best = min(candidates[i][0] for i in finite)
    pool = [i for i in finite if candidates[i][0] <= best * (1.0 + rtol)]
    return min(pool, key=lambda i: (-candidates[i][1], candidates[i][0], *candidates[i][2:]))


def run_repeat(index, seed, cfg: IdentificationConfig, est: RegressionMatrix,
               val_u, val_y, arch: ArchitectureSpec):
    """All cycles for one seed; never raises on divergence."""
    rcfg = est.cfg
    rec = RepeatRecord(index, seed)
    rng = np.random.default_rng(seed)
    net = arch.build(rcfg.width, seed)
    groupings = default_groupings(net, cfg.input_grouping, cfg.other_grouping)
    state = PosteriorState.initial(net, groupings)
    Z, y = est.Z, est.targets
    k0 = rcfg.first_index
    n_batches = -(-len(y) // min(cfg.batch_size, len(y)))
    h_scale = cfg.scale_for(len(y))
    try:
        for c in range(cfg.c_max):
            t0 = time.perf_counter()
            adam = AdamState()
            total = cfg.e_max * n_batches
            step = 0
            for _ in range(cfg.e_max):
                step = _train_epoch(net, Z, y, cfg, state, adam, rng, step, total)
            E = 0.5 * float(np.mean((_one_step_predict(net, Z) - y) ** 2))
            train_loss = regularised_loss(E, net, state, cfg.lam)
            if not np.isfinite(train_loss):
                raise DivergenceError("non-finite loss after training")
            H = clamp_psd(network_hessian_diag(net, Z, y, tau=cfg.tau,
                                               variant=cfg.hessian_variant))
            if cfg.freeze_omega:
                masks = prune(net, {}, cfg.kappa_psi, cfg.kappa_w)
            else:
                state.update(net, {k: h_scale * v for k, v in H.items()})
                masks = prune(net, {n: st.psi_entry for n, st in state.items()},
                              cfg.kappa_psi, cfg.kappa_w)
            net.masks = masks
            net._enforce_masks()
            sim = free_run_simulate(net, val_u, val_y[:k0], rcfg)
            if not np.all(np.isfinite(sim)):
                val = float("inf")
            else:
                val = rmse(sim, val_y[k0:])
            sp = sparsity(net)
            cr = CycleRecord(c, float(train_loss), val, sp,
                             int(sum(np.count_nonzero(p) for p in net.params.values())),
                             pruned_regressors(net, rcfg),
                             {k: v.copy() for k, v in masks.items()})
            rec.cycles.append(cr)
            log.info("repeat %d cycle %d  loss %.6g  val_rmse %.6g  sparsity %.3f  (%.1fs)",
                     index, c + 1, train_loss, val, sp, time.perf_counter() - t0)
            resid = _one_step_predict(net, Z) - y
            rec.snapshots.append({
                "net": net.copy(),
                "variances": {n: np.where(net.masks[n], st.Sigma, 0.0) for n, st in state.items()},
                "zeta": estimate_zeta(resid)})
    except DivergenceError as e:
        rec.status = "diverged"
        rec.error = str(e)
        log.warning("repeat %d diverged: %s", index, e)
    if rec.cycles:
        rec.best_cycle = select_best([(c.val_rmse, c.sparsity, c.cycle) for c in rec.cycles],
                                     cfg.selection_rtol)
    return rec


def _run_repeat_star(args):
    return run_repeat(*args)


def run_identification(cfg: IdentificationConfig, est, val, arch: ArchitectureSpec,
                       rcfg: RegressorConfig = None):
    """Run all repeats and pick the best model by validation free-run RMSE.

    ``est`` is a :class:`RegressionMatrix` (or a dataset, windowed with
    ``rcfg``); ``val`` is a dataset or a regression matrix with the same
    regressor configuration.
    """
    errs = cfg.validate() + arch.validate()
    if errs:
        raise ValueError("; ".join(errs))
    if isinstance(est, TimeSeriesDataset):
        est = build_regressors(est, rcfg)
    rcfg = est.cfg
    if isinstance(val, TimeSeriesDataset):
        val_u, val_y = val.u, val.y
    else:
        val_u, val_y = sequences_from_regression(val)
    if len(val_u) <= rcfg.first_index:
        raise ValueError("validation data shorter than the lag depth")
    seeds = cfg.repeat_seeds()
    jobs = [(i, s, cfg, est, val_u, val_y, arch) for i, s in enumerate(seeds)]
    workers = cfg.workers or min(cfg.repeats, os.cpu_count() or 1)
    if workers <= 1 or cfg.repeats == 1:
        records = [_run_repeat_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_run_repeat_star, jobs))
    ok = [r for r in records if r.status == "ok" and r.cycles]
    if not ok:
        raise AllRepeatsDivergedError(
            "all repeats diverged: " + "; ".join(f"repeat {r.index}: {r.error}" for r in records))
    flat = [(r, c) for r in ok for c in r.cycles]
    pick = select_best([(c.val_rmse, c.sparsity, r.index, c.cycle) for r, c in flat],
                       cfg.selection_rtol)
    best, bc = flat[pick]
    snap = best.snapshots[bc.cycle]
    return IdentificationReport(
        config=asdict(cfg), architecture={**asdict(arch), "hidden": list(arch.hidden)},
        regressors={"l_u": rcfg.l_u, "l_y": rcfg.l_y, "labels": rcfg.labels()},
        repeats=records, best_repeat=best.index, best_cycle=bc.cycle,
        best_val_rmse=bc.val_rmse, best_sparsity=bc.sparsity,
        best_model=snap["net"], best_variances=snap["variances"], zeta=snap["zeta"])
