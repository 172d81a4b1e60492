"""Command-line experiment runner.

Verbs::

    bayesid run EXPERIMENT.ini          train, select, write artifacts
    bayesid validate EXPERIMENT.ini     list configuration problems
    bayesid compare REPORT.json ...     one summary row per report
    bayesid simulate MODEL.json DATA.csv --out bands.csv

Exit codes: 0 success, 2 configuration or input error, 3 every repeat
diverged. Per-cycle progress goes to standard error; artifacts go to the
output directory (overridable with the ``BAYESID_OUTPUT_DIR`` environment
variable).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (DataError, RegressorConfig, TimeSeriesDataset, build_regressors, detrend,
                   load_csv, split)
from .models import ACTIVATIONS, load_snapshot, save_snapshot
from .prediction import (PosteriorModel, mc_free_run, predictive_band, write_simulation_csv)
from .sbl import (AllRepeatsDivergedError, ArchitectureSpec, IdentificationConfig,
                  IdentificationReport, run_identification)
from .synthetic import arx_system, two_tank_system

log = logging.getLogger("bayesid")

OUTPUT_ENV = "BAYESID_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

REPORT_FILE = "report.json"
MODEL_FILE = "model.json"
SIMULATION_FILE = "simulation.csv"
MASK_DIR = "masks"
ARTIFACTS = (REPORT_FILE, MODEL_FILE, SIMULATION_FILE, MASK_DIR)

# INI key -> IdentificationConfig field
_IDENT_KEYS = {f.name: f.name for f in fields(IdentificationConfig)}
_IDENT_KEYS.pop("lam")
_IDENT_KEYS["lambda"] = "lam"
_IDENT_LABELS = {v: k for k, v in _IDENT_KEYS.items()}

_SCHEMA = {
    "data": {"path", "synthetic", "length", "noise_std", "data_seed", "arx_a", "arx_b",
             "u_column", "y_column",
             "time_column", "sample_period", "detrend", "n_estimation"},
    "regressors": {"l_u", "l_y"},
    "model": {"type", "units", "activation", "bias"},
    "identification": set(_IDENT_KEYS),
    "output": {"directory", "mc_samples", "band_mode", "mc_seed"},
}


@dataclass
class ExperimentConfig:
    data_path: Path = None
    synthetic: str = ""
    length: int = 800
    noise_std: float = 0.01
    data_seed: int = 0
    # second-order default so lags 1-2 matter and deeper lags do not
    arx_a: tuple = (0.6, 0.2)
    arx_b: tuple = (0.5, 0.3)
    u_column: str = "u"
    y_column: str = "y"
    time_column: str = "t"
    sample_period: float = None
    detrend: bool = False
    n_estimation: int = 0
    regressors: RegressorConfig = None
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    ident: IdentificationConfig = field(default_factory=IdentificationConfig)
    output_dir: Path = Path("bayesid-out")
    mc_samples: int = 1000
    band_mode: str = "one_step"
    mc_seed: int = 0

    def resolved_output_dir(self):
        env = os.environ.get(OUTPUT_ENV)
        return Path(env) if env else self.output_dir


class _Reader:
    """Typed access to a ConfigParser that records problems instead of
    raising."""

    def __init__(self, cp):
        self.cp = cp
        self.errors = []

    def get(self, section, key, kind=str, default=None):
        if not self.cp.has_option(section, key):
            return default
        raw = self.cp.get(section, key).strip()
        try:
            if kind is bool:
                return self.cp.getboolean(section, key)
            if kind is int:
                return int(raw)
            if kind is float:
                return float(raw)
            return raw
        except ValueError:
            self.errors.append(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}")
            return default


def _ident_value(reader, key, field_name, default):
    if field_name == "hessian_scale":
        raw = reader.get("identification", key, str, None)
        if raw is None:
            return default
        if raw == "samples":
            return raw
        try:
            return float(raw)
        except ValueError:
            reader.errors.append(f"identification.{key}: expected 'samples' or a number")
            return default
    kind = type(default) if default is not None else str
    return reader.get("identification", key, kind, default)


def load_experiment(path):
    """Parse an experiment file. Returns ``(config, diagnostics)``; the
    config is None when the file cannot be read at all."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with path.open(encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, UnicodeDecodeError) as e:
        return None, [f"cannot read {path}: {e}"]
    except configparser.Error as e:
        return None, [f"{path}: malformed configuration: {e}"]

    diags = []
    for section in cp.sections():
        if section not in _SCHEMA:
            diags.append(f"unknown section [{section}]")
            continue
        for key in cp.options(section):
            if key not in _SCHEMA[section]:
                diags.append(f"{section}.{key}: unknown key")
    r = _Reader(cp)
    cfg = ExperimentConfig()
    base = path.parent

    p = r.get("data", "path")
    cfg.data_path = None if p is None else (base / p if not Path(p).is_absolute() else Path(p))
    cfg.synthetic = r.get("data", "synthetic", str, "")
    cfg.length = r.get("data", "length", int, cfg.length)
    cfg.noise_std = r.get("data", "noise_std", float, cfg.noise_std)
    cfg.data_seed = r.get("data", "data_seed", int, cfg.data_seed)
    for key in ("arx_a", "arx_b"):
        raw = r.get("data", key, str, None)
        if raw is not None:
            try:
                setattr(cfg, key, tuple(float(x) for x in raw.split(",") if x.strip()))
            except ValueError:
                diags.append(f"data.{key}: expected a comma-separated list of numbers")
    cfg.u_column = r.get("data", "u_column", str, cfg.u_column)
    cfg.y_column = r.get("data", "y_column", str, cfg.y_column)
    cfg.time_column = r.get("data", "time_column", str, cfg.time_column)
    cfg.sample_period = r.get("data", "sample_period", float, None)
    cfg.detrend = r.get("data", "detrend", bool, cfg.detrend)
    cfg.n_estimation = r.get("data", "n_estimation", int, 0)

    if cfg.data_path is None and not cfg.synthetic:
        diags.append("data: set either path or synthetic")
    if cfg.data_path is not None and cfg.synthetic:
        diags.append("data: path and synthetic are mutually exclusive")
    if cfg.data_path is not None and not cfg.data_path.exists():
        diags.append(f"data.path: file not found: {cfg.data_path}")
    if cfg.synthetic and cfg.synthetic not in ("arx", "two_tank"):
        diags.append(f"data.synthetic must be arx or two_tank, got {cfg.synthetic!r}")
    if cfg.synthetic and cfg.length < 3:
        diags.append("data.length must be >= 3")
    if cfg.n_estimation < 1:
        diags.append("data.n_estimation must be a positive sample count")
    if cfg.noise_std < 0:
        diags.append("data.noise_std must be >= 0")

    l_u = r.get("regressors", "l_u", int, None)
    l_y = r.get("regressors", "l_y", int, None)
    if l_u is None or l_y is None:
        diags.append("regressors: l_u and l_y are required")
    else:
        try:
            cfg.regressors = RegressorConfig(l_u, l_y)
        except DataError as e:
            diags.append(f"regressors: {e}")

    units_raw = r.get("model", "units", str, "10")
    try:
        units = tuple(int(x) for x in units_raw.replace(" ", "").split(",") if x)
    except ValueError:
        diags.append(f"model.units: expected a comma-separated list of integers, got {units_raw!r}")
        units = (10,)
    kind = r.get("model", "type", str, "mlp").lower()
    cfg.arch = ArchitectureSpec(kind=kind, hidden=units,
                                activation=r.get("model", "activation", str,
                                                 "tanh" if kind == "rnn" else "identity"),
                                bias=r.get("model", "bias", bool, False))
    if cfg.arch.activation not in ACTIVATIONS:
        diags.append(f"model.activation: unknown activation {cfg.arch.activation!r}")
    diags += cfg.arch.validate()

    ident = IdentificationConfig()
    for key, name in _IDENT_KEYS.items():
        setattr(ident, name, _ident_value(r, key, name, getattr(ident, name)))
    cfg.ident = ident
    diags += [_relabel(d) for d in ident.validate()]

    cfg.output_dir = base / r.get("output", "directory", str, "bayesid-out")
    cfg.mc_samples = r.get("output", "mc_samples", int, cfg.mc_samples)
    cfg.band_mode = r.get("output", "band_mode", str, cfg.band_mode)
    cfg.mc_seed = r.get("output", "mc_seed", int, cfg.mc_seed)
    if cfg.mc_samples < 2:
        diags.append("output.mc_samples must be >= 2")
    if cfg.band_mode not in ("one_step", "free_run"):
        diags.append("output.band_mode must be one_step or free_run")
    return cfg, r.errors + diags


def _relabel(msg):
    for name, label in _IDENT_LABELS.items():
        if label != name:
            msg = msg.replace(f"identification.{name} ", f"identification.{label} ")
    return msg


def load_dataset(cfg: ExperimentConfig) -> TimeSeriesDataset:
    if cfg.synthetic == "arx":
        return arx_system(cfg.length, cfg.arx_a, cfg.arx_b, cfg.noise_std, cfg.data_seed)
    if cfg.synthetic == "two_tank":
        return two_tank_system(cfg.length, noise_std=cfg.noise_std, seed=cfg.data_seed)
    return load_csv(cfg.data_path, cfg.u_column, cfg.y_column, cfg.time_column or None,
                    cfg.sample_period)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def write_masks(report: IdentificationReport, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for rep in report.repeats:
        for cyc in rep.cycles:
            for name, m in cyc.masks.items():
                p = directory / f"repeat{rep.index}_cycle{cyc.cycle + 1}_{name}.csv"
                m2 = np.atleast_2d(m.astype(int))
                with p.open("w", newline="") as fh:
                    csv.writer(fh).writerows(m2.tolist())
                written.append(p)
    return written


def _band_for(pm, ds: TimeSeriesDataset, rcfg, mode, M, seed):
    """Band over the samples from the first full regressor row onwards."""
    k0 = rcfg.first_index
    if mode == "free_run":
        return mc_free_run(pm, ds.u, ds.y[:k0], rcfg, M, seed)
    rm = build_regressors(ds, rcfg)
    return predictive_band(pm, rm.Z, M, seed)


def _write_band(path, ds, band, rcfg, y_offset=0.0, u_offset=0.0):
    k0 = rcfg.first_index
    band.mean = band.mean + y_offset
    return write_simulation_csv(path, ds.time[k0:], ds.u[k0:] + u_offset, band,
                                y_true=ds.y[k0:] + y_offset)


def cmd_run(args):
    cfg, diags = load_experiment(args.config)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ds = load_dataset(cfg)
        if cfg.detrend:
            ds = detrend(ds)
        est, val = split(ds, cfg.n_estimation)
        est_rm = build_regressors(est, cfg.regressors)
        build_regressors(val, cfg.regressors)      # length check before training
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_identification(cfg.ident, est_rm, val, cfg.arch)
    except AllRepeatsDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    report.config["dataset"] = ds.name

    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(report.to_json())
    offsets = list(ds.offsets) if ds.offsets is not None else None
    save_snapshot(report.best_model, out / MODEL_FILE, extra={
        "variances": {k: v.tolist() for k, v in report.best_variances.items()},
        "zeta": report.zeta,
        "regressors": {"l_u": cfg.regressors.l_u, "l_y": cfg.regressors.l_y},
        "offsets": offsets,
    })
    write_masks(report, out / MASK_DIR)
    pm = PosteriorModel(report.best_model, report.best_variances, report.zeta)
    band = _band_for(pm, val, cfg.regressors, cfg.band_mode, cfg.mc_samples, cfg.mc_seed)
    yo, uo = (offsets[1], offsets[0]) if offsets else (0.0, 0.0)
    _write_band(out / SIMULATION_FILE, val, band, cfg.regressors, yo, uo)
    best = report.best_record
    print(f"best: repeat {report.best_repeat} cycle {report.best_cycle + 1}  "
          f"val_rmse {report.best_val_rmse:.6g}  sparsity {report.best_sparsity:.3f}  "
          f"pruned regressors: {', '.join(best.pruned_regressors) or 'none'}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_validate(args):
    cfg, diags = load_experiment(args.config)
    for d in diags:
        print(d)
    if cfg is None:
        return EXIT_CONFIG
    return EXIT_OK if not diags else EXIT_CONFIG


def compare_table(paths):
    """Rows sorted by best validation RMSE (ascending), then path."""
    rows = []
    for p in paths:
        try:
            d = json.loads(Path(p).read_text())
            rep = IdentificationReport.from_dict(d)
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ValueError(f"{p}: malformed report ({e})") from None
        arch = rep.architecture
        model = f"{arch['kind']} {'x'.join(str(h) for h in arch['hidden'])}"
        rows.append((rep.best_val_rmse, str(p), model, rep.best_sparsity,
                     d.get("config_digest", rep.digest())))
    rows.sort(key=lambda r: (r[0], r[1]))
    header = ("report", "model", "val_rmse", "sparsity", "config")
    body = [(r[1], r[2], f"{r[0]:.6g}", f"{r[3]:.4f}", r[4]) for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip()
             for line in (header, *body)]
    return "\n".join(lines) + "\n"


def cmd_compare(args):
    try:
        table = compare_table(args.reports)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(table)
    return EXIT_OK


def cmd_simulate(args):
    try:
        net, doc = load_snapshot(args.model)
        rc = RegressorConfig(**doc["regressors"])
        variances = {k: np.array(v, dtype=float).reshape(net.params[k].shape)
                     for k, v in (doc.get("variances") or {}).items()}
        pm = PosteriorModel(net, variances, float(doc.get("zeta", 0.0)))
        ds = load_csv(args.data, args.u_column, args.y_column, args.time_column)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    offsets = doc.get("offsets")
    if offsets:
        ds = TimeSeriesDataset(ds.time, ds.u - offsets[0], ds.y - offsets[1],
                               ds.sample_period, name=ds.name)
    try:
        band = _band_for(pm, ds, rc, args.mode, args.samples, args.seed)
    except (DataError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else \
        Path(os.environ.get(OUTPUT_ENV, ".")) / SIMULATION_FILE
    out.parent.mkdir(parents=True, exist_ok=True)
    yo, uo = (offsets[1], offsets[0]) if offsets else (0.0, 0.0)
    _write_band(out, ds, band, rc, yo, uo)
    print(f"wrote {out}")
    return EXIT_OK


_handler = None


def build_parser():
    p = argparse.ArgumentParser(prog="bayesid", description=__doc__.splitlines()[0])
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress lines")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run an identification experiment")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check an experiment file without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    c = sub.add_parser("compare", help="summarise reports, best RMSE first")
    c.add_argument("reports", nargs="+")
    c.set_defaults(func=cmd_compare)
    s = sub.add_parser("simulate", help="prediction bands from a saved model")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("--out")
    s.add_argument("--mode", choices=("one_step", "free_run"), default="one_step")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--u-column", default="u")
    s.add_argument("--y-column", default="y")
    s.add_argument("--time-column", default="t")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    global _handler
    args = build_parser().parse_args(argv)
    # rebind on every call: sys.stderr may have been swapped since the last one
    if _handler is not None:
        log.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(_handler)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
