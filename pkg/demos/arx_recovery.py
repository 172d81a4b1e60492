"""Recover the lag structure of a second-order ARX system.

A linear MLP is trained on ten lagged regressors (five input lags, five
output lags) while the sparsity-promoting prior prunes whole input columns.
The true system only uses u(t-1), u(t-2), y(t-1) and y(t-2); watch the
deeper lags disappear cycle by cycle.

Run with ``python3 demos/arx_recovery.py`` (about ten seconds).
"""

from bayesid.data import RegressorConfig, build_regressors, split
from bayesid.sbl import ArchitectureSpec, IdentificationConfig, run_identification
from bayesid.synthetic import arx_system

ds = arx_system(800, a=(0.6, 0.2), b=(0.5, 0.3), noise_std=0.01, seed=0)
est, val = split(ds, 600)
rcfg = RegressorConfig(l_u=5, l_y=5)
reg = build_regressors(est, rcfg)

cfg = IdentificationConfig(lam=1e-4, c_max=6, e_max=1000, lr=3e-2, batch_size=600,
                           repeats=3, input_grouping="row_and_column")
report = run_identification(cfg, reg, val, ArchitectureSpec("mlp", (10,), "identity"))

best = report.repeats[report.best_repeat]
print(f"{'cycle':>5} {'val_rmse':>9} {'sparsity':>9}  pruned regressors")
for c in best.cycles:
    print(f"{c.cycle + 1:>5} {c.val_rmse:9.4f} {c.sparsity:9.3f}  {', '.join(c.pruned_regressors)}")

kept = [lab for lab in rcfg.labels() if lab not in best.cycles[report.best_cycle].pruned_regressors]
print(f"\nselected cycle {report.best_cycle + 1}: kept {', '.join(kept)}")
