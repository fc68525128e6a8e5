"""
QAoI versus the transmission budget.

The optimal policy, the per-source lower bound, the truncated policy built
from the per-source solutions, and the greedy baseline over a grid of
transmission budgets, at two channel reliabilities.

    python demos/02_budget_sweep.py
"""
# %%
from qaoi import SimConfig, SourceSpec, SystemSpec
from qaoi.experiments import ExperimentConfig, format_csv, run_experiment

base = SystemSpec(
    (SourceSpec.random_arrival(0.6, 0.7, 0.4), SourceSpec.generate_at_will(0.7, 0.4)),
    p=0.9, N=6, lam=0.99, gamma_tr=0.5, gamma_sm=0.3,
)
policies = ("optimal", "lower_bound", "truncated", "baseline")
sim = SimConfig(replications=500, seed=2)

# %%
for p in (0.5, 0.9):
    cfg = ExperimentConfig(base.with_(p=p), "gamma_tr", (0.1, 0.2, 0.3, 0.5, 0.7, 1.0), policies, sim)
    rows = run_experiment(cfg)
    print(f"\np = {p}")
    print(f"{'budget':>6}  " + "  ".join(f"{name:>11}" for name in policies))
    for g in cfg.grid:
        vals = []
        for r in rows:
            if r.sweep_param != g:
                continue
            vals.append(r.lp_objective if r.policy in ("optimal", "lower_bound") else r.sim_qaoi)
        print(f"{g:>6}  " + "  ".join(f"{v:>11.4f}" for v in vals))

# %% the same table as CSV, ready for any plotting tool
print()
print(format_csv(rows)[:400], "...")
