"""
Optimal scheduling for one random-arrival and one generate-at-will source.

Solve the joint occupation-measure LP, look at the randomized policy it
induces, and check its value three ways: LP objective, exact policy
evaluation, Monte-Carlo simulation.

    python demos/01_single_instance.py
"""
# %%
import numpy as np

from qaoi import SimConfig, SourceSpec, SystemSpec, evaluate_policy_exact, run, solve_joint
from qaoi.model import enumerate_states

spec = SystemSpec(
    (SourceSpec.random_arrival(mu=0.6, rho=0.7, rho_bar=0.4),
     SourceSpec.generate_at_will(rho=0.7, rho_bar=0.4)),
    p=0.9, N=6, lam=0.99, gamma_tr=0.5, gamma_sm=0.3,
)
print(f"{spec.joint_size} joint states, actions: {[str(a) for a in spec.actions]}")

# %% LP
sol, measure, policy = solve_joint(spec)
print(f"LP objective       {sol.objective_value:.6f}   ({sol.message})")
print(f"occupation mass    {measure.total:.12f}")

# %% which states randomize?
mixed = np.flatnonzero((policy.f > 1e-9).sum(axis=1) > 1)
space = enumerate_states(spec)
print(f"{len(mixed)} states use a randomized action, e.g.")
for k in mixed[:3]:
    probs = ", ".join(f"{spec.actions[a]}={policy.f[k, a]:.3f}" for a in np.flatnonzero(policy.f[k]))
    print("   ", space.state(int(k)), "->", probs)

# %% exact evaluation and simulation
qaoi, tr, sm = evaluate_policy_exact(spec, policy)
print(f"exact evaluation   {qaoi:.6f}  transmissions {tr:.4f}  samples {sm:.4f}")

m = run(policy, spec, SimConfig(replications=2000, seed=1))
print(f"simulated          {m.qaoi_mean:.6f} +- {m.qaoi_ci95:.6f}  "
      f"transmissions {m.tr_mean:.4f}  samples {m.sm_mean:.4f}  (T={m.horizon})")
