"""
Auto-tuning with Bayesian optimization and downhill simplex
===========================================================

Both tuners minimize the larger J_NEES over dt = 0.1 s and 0.5 s, each
evaluation a fresh 100-run Monte Carlo experiment.  Budgets are cut
down so the script finishes in about a minute; the acceptance suite runs
the full protocol.
"""

# %%
import numpy as np

from kfat import NoiseIntensities, ScenarioConfig, TuneConfig, bayesopt_tune, tracking_1d
from kfat.tuner import lhs_starts, nelder_mead_tune

scenario = ScenarioConfig(tracking_1d(), NoiseIntensities([1.0], [0.1]), runs=100)
cfg = TuneConfig(scenario, dt_list=(0.1, 0.5), n_seed=20, n_iter=40, seed=0)

# %%
bo = bayesopt_tune(cfg)
print(f"GPBO  q* = V {bo.q_star.V[0]:.3f}, W {bo.q_star.W[0]:.4f}   cost {bo.y_star:.4f}")
best = bo.best_so_far()
print("best cost after 20/40/60 evaluations:", [round(float(best[k - 1]), 4) for k in (20, 40, 60)])

# %% the simplex baseline from three Latin-hypercube starts
for i, x0 in enumerate(lhs_starts(3, cfg.dim, seed=0)):
    nm = nelder_mead_tune(cfg, x0)
    q0 = cfg.from_unit(x0)
    print(f"NM start ({q0[0]:.3f}, {q0[1]:.4f}) -> q* = V {nm.q_star.V[0]:.3f}, W {nm.q_star.W[0]:.4f}"
          f"   cost {nm.y_star:.4f}")

# %% per-evaluation log, ready for plotting elsewhere
print(bo.history_csv().splitlines()[0])
print(np.round(np.array([e.per_dt for e in bo.history[-3:]]), 4))
