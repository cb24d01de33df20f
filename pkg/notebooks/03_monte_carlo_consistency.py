"""
Monte Carlo consistency statistics
==================================

200 independent truth runs filtered with a candidate tuning.  A correct
tuning keeps the averaged NEES inside its chi-square band and about 95%
of errors inside the reported 2-sigma envelope; a badly overconfident one
does neither.
"""

# %%
import numpy as np

from kfat import NoiseIntensities, ScenarioConfig, monte_carlo, tracking_1d
from kfat.metrics import chi_square_band, j_cost, two_sigma_coverage

truth = NoiseIntensities([1.0], [0.1])
base = ScenarioConfig(tracking_1d(), truth, dt=0.1, steps=200, runs=200, master_seed=1)
lo, hi = chi_square_band(dof=2, n_runs=200, confidence=0.95)
print(f"95% band for the averaged NEES: [{lo:.3f}, {hi:.3f}]")

# %%
for label, cand in [("truth", truth), ("0.01 x truth", NoiseIntensities([0.01], [0.001])),
                    ("10 x truth", NoiseIntensities([10.0], [1.0]))]:
    r = monte_carlo(base.with_candidate(cand))
    cov = np.mean([two_sigma_coverage(r.errors[i], r.P_post) for i in range(r.n_runs)])
    J = j_cost(r.nees, 2).value
    print(f"{label:>13}: mean NEES {r.nees.mean():8.3f}  J_NEES {J:.3f}  2-sigma coverage {cov:.3f}")

# %% run i is keyed by (master_seed, i): a chunk reproduces the same runs
whole = monte_carlo(base.with_candidate(truth))
part = monte_carlo(base.with_candidate(truth), runs=slice(50, 60))
print("chunk identical to full batch:", np.array_equal(whole.nees[50:60], part.nees))
