"""
Discretizing the tracking model and running one filter
======================================================

A constant-velocity target driven by a known acceleration, observed in
position.  We discretize it at two sample times, simulate one truth run
and filter it with the true intensities.
"""

# %%
import numpy as np

from kfat import NoiseIntensities, discretize, tracking_1d
from kfat.kalman import run_filter
from kfat.metrics import nees, nis
from kfat.simulate import control_sequence, run_rng, simulate_truth

model = tracking_1d()
truth = NoiseIntensities(V=[1.0], W=[0.1])

# %% Van Loan gives F, B, Q exactly; R depends on the sensor kind
for dt in (0.1, 0.5):
    d = discretize(model, truth, dt)
    print(f"dt={dt}\nF=\n{d.F}\nQ=\n{d.Q}\nR={d.R.ravel()}\n")

# an integrating sensor averages over the interval, so R = W / dt
print("integrating R at dt=0.1:", discretize(model.with_sensor("integrating"), truth, 0.1).R.ravel())

# %% one truth trajectory, filtered with the true tuning
d = discretize(model, truth, 0.1)
states, meas = simulate_truth(d, np.zeros(2), 200, run_rng(master_seed=0, run_index=0))
trace = run_filter(d, np.zeros(2), np.eye(2), control_sequence(0.1, 200), meas)

eps_x = [nees(states[k] - trace.x_post[k], trace.P_post[k]) for k in range(200)]
eps_z = [nis(trace.innovation[k], trace.S[k]) for k in range(200)]
print(f"time-averaged NEES {np.mean(eps_x):.3f} (expect 2), NIS {np.mean(eps_z):.3f} (expect 1)")
# a single run is noisy; averaging over many runs is the job of monte_carlo
