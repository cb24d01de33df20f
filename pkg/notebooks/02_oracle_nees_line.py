"""
The NEES line and why one sample time is not enough
===================================================

The closed-form oracle gives the steady-state expected NEES of a filter
tuned with (V, W) while the plant runs with (V_a, W_a).  Every tuning on
the "NEES line" looks perfectly consistent at a given dt; the lines for
two sample times only cross at the truth.
"""

# %%
import numpy as np

from kfat.oracle import expected_nees, log_grid, multi_dt_surface, oracle_grid

V_a, W_a = 1.0, 0.1
V, W = log_grid(0.1, 5.0, 200), log_grid(0.01, 0.5, 200)

# %% matched tuning: NEES equals the state dimension at any dt
for dt in (0.1, 0.5, 1.0):
    print(f"dt={dt}: E[nees] = {expected_nees(V_a, W_a, V_a, W_a, dt).expected_nees:.12f}")

# %% NEES lines at two sample times
lines = {}
for dt in (0.1, 0.5):
    g = oracle_grid(V, W, V_a, W_a, dt)
    lines[dt] = (g.expected_nees >= 1.995) & (g.expected_nees <= 2.005)
    print(f"dt={dt}: {lines[dt].sum()} grid points on the line")

for i, j in np.argwhere(lines[0.1] & lines[0.5]):
    print(f"both lines contain (V, W) = ({V[i]:.3f}, {W[j]:.4f})")

# %% a point on the dt=0.1 line drifts away from 2 as dt grows
i, j = np.argwhere(lines[0.1])[5]
for dt in (0.1, 0.25, 0.5, 1.0):
    print(f"(V, W) = ({V[i]:.3f}, {W[j]:.4f}), dt={dt}: E[nees] = "
          f"{expected_nees(V[i], W[j], V_a, W_a, dt).expected_nees:.4f}")

# %% taking the larger J_NEES over both dt leaves a single valley floor
Vc, Wc = log_grid(0.1, 5.0, 50), log_grid(0.01, 0.5, 50)
s = multi_dt_surface(Vc, Wc, [0.1, 0.5], V_a, W_a)
i, j = np.unravel_index(np.argmin(s), s.shape)
print(f"max-over-dt argmin: ({Vc[i]:.3f}, {Wc[j]:.4f}), J = {s[i, j]:.2e}")
