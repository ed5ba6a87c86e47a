"""Two-layer scalar toy: balancing gap under GD at three step sizes and under gradient flow."""
import numpy as np

from eoslab.dynamics import gradient_flow
from eoslab.lab import contour_path
from eoslab.model import Weights, make_target

START, TARGET = (1.5, 2.25), 5.0

for lr in (0.18, 0.1997, 0.2010):
    gaps = [abs(w[1] ** 2 - w[0] ** 2) for _, w in contour_path(START, TARGET, lr, 5000)]
    marks = "  ".join(f"t={t}: {gaps[t]:.3e}" for t in (0, 10, 100, 1000, 5000))
    print(f"GD lr={lr:<7} {marks}")

w0 = Weights(tuple(np.array([[v]]) for v in START))
traj = gradient_flow(w0, make_target(1, 1, [TARGET]), 1.0, 1e-4)
print(f"GF dt=1e-4     max |gap - 2.8125| = {np.max(np.abs(traj.gaps[:, 0] - 2.8125)):.2e}")
