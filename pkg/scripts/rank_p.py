"""Tail peak-to-peak of each end-to-end direction for one learning rate per rank-p window (d=50)."""
from eoslab.acceptance import RANK_SIGMA, rank_p_learning_rates
from eoslab.lab import ExperimentConfig, run_experiment
from eoslab.orbit import eos_ranges

windows = eos_ranges(3, RANK_SIGMA).windows
for p, (lo, hi) in enumerate(windows, start=1):
    print(f"rank-{p} window: ({lo:.5f}, {hi:.5f})")

cfg = ExperimentConfig.from_dict({
    "kind": "rank_p_oscillation",
    "network": {"depth": 3, "dim": 50, "rank": 3, "init_scale": 0.01},
    "target": {"singular_values": list(RANK_SIGMA)},
    "eta_grid": rank_p_learning_rates(),
})
for r in run_experiment(cfg).records():
    amps = "  ".join(f"{r[f'amplitude_{i}']:.3e}" for i in (1, 2, 3))
    print(f"eta={r['eta']:.5f} predicted rank {r['predicted_rank']} observed {r['observed_rank']}: {amps}")
