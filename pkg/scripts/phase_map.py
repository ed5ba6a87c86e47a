"""Depth x learning-rate map from a small balanced start; '.' period 1, digits are periods, '*' chaos, 'x' diverged.

The '|' marks the first grid point past 2/(L s^(2-2/L)).
"""
from eoslab.acceptance import SHARPENING_GRID
from eoslab.lab import ExperimentConfig, run_experiment

cfg = ExperimentConfig.from_dict({
    "kind": "mild_sharpening_map",
    "network": {"depth": 2, "dim": 1, "init_scale": 0.01},
    "target": {"singular_values": [0.5]},
    "eta_grid": SHARPENING_GRID,
    "depths": [2, 3, 4, 5, 6],
})
rows = run_experiment(cfg).records()
for L in cfg.depths:
    line, marked = "", False
    for r in (r for r in rows if r["depth"] == L):
        if not marked and r["eta"] > r["threshold"]:
            line, marked = line + "|", True
        if r["status"] == "periodic":
            line += "." if r["period"] == 1 else str(min(r["period"], 9))
        else:
            line += {"chaos": "*", "diverged": "x"}.get(r["status"], "?")
    print(f"L={L}  {line}")
