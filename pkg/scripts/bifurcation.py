"""Period-doubling sweep of the balanced map; prints the period sequence and where each period first appears."""
import argparse

from eoslab.lab import ExperimentConfig, run_experiment

p = argparse.ArgumentParser()
p.add_argument("--depth", type=int, default=3)
p.add_argument("--sigma", type=float, default=10.0)
p.add_argument("--num", type=int, default=200)
p.add_argument("--out", default=None)
args = p.parse_args()

cfg = ExperimentConfig.from_dict({
    "kind": "bifurcation",
    "network": {"depth": args.depth, "dim": 1, "init_scale": 0.01},
    "target": {"singular_values": [args.sigma]},
    "eta_grid": {"start": 0.9, "stop": 1.6, "num": args.num, "relative": True},
    "out": args.out,
})
rows = run_experiment(cfg).records()
first = {}
for r in rows:
    key = r["period"] if r["status"] == "periodic" else r["status"]
    first.setdefault(key, r["eta_over_threshold"])
for key, c in first.items():
    print(f"{str(key):>9} first at eta = {c:.4f} x 2/S")
# one character per grid point: the period, '+' for 16 or more, '*' chaos, 'x' diverged
print("".join(("+" if r["period"] >= 16 else str(r["period"])) if r["status"] == "periodic"
              else {"chaos": "*", "diverged": "x"}.get(r["status"], "?") for r in rows))
