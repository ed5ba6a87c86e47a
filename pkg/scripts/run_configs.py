"""Run every JSON config in configs/ (or the ones given) and write results under each config's out."""
import sys
import time
from pathlib import Path

from eoslab.lab import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main(paths):
    paths = [Path(p) for p in paths] or sorted((ROOT / "configs").glob("*.json"))
    for path in paths:
        cfg = ExperimentConfig.load(path)
        t0 = time.perf_counter()
        table = run_experiment(cfg)
        print(f"{path.name:28s} {len(table.rows):7d} rows  {time.perf_counter() - t0:6.1f}s  -> {cfg.out}")


if __name__ == "__main__":
    main(sys.argv[1:])
