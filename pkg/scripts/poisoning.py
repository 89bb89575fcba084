"""Compare aggregation rules with and without a scaled-update attack.

    python scripts/poisoning.py --rules mean median "trimmed_mean(3)" "multi_krum(3,5)"
"""
import argparse
from pathlib import Path

import numpy as np

from dpfedbank.config import apply_overrides, from_dict, load_raw
from dpfedbank.protocol import run_experiment

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "poisoning.toml"


def mean_accuracy(raw, overrides, seeds):
    accs = []
    for seed in range(seeds):
        cfg = from_dict(apply_overrides(raw, list(overrides) + [f"experiment.seed={seed}"]))
        accs.append(run_experiment(cfg)[-1].accuracy)
    return float(np.mean(accs))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--rules", nargs="+", default=["mean", "median", "trimmed_mean(3)", "multi_krum(3,5)"])
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    raw = load_raw(args.config)
    print(f"{'rule':<18} {'clean':>7} {'attacked':>9}")
    for rule in args.rules:
        clean = mean_accuracy(raw, [f'aggregation.rule="{rule}"', 'attack.kind="none"'], args.seeds)
        attacked = mean_accuracy(raw, [f'aggregation.rule="{rule}"'], args.seeds)
        print(f"{rule:<18} {clean:>7.3f} {attacked:>9.3f}")


if __name__ == "__main__":
    main()
