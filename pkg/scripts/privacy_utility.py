"""Final accuracy against per-round epsilon, averaged over seeds.

    python scripts/privacy_utility.py --eps 0.5 2 8 --seeds 5
"""
import argparse
from pathlib import Path

import numpy as np

from dpfedbank.config import apply_overrides, from_dict, load_raw
from dpfedbank.protocol import run_experiment

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "privacy_utility.toml"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--eps", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0, 8.0])
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    raw = load_raw(args.config)
    print(f"{'epsilon':>8} {'mean acc':>9} {'std':>7}")
    for eps in args.eps:
        accs = []
        for seed in range(args.seeds):
            cfg = from_dict(apply_overrides(raw, [f"privacy.epsilon={eps}", f"experiment.seed={seed}"]))
            accs.append(run_experiment(cfg)[-1].accuracy)
        print(f"{eps:>8g} {np.mean(accs):>9.3f} {np.std(accs):>7.3f}")


if __name__ == "__main__":
    main()
