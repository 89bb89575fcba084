"""Plot accuracy, loss and trust per round from a JSON-lines metrics file.

    dpfedbank run --config configs/detection.toml --out runs/det.jsonl
    python scripts/plot_metrics.py runs/det.jsonl --out runs/det.png

Needs matplotlib (``pip install .[plot]``).
"""
import argparse
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("metrics")
    ap.add_argument("--out", default="metrics.png")
    args = ap.parse_args()

    with open(args.metrics) as fh:
        records = [r for r in map(json.loads, fh) if not r.get("summary")]
    rounds = [r["round"] for r in records]

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.5))
    axes[0].plot(rounds, [r["accuracy"] for r in records])
    axes[0].set_title("accuracy")
    axes[1].plot(rounds, [r["loss"] for r in records])
    axes[1].set_title("loss")
    clients = sorted(records[0]["trust"], key=int) if records else []
    for c in clients:
        axes[2].plot(rounds, [r["trust"][c] for r in records], label=c)
    axes[2].set_title("trust")
    if len(clients) <= 12:
        axes[2].legend(fontsize="small", ncol=2)
    for ax in axes:
        ax.set_xlabel("round")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
