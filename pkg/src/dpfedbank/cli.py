"""Command-line entry point: ``dpfedbank {run,calibrate,sweep,validate}``.

Exit codes: 0 success, 1 bad configuration or arguments, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import apply_overrides, from_dict, load_raw
from .errors import ConfigInvalid
from .ldp import gaussian_sigma
from .protocol import derive_seed, iter_experiment, summarize

log = logging.getLogger("dpfedbank")

SWEEP_AXES = {
    "epsilon": "privacy.epsilon",
    "attack_fraction": "attack.attacker_fraction",
    "rule": "aggregation.rule",
}
SWEEP_COLUMNS = ["axis", "value", "seed", "final_accuracy", "final_loss", "mean_tpr", "mean_fpr", "cumulative_eps"]


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _load(args, extra=()) -> tuple[dict, object]:
    overrides = list(args.set or []) + list(extra)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"experiment.seed={args.seed}")
    raw = apply_overrides(load_raw(args.config), overrides)
    if getattr(args, "out", None) is not None:
        raw.setdefault("experiment", {})["output"] = str(args.out)
    return raw, from_dict(raw)


def render_jsonl(cfg, threads=None) -> str:
    records = []
    buf = io.StringIO()
    for rec in iter_experiment(cfg, threads):
        records.append(rec)
        buf.write(json.dumps(rec.to_dict()) + "\n")
    buf.write(json.dumps(summarize(records)) + "\n")
    return buf.getvalue()


def cmd_run(args) -> int:
    _, cfg = _load(args)
    write_atomic(cfg.experiment.output, render_jsonl(cfg))
    log.info("wrote %d rounds to %s", cfg.experiment.rounds, cfg.experiment.output)
    return 0


def cmd_validate(args) -> int:
    _load(args)
    print("ok")
    return 0


def cmd_calibrate(args) -> int:
    if (args.clip is None) == (args.sensitivity is None):
        raise ConfigInvalid("calibrate", "give exactly one of --clip or --sensitivity")
    sens = 2.0 * args.clip if args.clip is not None else args.sensitivity
    if not (math.isfinite(sens) and sens > 0):
        raise ConfigInvalid("sensitivity", "must be positive")
    if not (math.isfinite(args.epsilon) and args.epsilon > 0):
        raise ConfigInvalid("epsilon", "must be positive")
    if args.delta is not None and not 0 < args.delta < 1:
        raise ConfigInvalid("delta", "must lie in (0, 1)")
    if args.mode == "analytic":
        if args.delta is None:
            raise ConfigInvalid("delta", "required in analytic mode")
        sigma = gaussian_sigma(sens, args.epsilon, args.delta)
    else:
        sigma = gaussian_sigma(sens, args.epsilon)
    print(f"{sigma:#.6g}")
    return 0


def _sweep_one(raw: dict, axis: str, value: str, seed: int) -> dict:
    cfg = from_dict(apply_overrides(raw, [f"{SWEEP_AXES[axis]}={value}", f"experiment.seed={seed}"]))
    records = list(iter_experiment(cfg, threads=1))
    s = summarize(records)
    return {
        "axis": axis,
        "value": value,
        "seed": seed,
        "final_accuracy": s["final_accuracy"],
        "final_loss": s["final_loss"],
        "mean_tpr": s["mean_tpr"],
        "mean_fpr": s["mean_fpr"],
        "cumulative_eps": s["max_cumulative_eps"],
    }


def cmd_sweep(args) -> int:
    if not args.values:
        raise ConfigInvalid("values", "at least one value is required")
    if args.seeds < 1:
        raise ConfigInvalid("seeds", "must be >= 1")
    raw, cfg = _load(args)
    master = cfg.experiment.seed
    jobs = [(v, derive_seed(master, "sweep", i)) for v in args.values for i in range(args.seeds)]
    # validate every point before spending time on any run
    for v, s in jobs:
        from_dict(apply_overrides(raw, [f"{SWEEP_AXES[args.axis]}={v}", f"experiment.seed={s}"]))
    workers = max(1, int(os.environ.get("DPFB_THREADS", "1") or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda job: _sweep_one(raw, args.axis, *job), jobs))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    out = args.out or Path(cfg.experiment.output).with_suffix(".csv")
    write_atomic(out, buf.getvalue())
    log.info("wrote %d sweep rows to %s", len(rows), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpfedbank", description="Federated learning with local DP: simulation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
        p.add_argument("--out", help="output path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. privacy.epsilon=2")

    p = sub.add_parser("run", help="run one experiment and write JSON-lines metrics")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="parse and validate a config")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="run one experiment per value and write a CSV summary")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", nargs="*", default=[], help="space-separated values for the axis")
    p.add_argument("--seeds", type=int, default=1, help="seeds per value")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="print the Gaussian noise scale")
    p.add_argument("--clip", type=float, help="clip norm C (sensitivity is 2C)")
    p.add_argument("--sensitivity", type=float, help="sensitivity directly")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--mode", choices=["analytic", "simple"], default="analytic")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ConfigInvalid, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
