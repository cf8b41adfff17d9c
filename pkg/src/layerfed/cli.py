"""Command line interface.

Subcommands: train, detect, sweep-collab, placement, keygen, report.
Exit codes: 0 success, 2 configuration error, 3 check failure (--check).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, LayerfedError
from .experiments import (
    collaboration_sweep,
    detection_experiment,
    f1_score,
    precision_recall,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


class CheckFailure(Exception):
    pass


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _cmd_train(args) -> int:
    cfg = _load(args)
    summary = run_experiment(cfg, plots=args.plots)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.check:
        out = Path(cfg.out_dir)
        rows = list(csv.DictReader((out / "rounds.csv").open()))
        losses = [float(r["loss"]) for r in rows if r["loss"]]
        if not losses or not all(np.isfinite(v) and v >= 0 for v in losses):
            raise CheckFailure("losses must be finite and nonnegative")
        if summary["convergence"] == "diverging":
            raise CheckFailure("training diverged")
    return EXIT_OK


def _cmd_detect(args) -> int:
    cfg = _load(args)
    attack = cfg.anomaly.attack.to_spec()
    if not attack.targets:
        raise ConfigError("anomaly.attack.targets: at least one target device required for detect")
    outcome = detection_experiment(cfg, cfg.seed, attack, epochs=args.rounds)
    tp, fp, fn = outcome.micro_counts("flagged")
    precision, recall = precision_recall(tp, fp, fn)
    ctp, cfp, cfn = outcome.micro_counts("control")
    report = {
        "seed": cfg.seed,
        "attackers": sorted(outcome.attackers),
        "precision": precision,
        "recall": recall,
        "f1": f1_score(tp, fp, fn),
        "control_f1": f1_score(ctp, cfp, cfn),
        "mean_latency_ms": float(np.mean([r.latency_ms for r in outcome.rounds])),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        from .anomaly import report_text

        (out / "detection_report.txt").write_text("".join(report_text(r) for r in outcome.reports))
    if args.check:
        verified_sets_ok = all(r.verified <= r.flagged for r in outcome.rounds)
        if not verified_sets_ok:
            raise CheckFailure("verified set escaped the flagged set")
        if recall < 1.0 or not precision >= 0.9:
            raise CheckFailure(f"operating point missed: precision={precision} recall={recall}")
    return EXIT_OK


def _cmd_sweep_collab(args) -> int:
    cfg = _load(args)
    counts = [int(c) for c in args.counts.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows, summary = collaboration_sweep(cfg, counts, seeds, epochs=args.rounds)
    ordered = [summary[k] for k in sorted(summary)]
    non_decreasing = all(b >= a for a, b in zip(ordered, ordered[1:]))
    table = {"rows": rows, "mean_by_count": {str(k): v for k, v in summary.items()}, "non_decreasing": non_decreasing}
    print(json.dumps(table, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "collab_sweep.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["count", "seed", "accuracy"], lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({**row, "accuracy": repr(row["accuracy"])})
            for k in sorted(summary):
                writer.writerow({"count": k, "seed": "MEAN", "accuracy": repr(summary[k])})
    return EXIT_OK


def _cmd_placement(args) -> int:
    from .placement import dump_plan, load_problem, save_plan, solve_exact, solve_greedy

    problem = load_problem(args.input)
    plan = solve_exact(problem) if args.solver == "exact" else solve_greedy(problem)
    sys.stdout.write(dump_plan(plan))
    if args.out:
        save_plan(plan, args.out)
    return EXIT_OK


def _cmd_keygen(args) -> int:
    from .crypto import dump_keypair, keygen

    kp = keygen(args.bits, args.seed if args.seed is not None else 0)
    text = dump_keypair(kp)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.bits}-bit keypair to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_report(args) -> int:
    out = Path(args.out or "runs")
    summary_path = out / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json under {out}")
    print(summary_path.read_text().rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerfed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, check=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        if check:
            p.add_argument("--check", action="store_true", help="fail (exit 3) if run-level checks miss")

    p_train = sub.add_parser("train", help="run the configured training experiment")
    common(p_train)
    p_train.add_argument("--plots", action="store_true", help="emit line-chart PNGs")
    p_train.set_defaults(func=_cmd_train)

    p_detect = sub.add_parser("detect", help="train under attack and screen uploads")
    common(p_detect)
    p_detect.add_argument("--rounds", type=int, default=20)
    p_detect.set_defaults(func=_cmd_detect)

    p_sweep = sub.add_parser("sweep-collab", help="consensus accuracy vs ensemble size")
    common(p_sweep, check=False)
    p_sweep.add_argument("--counts", default="1,2,3,4")
    p_sweep.add_argument("--seeds", default="0,1,2,3,4")
    p_sweep.add_argument("--rounds", type=int, default=20)
    p_sweep.set_defaults(func=_cmd_sweep_collab)

    p_place = sub.add_parser("placement", help="solve a task placement instance")
    place_sub = p_place.add_subparsers(dest="placement_command", required=True)
    p_solve = place_sub.add_parser("solve")
    p_solve.add_argument("--input", required=True, help="placement instance file")
    p_solve.add_argument("--solver", choices=["exact", "greedy"], default="exact")
    p_solve.add_argument("--out", help="plan output file")
    p_solve.set_defaults(func=_cmd_placement)

    p_key = sub.add_parser("keygen", help="generate a deterministic keypair")
    p_key.add_argument("--bits", type=int, default=512)
    p_key.add_argument("--seed", type=int, default=0)
    p_key.add_argument("--out", help="keypair output file")
    p_key.set_defaults(func=_cmd_keygen)

    p_report = sub.add_parser("report", help="print the summary of a finished run")
    p_report.add_argument("--out", help="run output directory")
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except LayerfedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
