"""Command-line harness: ``mdphom <command> --config cfg.json --out-dir DIR``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mdphom import experiments as ex
from mdphom.core import InconsistentPartition
from mdphom.envs import make_env
from mdphom.partitioning import ProjectionError
from mdphom.stats import mean_std

EXIT_CONFIG = 2
EXIT_INCONSISTENT = 3
EXIT_PROJECTION = 4


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_csv(out: Path, name: str, rows, columns, cfg: dict, seeds: list[int]) -> None:
    _write(out / name, ex.write_csv(rows, columns))
    _write(out / f"{name}.meta.json", _json(ex.metadata(cfg, seeds)))


def _shift_seeds(spec, first: int) -> list[int]:
    return [first + i for i in range(len(ex.seed_list(spec)))]


def cmd_abstract(cfg: dict, out: Path, args) -> int:
    if args.seed is not None:
        cfg["seed"] = args.seed
    env = make_env(cfg["env"])
    experience = ex.collect(env, cfg["collector"], cfg["seed"]).snapshot()
    try:
        ab = ex.abstract(env, experience, cfg["classifier"],
                         ex.PartitionConfig(**cfg["partition"]), ex.PlannerConfig(**cfg["planner"]))
    except InconsistentPartition as exc:
        _write(out / "trace.jsonl", exc.result.trace_lines())
        print(f"inconsistent partition: {exc} (trace in {out / 'trace.jsonl'})", file=sys.stderr)
        return EXIT_INCONSISTENT
    ex.save_abstraction(ab, out)
    returns = ex.evaluate_policy(env, ab.policy, int(cfg["eval_episodes"]), cfg["seed"])
    report = _evaluation(returns, ab)
    _write(out / "evaluation.json", _json(report))
    _write(out / "config.json", _json(cfg))
    print(f"blocks={report['blocks']} state_blocks={report['state_blocks']} "
          f"mean_reward={report['mean_reward']:.4f} flags={','.join(report['flags']) or '-'}")
    return 0


def _evaluation(returns, ab: ex.Abstraction) -> dict:
    m, s = mean_std(returns)
    return {
        "episodes": len(returns),
        "mean_reward": m,
        "std_reward": s,
        "blocks": len(ab.result.partition),
        "state_blocks": len(ab.quotient),
        "flags": sorted(ab.result.flags),
        "fallbacks": ab.policy.fallbacks,
        "decisions": ab.policy.decisions,
    }


def cmd_evaluate(cfg: dict, out: Path, args) -> int:
    if args.seed is not None:
        cfg["seed"] = args.seed
    src = Path(args.artifacts) if args.artifacts else out
    env = make_env(cfg["env"])
    ab = ex.load_abstraction(src, env, cfg["partition"]["confidence_threshold"])
    returns = ex.evaluate_policy(env, ab.policy, int(cfg["eval_episodes"]), cfg["seed"])
    report = _evaluation(returns, ab)
    _write(out / "evaluation.json", _json(report))
    print(f"mean_reward={report['mean_reward']:.4f} over {report['episodes']} episodes")
    return 0


def cmd_gridsearch(cfg: dict, out: Path, args) -> int:
    if args.seed is not None:
        cfg["seeds"] = _shift_seeds(cfg["seeds"], args.seed)
    seeds = ex.seed_list(cfg["seeds"])
    rows, summary = ex.run_gridsearch(cfg, args.threads)
    _write_csv(out, "gridsearch.csv", rows, ex.GRID_COLUMNS, cfg, seeds)
    _write_csv(out, "gridsearch_summary.csv", summary, ex.GRID_SUMMARY_COLUMNS, cfg, seeds)
    for r in summary:
        print(f"T_a={r['block_size_threshold']} T_c={r['confidence_threshold']}: "
              f"{r['mean']:.3f} +- {r['std']:.3f} ({r['runs']} runs)")
    return 0


def cmd_blocksworld(cfg: dict, out: Path, args) -> int:
    if args.seed is not None:
        cfg["seed"] = args.seed
    runs = ex.run_blocksworld(cfg, args.threads)
    seeds = [int(cfg["seed"])]
    _write_csv(out, "blocksworld.csv", ex.blocks_rows(runs), ex.BLOCKS_COLUMNS, cfg, seeds)
    per_segment = np.array([r.segment_means for r in runs])
    seg_rows = []
    for k in range(per_segment.shape[1]):
        m, s = mean_std(per_segment[:, k].tolist())
        seg_rows.append({"segment": k, "end_step": (k + 1) * int(cfg["segment"]), "mean": m, "std": s})
    _write_csv(out, "blocksworld_segments.csv", seg_rows, ["segment", "end_step", "mean", "std"], cfg, seeds)
    summary = {
        "runs": len(runs),
        "monotone_fraction": sum(r.monotone for r in runs) / len(runs),
        "max_blocks": max(max(r.blocks) for r in runs),
        "trivial_runs": sum(r.trivial for r in runs),
    }
    _write(out / "blocksworld_summary.json", _json(summary))
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_transfer(cfg: dict, out: Path, args) -> int:
    if args.seed is not None:
        cfg["seeds"] = _shift_seeds(cfg["seeds"], args.seed)
    report = ex.run_transfer(cfg, args.threads)
    seeds = ex.seed_list(cfg["seeds"])
    _write_csv(out, "transfer.csv", report.rows,
               ["seed", "condition", "steps_to_criterion", "option_executions"], cfg, seeds)
    summary = report.summary()
    _write(out / "transfer_report.json", _json(summary))
    for cond in ("options", "baseline"):
        s = summary[cond]
        if s["mean"] is None:
            print(f"{cond}: criterion never reached")
        else:
            print(f"{cond}: {s['mean']:.1f} +- {s['std']:.1f} (median {s['median']:.1f}, "
                  f"{s['reached']}/{len(seeds)} reached)")
    if summary["welch"]:
        print(f"welch t={summary['welch']['t']:.3f} p={summary['welch']['p_value']:.4g}")
    return 0


def cmd_config(args) -> int:
    doc = ex.DEFAULTS if args.kind is None else ex.DEFAULTS[args.kind]
    print(_json(doc), end="")
    return 0


HELP = {
    "abstract": "collect experience, partition it and plan on the quotient",
    "evaluate": "roll out a saved abstraction",
    "gridsearch": "sweep the block-size and confidence thresholds over seeds",
    "blocksworld": "budgeted blocks-world runs with periodic re-abstraction",
    "transfer": "compare options from a source abstraction with plain Q-learning",
}

COMMANDS = {
    "abstract": cmd_abstract,
    "evaluate": cmd_evaluate,
    "gridsearch": cmd_gridsearch,
    "blocksworld": cmd_blocksworld,
    "transfer": cmd_transfer,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdphom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON config; omitted keys take their defaults")
        p.add_argument("--seed", type=int, help="override the seed (first seed for multi-seed runs)")
        p.add_argument("--out-dir", default="runs", help="output directory (default: runs)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for seed fan-out")
        if name == "evaluate":
            p.add_argument("--artifacts", help="directory written by `abstract` (default: --out-dir)")
    p = sub.add_parser("config", help="print default configs")
    p.add_argument("--print-defaults", action="store_true", required=True)
    p.add_argument("kind", nargs="?", choices=sorted(COMMANDS))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "config":
        return cmd_config(args)
    try:
        text = Path(args.config).read_text() if args.config else None
        cfg = ex.load_config(args.command, text)
        if args.threads < 1:
            raise ex.ConfigError("--threads must be at least 1")
        return COMMANDS[args.command](cfg, Path(args.out_dir), args)
    except (OSError, ex.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InconsistentPartition as exc:
        print(f"inconsistent partition: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except ProjectionError as exc:
        print(f"projection failed: {exc}", file=sys.stderr)
        return EXIT_PROJECTION


if __name__ == "__main__":
    sys.exit(main())
