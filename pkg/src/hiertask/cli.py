"""Command-line front end.

Subcommands:
  run      learn from a config file, writing all artifacts to a directory
  eval     re-benchmark a saved snapshot and write a metrics file
  inspect  summarize a finished run directory in the terminal
  teach    build scripted demonstration repertoires and save them as text

Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from hiertask.config import ConfigError, load_config
from hiertask.envs import env_ids
from hiertask.runner import evaluate, load_snapshot, metrics_csv, run
from hiertask.teachers import DEFAULT_TEACHER_SETS, TeacherError, build_benchmark, build_teacher


class _Parser(argparse.ArgumentParser):
    """Argparse variant whose usage errors surface as config errors so the
    process exits 1, not argparse's default 2 (reserved for runtime faults)."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="hiertask", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run_p = sub.add_parser("run", help="run a learning experiment")
    run_p.add_argument("--config", required=True, help="experiment config file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument(
        "--checks",
        action="store_true",
        help="verify structural invariants after every episode (slow)",
    )
    run_p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    eval_p = sub.add_parser("eval", help="re-benchmark a saved snapshot")
    eval_p.add_argument("--snapshot", required=True, help="snapshot.pkl from a run")
    eval_p.add_argument(
        "--benchmark", required=True, help="benchmark id (an environment id)"
    )
    eval_p.add_argument("--out", required=True, help="output directory")

    ins_p = sub.add_parser("inspect", help="summarize a run directory")
    ins_p.add_argument("--run", required=True, help="directory a run wrote to")

    teach_p = sub.add_parser("teach", help="build scripted demonstration repertoires")
    teach_p.add_argument("--env", required=True, help="environment id")
    teach_p.add_argument("--out", required=True, help="file to write repertoires to")
    teach_p.add_argument("--kind", choices=("action", "procedure"))
    teach_p.add_argument("--space", help="outcome space id (with --kind)")
    teach_p.add_argument("--grid", type=int, default=5, help="goal grid density")
    teach_p.add_argument(
        "--seed", type=int, default=0, help="layout seed for validation replays"
    )
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    progress = None
    if not args.quiet:

        def progress(ep, errors):
            parts = " ".join(f"{s}={e:.3f}" for s, e in sorted(errors.items()))
            print(f"[{ep}] {parts}", flush=True)

    learner, rows = run(cfg, args.out, checks=args.checks, progress=progress)
    if not args.quiet:
        print(f"done: {learner.episode} episodes -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    if args.benchmark not in env_ids():
        raise ConfigError(
            f"unknown benchmark {args.benchmark!r}, expected one of {env_ids()}"
        )
    data = load_snapshot(args.snapshot)
    learner = data["learner"]
    if learner.cfg.env != args.benchmark:
        raise ConfigError(
            f"snapshot was trained on {learner.cfg.env!r}, not {args.benchmark!r}"
        )
    bench = build_benchmark(args.benchmark, learner.cfg.eval_seed)
    rows = evaluate(learner, bench)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics_eval.csv").write_text(
        metrics_csv(rows, learner.cfg.strategy_ids()), encoding="utf-8"
    )
    for r in rows:
        print(
            f"{r.space}: mean_error={r.mean_error:.4f} "
            f"mean_length={r.mean_length:.2f} goals={r.n_goals}"
        )
    return 0


def _cmd_inspect(args) -> int:
    run_dir = Path(args.run)
    config_path = run_dir / "config.txt"
    if not config_path.is_file():
        raise ConfigError(f"{run_dir} is not a run directory (no config.txt)")
    print("== config ==")
    print(config_path.read_text(encoding="utf-8").rstrip())
    log_path = run_dir / "episodes.jsonl"
    if log_path.is_file():
        counts: dict[str, int] = {}
        total = 0
        comp_sum = 0.0
        with open(log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                counts[row["strategy"]] = counts.get(row["strategy"], 0) + 1
                comp_sum += row["competence"]
                total += 1
        print(f"== episodes: {total} ==")
        for s in sorted(counts):
            print(f"  {s}: {counts[s]}")
        if total:
            print(f"  mean competence: {comp_sum / total:.4f}")
    metrics_path = run_dir / "metrics.csv"
    if metrics_path.is_file():
        lines = metrics_path.read_text(encoding="utf-8").strip().splitlines()
        if len(lines) > 1:
            last_ep = lines[-1].split(",")[0]
            print(f"== final benchmark (episode {last_ep}) ==")
            header = lines[0].split(",")
            for line in lines[1:]:
                vals = line.split(",")
                if vals[0] == last_ep:
                    err = float(vals[header.index("mean_error")])
                    print(f"  {vals[1]}: mean_error={err:.4f}")
    for extra in ("hierarchy.dot", "couplings.txt", "couplings.dot", "regions.txt"):
        if (run_dir / extra).is_file():
            print(f"export: {extra}")
    return 0


def _cmd_teach(args) -> int:
    if args.env not in env_ids():
        raise ConfigError(f"unknown env {args.env!r}, expected one of {env_ids()}")
    if (args.kind is None) != (args.space is None):
        raise ConfigError("--kind and --space go together")
    if args.kind is not None:
        specs = [(args.kind, args.space, args.grid)]
    else:
        specs = list(DEFAULT_TEACHER_SETS[args.env])
    chunks = []
    for kind, space, grid in specs:
        t = build_teacher(args.env, kind, space, grid, layout_seed=args.seed)
        chunks.append(t.serialize())
        print(
            f"{t.teacher_id}: {len(t.demos)} demos"
            + (f", {len(t.dropped)} unreachable goals dropped" if t.dropped else "")
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(chunks), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        if args.command == "teach":
            return _cmd_teach(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TeacherError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure bucket
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
