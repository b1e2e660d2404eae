"""Command-line entry point; every subcommand is a thin shell over one
pipeline stage.

Exit codes: 0 success, 1 usage error (with usage text), 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import envs, fileio, orchestrate, policy
from .numerics import RngKey


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="improv",
                     description="Self-improvement loop for diffusion policies")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="run config (.toml or .json)")
            p.add_argument("--seed", type=int, default=None,
                           help="override: run only this seed")
            p.add_argument("--rounds", type=int, default=None,
                           help="override: number of self-improvement rounds")
            p.add_argument("--exploration", default=None,
                           choices=["none", "modal", "action_noise", "ddim_eta"],
                           help="override: exploration kind")
            p.add_argument("--theta", type=float, default=None,
                           help="override: inter-demo success-rate threshold")
            p.add_argument("--threads", type=int, default=None,
                           help="override: rollout worker cap")
        return p

    p = add("gen-demos", "generate scripted-expert demonstrations")
    p.add_argument("--out", required=True, help="output demos.jsonl path")

    p = add("train", "train the initial policy on demonstrations")
    p.add_argument("--demos", default=None, help="demos.jsonl (generated if omitted)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("eval", "evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--round", type=int, default=0, dest="round_tag")
    p.add_argument("--out", required=True, help="output directory")

    p = add("collect", "collect self-trials with exploration")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--round", type=int, default=1, dest="round_tag")
    p.add_argument("--out", required=True, help="output directory")

    p = add("select", "inter-demo filter a trials file")
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = add("improve", "one selection + retraining round")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--round", type=int, default=1, dest="round_tag")
    p.add_argument("--out", required=True, help="output directory")

    p = add("run", "full multi-round self-improvement experiment")
    p.add_argument("--out", required=True, help="run directory")

    p = add("verify-report", "recompute a report from its trials", needs_config=False)
    p.add_argument("report", help="path to report.json (trials.jsonl beside it)")

    p = add("diversity", "success-count histogram over a trials file",
            needs_config=False)
    p.add_argument("--trials", required=True)
    p.add_argument("--per-scenario", type=int, default=10)
    p.add_argument("--out", default=None, help="output json (stdout if omitted)")

    return parser


def _load_run_config(args) -> orchestrate.RunConfig:
    data = fileio.load_config_file(args.config)
    config = orchestrate.RunConfig.from_dict(data)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    if getattr(args, "rounds", None) is not None:
        config = replace(config, rounds=args.rounds)
    if getattr(args, "exploration", None) is not None:
        config = replace(config, exploration=replace(config.exploration,
                                                     kind=args.exploration))
    if getattr(args, "theta", None) is not None:
        config = replace(config, selection=replace(config.selection,
                                                   theta=args.theta))
    if getattr(args, "threads", None) is not None:
        config = replace(config, threads=args.threads)
    return config


def _write_resolved(config: orchestrate.RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_json(out_dir / "config.json", {
        "config": config.to_dict(), "config_hash": config.config_hash()})


def _read_trials(path) -> list[envs.Trajectory]:
    return [envs.traj_from_record(r) for r in fileio.read_jsonl(path)]


def _write_trials(path, trials) -> None:
    fileio.write_jsonl(path, [envs.traj_to_record(t) for t in trials])


def _cmd_gen_demos(args) -> int:
    config = _load_run_config(args)
    seed = config.seeds[0]
    demos = envs.gen_demos(config.env_name, config.n_demos, config.mode_mix,
                           RngKey(seed).child("demos"))
    _write_trials(args.out, demos)
    print(f"wrote {len(demos)} demonstrations to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_run_config(args)
    seed = config.seeds[0]
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    if args.demos:
        demos = _read_trials(args.demos)
        lo, hi = policy.action_stats(demos)
        params = policy.init_policy(envs.obs_dim(config.env_name), 2, lo, hi,
                                    RngKey(seed).child("init"))
        data = policy.build_training_set(demos, params)
        params = policy.train_policy(params, data,
                                     RngKey(seed).child("train", 0),
                                     iters=config.train_iters,
                                     batch_size=config.batch_size, lr=config.lr)
    else:
        demos, params = orchestrate.train_initial(config, seed)
        _write_trials(out_dir / "demos.jsonl", demos)
    policy.save_checkpoint(params, out_dir / "checkpoint.json",
                           config.config_hash())
    print(f"trained policy written to {out_dir / 'checkpoint.json'}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_run_config(args)
    seed = config.seeds[0]
    params, _ = policy.load_checkpoint(args.checkpoint)
    report, trials = orchestrate.evaluate(params, config, seed, args.round_tag)
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    fileio.write_json(out_dir / "report.json", report.to_dict())
    _write_trials(out_dir / "trials.jsonl", trials)
    print(f"overall SR {report.overall_sr:.3f} over {report.n_scenarios} scenarios "
          f"x {report.attempts} attempts ({report.wall_clock_sec:.1f}s)")
    return 0


def _cmd_collect(args) -> int:
    config = _load_run_config(args)
    seed = config.seeds[0]
    params, _ = policy.load_checkpoint(args.checkpoint)
    trials = orchestrate.collect(params, config, seed, args.round_tag)
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    _write_trials(out_dir / "collect.jsonl", trials)
    succ = sum(1 for t in trials if t.success)
    print(f"collected {len(trials)} trials ({succ} successes) "
          f"to {out_dir / 'collect.jsonl'}")
    return 0


def _cmd_select(args) -> int:
    from . import selection as sel_mod
    config = _load_run_config(args)
    trials = _read_trials(args.trials)
    kept = sel_mod.select_trials(trials, config.selection)
    groups = sel_mod.group_by_scenario(trials)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "selection": config.to_dict()["selection"],
        "n_self_trials": len(trials),
        "n_kept": len(kept),
        "kept_traj_ids": [t.traj_id for t in kept],
        "scenario_success_rates": [
            {"scenario_id": int(sid),
             "successes": sum(1 for t in g if t.success),
             "attempts": len(g)}
            for sid, g in groups.items()],
    }
    fileio.write_json(out_dir / "manifest.json", manifest)
    _write_trials(out_dir / "kept.jsonl", kept)
    print(f"kept {len(kept)}/{len(trials)} trials; manifest at "
          f"{out_dir / 'manifest.json'}")
    return 0


def _cmd_improve(args) -> int:
    config = _load_run_config(args)
    seed = config.seeds[0]
    params, _ = policy.load_checkpoint(args.checkpoint)
    demos = _read_trials(args.demos)
    trials = _read_trials(args.trials)
    new_params, manifest = orchestrate.improve_round(
        params, demos, trials, config, seed, args.round_tag)
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    policy.save_checkpoint(new_params, out_dir / "checkpoint.json",
                           config.config_hash())
    fileio.write_json(out_dir / "manifest.json", manifest)
    print(f"improved checkpoint at {out_dir / 'checkpoint.json'} "
          f"(kept {manifest['n_kept']}/{manifest['n_self_trials']})")
    return 0


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    orchestrate.run_rounds(config, args.out)
    print(f"run complete; outputs under {args.out}")
    return 0


def _cmd_verify_report(args) -> int:
    report_path = Path(args.report)
    if not report_path.exists():
        raise UsageError(f"report not found: {report_path}")
    report = fileio.read_json(report_path)
    trials_path = report_path.parent / "trials.jsonl"
    if not trials_path.exists():
        raise UsageError(f"trials file not found beside report: {trials_path}")
    trials = _read_trials(trials_path)
    problems = orchestrate.verify_report(report, trials)
    if problems:
        for p in problems:
            print(f"verify-report: {p}", file=sys.stderr)
        raise RuntimeError(f"report failed verification with {len(problems)} problem(s)")
    print(f"{report_path}: all fields verified against {len(trials)} trials")
    return 0


def _cmd_diversity(args) -> int:
    trials = _read_trials(args.trials)
    hist = orchestrate.diversity_histogram(trials, args.per_scenario)
    text = fileio.canonical_json(hist)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"histogram written to {args.out}")
    else:
        print(text)
    return 0


_COMMANDS = {
    "gen-demos": _cmd_gen_demos,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "collect": _cmd_collect,
    "select": _cmd_select,
    "improve": _cmd_improve,
    "run": _cmd_run,
    "verify-report": _cmd_verify_report,
    "diversity": _cmd_diversity,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse -h/--help
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
