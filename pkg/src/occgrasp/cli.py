"""``occgrasp`` command line: train, eval, sweep and replay.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, format_defaults

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("occgrasp")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occgrasp", description="Occluded grasping with extrinsic dexterity in the plane.")
    p.add_argument("--print-defaults", action="store_true", help="print every config default and exit")
    sub = p.add_subparsers(dest="command")
    for name, help_ in (("train", "train a policy"), ("eval", "evaluate a checkpoint"),
                        ("sweep", "sensitivity sweep of a checkpoint"), ("replay", "open-loop replay of a trace")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, help="YAML run configuration")
        s.add_argument("--seed", type=int, help="master seed (overrides io.seed)")
        s.add_argument("--workers", type=int, help="rollout worker threads (overrides io.workers)")
        s.add_argument("--out-dir", type=Path, help="output directory (overrides io.out_dir)")
        s.add_argument("--checkpoint", type=Path, help="checkpoint to load")
        s.add_argument("--print-defaults", action="store_true", help="print every config default and exit")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            s.add_argument("--episodes", type=int, help="training budget (overrides rl.episodes)")
            s.add_argument("--experiment", choices=["single_grasp", "adr", "selection", "curriculum"],
                           help="run a multi-seed experiment and write results/<name>.json")
            s.add_argument("--seeds", type=str, default="0,1,2,3,4", help="comma separated seeds for --experiment")
        if name == "replay":
            s.add_argument("--trace", type=Path, help="trace file (overrides eval.trace)")
    return p


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    io = cfg.io
    if args.seed is not None:
        io = replace(io, seed=args.seed)
    if args.workers is not None:
        io = replace(io, workers=args.workers)
    if args.out_dir is not None:
        io = replace(io, out_dir=str(args.out_dir))
    cfg = replace(cfg, mode=args.command, io=io)
    if getattr(args, "episodes", None) is not None:
        cfg = replace(cfg, rl=replace(cfg.rl, episodes=args.episodes))
    if getattr(args, "trace", None) is not None:
        cfg = replace(cfg, eval=replace(cfg.eval, trace=str(args.trace)))
    return cfg.validate()


def _load_agent(path: Path | None):
    from .sac import agent_from_checkpoint

    if path is None:
        raise ConfigError("--checkpoint", "required for this command")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return agent_from_checkpoint(path)


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    from .training import Trainer, run_experiment

    out = Path(cfg.io.out_dir)
    if args.experiment:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError("--seeds", "expected comma separated integers") from e
        path = run_experiment(args.experiment, cfg, seeds, out, log.info)
        print(path)
        return EXIT_OK
    tr = Trainer(cfg, out, log.info)
    if args.checkpoint is not None:
        tr.restore(args.checkpoint)
    (out / "config.yaml").parent.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())
    tr.run()
    print(out / "metrics.csv")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    from .curriculum import GraspRange
    from .evaluation import EvalReport, run_eval, write_report

    agent, header = _load_agent(args.checkpoint)
    out = Path(cfg.io.out_dir)
    env_cfg = cfg.env.to_env_config()
    cur = header.get("extra", {}).get("curriculum")
    trained = GraspRange(cur["lo"], cur["hi"]) if cur else cfg.curriculum.grasp_range()
    report = EvalReport(label="eval")
    if trained.hi > trained.lo:
        report = run_eval(agent.nets, cfg.env.domain, trained, cfg.eval.episodes, cfg.eval.strategy,
                          seed=cfg.io.seed, env_config=env_cfg, workers=cfg.io.workers,
                          n_candidates=cfg.eval.n_candidates, check_lift=cfg.eval.check_lift,
                          config_label=cfg.eval.strategy, trace_dir=out / "traces")
    else:
        for gid in cfg.eval.grasp_ids:
            rep = run_eval(agent.nets, cfg.env.domain, gid, cfg.eval.episodes, seed=cfg.io.seed,
                           env_config=env_cfg, workers=cfg.io.workers, check_lift=cfg.eval.check_lift,
                           config_label=f"grasp_{gid:g}", label=f"grasp_{gid:g}", trace_dir=out / "traces")
            report = report.merge(rep)
    report.label = "eval"
    paths = write_report(report, out)
    print(json.dumps(report.summary(), indent=2))
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    from .evaluation import sensitivity_sweep, write_curve_svg

    agent, _ = _load_agent(args.checkpoint)
    out = Path(cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    e = cfg.eval
    kw = dict(base_domain=cfg.env.domain, goal_source=e.grasp_ids[0] if e.grasp_ids else 1.5,
              n_episodes=e.episodes, seed=cfg.io.seed, env_config=cfg.env.to_env_config(), workers=cfg.io.workers)
    if e.noise_sigmas:
        curve = sensitivity_sweep(agent.nets, e.sweep_param, noise_sigmas=e.noise_sigmas, **kw)
    else:
        curve = sensitivity_sweep(agent.nets, e.sweep_param, e.sweep_values, **kw)
    name = f"sweep_{curve.param}"
    (out / f"{name}.json").write_text(json.dumps(curve.as_dict(), indent=2))
    write_curve_svg(curve, out / f"{name}.svg", xlabel=("noise sigma: " if curve.mode == "noise" else "") + curve.param)
    print(json.dumps(curve.as_dict()))
    return EXIT_OK


def cmd_replay(cfg: RunConfig, args: argparse.Namespace) -> int:
    from .evaluation import read_trace, replay_open_loop, write_report

    if not cfg.eval.trace:
        raise ConfigError("eval.trace", "a trace file is required (--trace)")
    trace = read_trace(cfg.eval.trace)
    domain = cfg.env.domain if args.config else None
    report = replay_open_loop(trace, domain)
    out = Path(cfg.io.out_dir)
    write_report(report, out, "replay")
    summary = report.summary()
    summary["recorded_success"] = trace.success
    print(json.dumps(summary, indent=2))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "replay": cmd_replay}


def main(argv: Sequence[str] | None = None) -> int:
    from .evaluation import TraceVersionMismatch, TruncatedTrace, UnknownParameter
    from .sac import CheckpointMismatch, CheckpointVersionError
    from .training import TrainingAborted

    parser = _parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(format_defaults())
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UnknownParameter) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointMismatch, CheckpointVersionError, TraceVersionMismatch, TruncatedTrace, TrainingAborted,
            FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
