"""Command line entry point for the whole pipeline.

Every subcommand takes `--config <json>` plus `--set a.b=value` dot-path
overrides and an optional `--seed`; with a fixed seed and identical inputs a
rerun reproduces its outputs byte for byte. Exit codes: 0 success, 1 runtime
fault, 2 usage. Logs go to stderr, data to files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .env import EnvConfig, VecEnv
from .eval import TrajectoryPair, evaluate_pair, evaluate_policy, format_summary, write_report
from .lfd import (
    BcConfig,
    DiffusionConfig,
    PointReachTask,
    closed_loop_success,
    load_demos,
    load_lfd,
    record_demo,
    run_ablation,
    save_demos,
    save_lfd,
    train_bc,
    train_diffusion,
)
from .model import (
    HumanoidModel,
    load_model,
    mini_biped_model,
    reference_config,
    toy_arm_model,
)
from .motion import (
    FilterThresholds,
    IkConfig,
    filter_infeasible,
    load_clip,
    load_source,
    make_stable_variant,
    retarget,
    save_clip,
)
from .net import load_policy, save_mlp
from .obs import obs_schema
from .randomize import RandomizationRanges
from .reward import RewardWeights
from .teleop import TeleopConfig, TeleopService
from .train import (
    DistillConfig,
    PpoConfig,
    VelEstConfig,
    collect_velocity_dataset,
    distill_student,
    train_teacher,
    train_velocity_estimator,
)

BUILTIN_MODELS = {
    "reference": reference_config,
    "toy_arm": toy_arm_model,
    "mini_biped": mini_biped_model,
}

# appendix dimension contract: (label, variant, history steps, expected total)
DIM_CHECKS = [
    ("privileged", "privileged", 25, 913),
    ("h2o", "h2o", 25, 138),
    ("points3 history-25", "points3", 25, 1665),
    ("points3 history-0", "points3", 0, 90),
    ("points3 history-5", "points3", 5, 405),
    ("points3 history-50", "points3", 50, 3240),
    ("points22 history-25", "points22", 25, 1836),
    ("points8 history-25", "points8", 25, 1710),
    ("w-linvel history-25", "w-linvel", 25, 1743),
]


# ---- config plumbing ----


@dataclass
class RunConfig:
    """One experiment bundle: seed, model, data and per-module sections."""

    seed: int = 0
    model: str = "reference"
    dataset: list = field(default_factory=list)
    out_dir: str = "runs"
    ppo: dict = field(default_factory=dict)
    distill: dict = field(default_factory=dict)
    velest: dict = field(default_factory=dict)
    dr: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    lfd: dict = field(default_factory=dict)
    teleop: dict = field(default_factory=dict)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text   # bare strings allowed without quotes


def apply_override(data: dict, spec: str) -> None:
    """Applies one `a.b.c=value` override onto nested dicts in place."""
    key, sep, value = spec.partition("=")
    if not sep or not key:
        raise ValueError(f"override must look like path=value, got {spec!r}")
    parts = key.split(".")
    cursor = data
    for p in parts[:-1]:
        cursor = cursor.setdefault(p, {})
        if not isinstance(cursor, dict):
            raise ValueError(f"override path {key!r} crosses a non-section value")
    cursor[parts[-1]] = _parse_value(value)


def build_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    for spec in getattr(args, "set", None) or []:
        apply_override(data, spec)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**data)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "model", None):
        cfg.model = args.model
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _section(cls, data: dict, **extra):
    """Builds a config dataclass from a config section, rejecting typos."""
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = {**data, **extra}
    for k, v in merged.items():
        if isinstance(v, list):   # JSON has no tuples; ranges and layer widths use them
            merged[k] = tuple(v)
    return cls(**merged)


def resolve_model(spec: str) -> HumanoidModel:
    if spec in BUILTIN_MODELS:
        return BUILTIN_MODELS[spec]()
    path = Path(spec)
    if path.exists():
        return load_model(path)
    raise ValueError(f"model {spec!r} is neither builtin {sorted(BUILTIN_MODELS)} nor a file")


def load_clips(paths) -> list:
    clips = []
    for p in map(Path, paths):
        if p.is_dir():
            clips += [load_clip(f) for f in sorted(p.iterdir()) if f.is_file()]
        else:
            clips.append(load_clip(p))
    if not clips:
        raise ValueError("no clips found")
    return clips


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---- subcommands ----


def cmd_check_dims(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    bad = 0
    for label, variant, hist, expected in DIM_CHECKS:
        total = obs_schema(model, variant, hist).total
        mark = "ok" if total == expected else f"MISMATCH (expected {expected})"
        print(f"{label:22s} {total:5d}  {mark}")
        bad += total != expected
    return 1 if bad else 0


def cmd_retarget(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    source = load_source(args.source)
    clip = retarget(model, source, IkConfig())
    clip.name = args.name or Path(args.source).stem
    save_clip(clip, args.out_file)
    flagged = int(clip.flags.sum())
    _log(f"retargeted {clip.length} frames ({flagged} flagged) -> {args.out_file}")
    return 0


def cmd_augment(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    clip = load_clip(args.clip)
    variant = make_stable_variant(clip, model, lower=args.lower)
    save_clip(variant, args.out_file)
    _log(f"wrote stable variant {variant.name!r} -> {args.out_file}")
    return 0


def cmd_filter(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    clip = load_clip(args.clip)
    kept, reasons = filter_infeasible(clip, model, FilterThresholds())
    verdict = {"clip": str(args.clip), "kept": kept, "reasons": reasons}
    print(json.dumps(verdict))
    if args.report:
        Path(args.report).write_text(json.dumps(verdict) + "\n")
    return 0


def _make_vec(model, clips, cfg: RunConfig, variant: str, n_envs: int,
              history_steps: int = 25, no_dr: bool = False) -> VecEnv:
    dr = RandomizationRanges.none() if no_dr else _section(RandomizationRanges, cfg.dr)
    env_cfg = EnvConfig(
        variant=variant,
        history_steps=history_steps,
        reward_weights=_section(RewardWeights, cfg.reward),
        randomization=dr,
    )
    return VecEnv.make(model, clips, env_cfg, n_envs=n_envs, seed=cfg.seed)


def cmd_train_teacher(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    clips = load_clips(args.clips or cfg.dataset)
    ppo = _section(PpoConfig, cfg.ppo, seed=cfg.seed)
    vec = _make_vec(model, clips, cfg, "privileged", ppo.n_envs, no_dr=args.no_dr)
    out = _out_dir(cfg)
    result = train_teacher(vec, ppo, checkpoint_path=out / "teacher.bin",
                           log_path=out / "teacher_log.csv")
    last = result.rows[-1]
    _log(f"teacher: {len(result.rows)} iterations, reward_mean {last['reward_mean']:.2f},"
         f" episode_len {last['episode_len']:.1f} -> {out / 'teacher.bin'}")
    return 0


def cmd_distill(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    clips = load_clips(args.clips or cfg.dataset)
    teacher, meta = load_policy(args.teacher)
    if meta.get("model_hash") not in (None, model.hash()):
        raise ValueError("teacher checkpoint was built for a different model")
    dcfg = _section(DistillConfig, cfg.distill, seed=cfg.seed)
    vec = _make_vec(model, clips, cfg, dcfg.variant, args.envs,
                    history_steps=dcfg.history_steps, no_dr=args.no_dr)
    out = _out_dir(cfg)
    result = distill_student(teacher, vec, dcfg, checkpoint_path=out / "student.bin",
                             log_path=out / "distill_log.csv")
    first, last = result.rows[0], result.rows[-1]
    _log(f"distill: action MSE {first['action_mse']:.3e} -> {last['action_mse']:.3e},"
         f" checkpoint {out / 'student.bin'}")
    return 0


def cmd_train_velest(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    clips = load_clips(args.clips or cfg.dataset)
    vcfg = _section(VelEstConfig, cfg.velest, seed=cfg.seed)
    policy = None
    if args.policy:
        policy, _ = load_policy(args.policy)
    vec = _make_vec(model, clips, cfg, "points3", n_envs=4,
                    history_steps=vcfg.history_steps)
    rng = np.random.default_rng(cfg.seed)
    X, Y = collect_velocity_dataset(vec, policy, steps=args.steps,
                                    history_steps=vcfg.history_steps, rng=rng)
    net, report = train_velocity_estimator(X, Y, vcfg)
    out = _out_dir(cfg)
    save_mlp(out / "velest.bin", net, {"history_steps": vcfg.history_steps,
                                       "model_hash": model.hash()})
    summary = {k: report[k] for k in ("mse", "variance", "n_train", "n_holdout")}
    (out / "velest_report.json").write_text(json.dumps(summary, indent=2) + "\n")
    _log(f"velocity estimator: held-out mse {report['mse']:.5f}"
         f" vs variance {report['variance']:.5f} -> {out / 'velest.bin'}")
    return 0


def _load_pair(path: Path) -> TrajectoryPair:
    data = np.load(path)
    return TrajectoryPair(
        sim_pos=data["sim_pos"], ref_pos=data["ref_pos"],
        root_index=int(data["root_index"]) if "root_index" in data else 0,
        fps=float(data["fps"]) if "fps" in data else 50.0,
        name=path.stem,
    )


def cmd_eval(args) -> int:
    cfg = build_config(args)
    out = _out_dir(cfg)
    if args.pairs:
        pair_dir = Path(args.pairs)
        files = sorted(p for p in pair_dir.iterdir() if p.suffix == ".npz")
        if not files:
            raise ValueError(f"no .npz trajectory pairs in {pair_dir}")
        reports = [evaluate_pair(_load_pair(p), threshold=args.threshold) for p in files]
    else:
        if not args.policy:
            raise ValueError("eval needs --pairs or --policy")
        model = resolve_model(cfg.model)
        clips = load_clips(args.clips or cfg.dataset)
        policy, meta = load_policy(args.policy)
        env_cfg = EnvConfig(variant=meta.get("variant", "privileged"),
                            history_steps=meta.get("history_steps", 25),
                            randomization=RandomizationRanges.none())
        reports, _ = evaluate_policy(model, clips, policy, env_cfg,
                                     seed=cfg.seed, threshold=args.threshold)
    write_report(reports, out / "eval_report.csv", out / "eval_report.json")
    print(format_summary(reports))
    return 0


def cmd_record_demo(args) -> int:
    cfg = build_config(args)
    if args.task != "point-reach":
        raise ValueError(f"unknown task {args.task!r}")
    task = PointReachTask()
    rng = np.random.default_rng(cfg.seed)
    if args.minutes is not None:
        data = record_demo(task, minutes=args.minutes, rng=rng)
    else:
        data = record_demo(task, episodes=args.episodes, rng=rng)
    save_demos(data, args.out_file)
    _log(f"recorded {len(data.episodes)} episodes / {data.n_frames} frames"
         f" -> {args.out_file}")
    return 0


def cmd_train_lfd(args) -> int:
    cfg = build_config(args)
    demos = load_demos(args.demos)
    if args.method == "bc":
        bcfg = _section(BcConfig, cfg.lfd, seed=cfg.seed)
        policy, report = train_bc(demos, bcfg)
        _log(f"bc: held-out action mse {report['mse']:.3e}")
    else:
        dcfg = _section(DiffusionConfig, cfg.lfd, seed=cfg.seed, sampler=args.method)
        policy, rows = train_diffusion(demos, dcfg)
        _log(f"{args.method}: final denoising loss {rows[-1]['loss']:.4f}")
    save_lfd(args.out_file, policy)
    _log(f"wrote {args.out_file}")
    return 0


def cmd_eval_lfd(args) -> int:
    cfg = build_config(args)
    rng = np.random.default_rng(cfg.seed)
    if args.ablation:
        if not args.demos:
            raise ValueError("--ablation needs --demos")
        demos = load_demos(args.demos)
        out = _out_dir(cfg)
        rows = run_ablation(demos, seed=cfg.seed, csv_path=out / "lfd_ablation.csv")
        _log(f"wrote {len(rows)} ablation rows -> {out / 'lfd_ablation.csv'}")
        return 0
    policy = load_lfd(args.policy)
    rate = closed_loop_success(PointReachTask(), policy, runs=args.runs, rng=rng,
                               replan=args.replan)
    print(json.dumps({"task": "point-reach", "runs": args.runs, "success_rate": rate}))
    return 0


def cmd_serve_teleop(args) -> int:
    cfg = build_config(args)
    model = resolve_model(cfg.model)
    flags = {"host": args.host, "port": args.port, "tick_hz": args.hz}
    tcfg = _section(TeleopConfig, cfg.teleop,
                    **{k: v for k, v in flags.items() if v is not None})
    service = TeleopService.from_checkpoint(args.checkpoint, model, tcfg)
    _log(f"serving teleop for model '{model.name}' from {args.checkpoint}")
    service.serve_forever()
    return 0


# ---- parser ----


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--set", action="append", metavar="PATH=VALUE",
                   help="dot-path config override, repeatable")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--model", help="builtin model name or model file")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marionette",
        description="Humanoid motion imitation: retargeting, RL tracking policies,"
                    " distillation, LfD and live teleoperation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-dims", help="verify observation dimension contract")
    _add_common(p)
    p.set_defaults(func=cmd_check_dims)

    p = sub.add_parser("retarget", help="IK-retarget a source keypoint track")
    _add_common(p)
    p.add_argument("--source", required=True, help="source keypoint track file")
    p.add_argument("--out-file", required=True)
    p.add_argument("--name", help="clip name (default: source stem)")
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("augment", help="write the lowered stable variant of a clip")
    _add_common(p)
    p.add_argument("--clip", required=True)
    p.add_argument("--out-file", required=True)
    p.add_argument("--lower", default="standing", choices=("standing", "squatting"))
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("filter", help="report clip feasibility")
    _add_common(p)
    p.add_argument("--clip", required=True)
    p.add_argument("--report", help="write the verdict JSON here too")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train-teacher", help="PPO teacher on privileged observations")
    _add_common(p)
    p.add_argument("--clips", nargs="*", help="clip files or directories")
    p.add_argument("--no-dr", action="store_true", help="disable domain randomization")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="DAgger-distill a sparse-goal student")
    _add_common(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--clips", nargs="*")
    p.add_argument("--no-dr", action="store_true")
    p.add_argument("--envs", type=int, default=4)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train-velest", help="train the root velocity estimator")
    _add_common(p)
    p.add_argument("--clips", nargs="*")
    p.add_argument("--policy", help="rollout policy checkpoint (default: zero actions)")
    p.add_argument("--steps", type=int, default=200, help="rollout steps per env")
    p.set_defaults(func=cmd_train_velest)

    p = sub.add_parser("eval", help="tracking metrics for a policy or saved pairs")
    _add_common(p)
    p.add_argument("--pairs", help="directory of .npz trajectory pairs")
    p.add_argument("--policy", help="policy checkpoint to roll out")
    p.add_argument("--clips", nargs="*")
    p.add_argument("--threshold", type=float, default=0.5, help="Succ deviation bound, m")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("record-demo", help="record scripted demonstrations")
    _add_common(p)
    p.add_argument("--task", default="point-reach")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--minutes", type=float, help="record by duration instead")
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_record_demo)

    p = sub.add_parser("train-lfd", help="train BC or diffusion policy on demos")
    _add_common(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--method", default="ddpm", choices=("bc", "ddpm", "ddim"))
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_train_lfd)

    p = sub.add_parser("eval-lfd", help="closed-loop success or ablation grid")
    _add_common(p)
    p.add_argument("--policy", help="lfd checkpoint")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--replan", type=int, default=8)
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--demos", help="demo file for --ablation")
    p.set_defaults(func=cmd_eval_lfd)

    p = sub.add_parser("serve-teleop", help="serve a student checkpoint over WebSocket")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int)
    p.add_argument("--hz", type=float)
    p.add_argument("--host")
    p.set_defaults(func=cmd_serve_teleop)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:   # argparse already printed usage
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
