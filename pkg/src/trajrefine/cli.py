"""Command-line operator surface.

Subcommands cover the experiment lifecycle: ``pretrain-goal``, ``train``,
``eval``, ``ablate``, and ``plot``.  Every run directory receives an echoed
copy of the merged configuration, a manifest, checkpoints, and metric files.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import __version__
from .config import ExperimentConfig, build_windows, load_config, save_config
from .errors import ConfigurationError, GranularityError, ParseError, UsageError
from .evaluation import append_report_row, evaluate_checkpoint, write_report
from .goal import (GoalPredictor, load_goal_checkpoint, pretrain_goal_heads,
                   pretrain_next_frame, save_goal_checkpoint)
from .refiner import RefinementStack
from .training import NORMALIZATION_SCHEME, load_checkpoint, train_refiner

GL_VARIANTS = [[1], [10], [2, 1], [4, 2, 1], [1, 1, 1, 1], [10, 10, 10, 10], [10, 4, 2, 1]]
FUSION_VARIANTS = ["no_fusion", "pre_fusion", "post_fusion", "weight_shared"]
VELOCITY_VARIANTS = [
    ("no_velocity_augmentation", {"velocity_augmentation": False, "lambda_v": None}),
    ("lambda_v_0", {"velocity_augmentation": True, "lambda_v": 0.0}),
    ("lambda_v_1", {"velocity_augmentation": True, "lambda_v": 1.0}),
    ("lambda_v_10", {"velocity_augmentation": True, "lambda_v": 10.0}),
    ("lambda_v_5", {"velocity_augmentation": True, "lambda_v": 5.0}),
]


def version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"trajrefine-{__version__}+{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"trajrefine-{__version__}"


def prepare_run_dir(cfg: ExperimentConfig, command: str, argv) -> Path:
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")
    manifest = {
        "version": version_string(),
        "command": command,
        "argv": list(argv),
        "seed": cfg.seed,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run_dir


def _write_curve(path: Path, curve, stage: str):
    new = not path.exists()
    with open(path, "a", newline="") as handle:
        writer = csv.writer(handle)
        if new:
            writer.writerow(["stage", "step", "loss"])
        for step, loss in curve:
            writer.writerow([stage, step, repr(loss)])


def cmd_pretrain_goal(cfg: ExperimentConfig, argv, resume=None) -> int:
    run_dir = prepare_run_dir(cfg, "pretrain-goal", argv)
    train_windows, _ = build_windows(cfg.dataset)
    unit = train_windows[0].unit
    normalization = {"scheme": NORMALIZATION_SCHEME, "unit": unit}
    torch.manual_seed(cfg.seed)
    gcfg = cfg.goal_train_config()
    if resume is not None:
        model, payload = load_goal_checkpoint(resume)
        if model.stage == "none":
            raise ConfigurationError(f"{resume} has no completed pretraining stage")
        print(f"resuming from {resume} (stage {model.stage!r})")
    else:
        model = GoalPredictor(cfg.goal_config())
    curves = {}
    if model.stage == "none":
        curves["next_frame"] = pretrain_next_frame(model, train_windows, gcfg)
        save_goal_checkpoint(model, run_dir / "goal_next_frame.pt", gcfg, curves, normalization)
        _write_curve(run_dir / "goal_loss_curves.csv", curves["next_frame"], "next_frame")
    if model.stage == "next_frame":
        curves["goal_heads"] = pretrain_goal_heads(model, train_windows, gcfg)
        save_goal_checkpoint(model, run_dir / "goal_heads.pt", gcfg, curves, normalization)
        _write_curve(run_dir / "goal_loss_curves.csv", curves["goal_heads"], "goal_heads")
    print(f"goal predictor pretrained through stage {model.stage!r} -> {run_dir}")
    return 0


def _load_goal_for_training(cfg: ExperimentConfig, goal_checkpoint):
    path = goal_checkpoint or cfg.goal.checkpoint
    if path is None:
        raise ConfigurationError(
            "training needs a pretrained goal checkpoint: pass --goal-checkpoint "
            "or set goal.checkpoint in the config"
        )
    model, payload = load_goal_checkpoint(path)
    if model.stage != "goal_heads":
        raise ConfigurationError(
            f"goal checkpoint {path} is at stage {model.stage!r}; finish pretraining first"
        )
    return model, str(path)


def cmd_train(cfg: ExperimentConfig, argv, goal_checkpoint=None) -> int:
    rcfg = cfg.refiner_config()  # validates granularity levels before any work
    goal_model, goal_path = _load_goal_for_training(cfg, goal_checkpoint)
    cfg = replace(cfg, goal=replace(cfg.goal, checkpoint=goal_path))
    run_dir = prepare_run_dir(cfg, "train", argv)
    train_windows, _ = build_windows(cfg.dataset)
    torch.manual_seed(cfg.seed)
    stack = RefinementStack(rcfg)
    summary = train_refiner(train_windows, goal_model, stack, cfg.train_config(), run_dir)
    print(f"trained {summary['steps']} steps: loss={summary['final_loss']:.6f} "
          f"ade={summary['final_ade']:.6f} fde={summary['final_fde']:.6f} -> {run_dir}")
    return 0


def cmd_eval(cfg: ExperimentConfig, argv, checkpoint, split: str = "test") -> int:
    if checkpoint is None:
        raise ConfigurationError("eval needs --checkpoint")
    run_dir = prepare_run_dir(cfg, "eval", argv)
    train_windows, test_windows = build_windows(cfg.dataset)
    windows = train_windows if split == "train" else test_windows
    if not windows:
        raise ConfigurationError(f"no windows in the {split!r} split")
    report = evaluate_checkpoint(checkpoint, windows)
    write_report(report, run_dir / "report.json")
    append_report_row(report, run_dir / "reports.csv", label=Path(str(checkpoint)).stem)
    print(f"ade={report.ade:.6f} fde={report.fde:.6f} "
          f"per_stage={['%.4f' % v for v in report.per_stage_ade]} ({report.n_samples} samples)")
    return 0


def _ablation_variants(cfg: ExperimentConfig):
    sweep = cfg.ablation.sweep
    values = cfg.ablation.values
    if sweep == "granularity":
        gls = values if values is not None else GL_VARIANTS
        for gl in gls:
            label = "gl_" + "_".join(str(v) for v in gl)
            yield label, {"refiner": {"granularity_levels": list(gl)}}
    elif sweep == "fusion":
        modes = values if values is not None else FUSION_VARIANTS
        for mode in modes:
            yield f"fusion_{mode}", {"refiner": {"fusion_mode": mode}}
    elif sweep == "velocity":
        rows = VELOCITY_VARIANTS if values is None else [
            (f"lambda_v_{v}", {"velocity_augmentation": True, "lambda_v": float(v)})
            for v in values
        ]
        for label, fieldsmap in rows:
            patch = {"refiner": {"velocity_augmentation": fieldsmap["velocity_augmentation"]}}
            if fieldsmap["lambda_v"] is not None:
                patch["training"] = {"lambda_v": fieldsmap["lambda_v"]}
            yield label, patch
    else:
        raise ConfigurationError(
            f"unknown sweep {sweep!r}; choose granularity, fusion, or velocity"
        )


def _patched(cfg: ExperimentConfig, patch: dict) -> ExperimentConfig:
    out = cfg
    for section, upd in patch.items():
        out = replace(out, **{section: replace(getattr(out, section), **upd)})
    return out


def cmd_ablate(cfg: ExperimentConfig, argv, goal_checkpoint=None) -> int:
    run_dir = prepare_run_dir(cfg, "ablate", argv)
    if goal_checkpoint or cfg.goal.checkpoint:
        goal_path = str(goal_checkpoint or cfg.goal.checkpoint)
        goal_model, _ = load_goal_checkpoint(goal_path)
        if goal_model.stage != "goal_heads":
            raise ConfigurationError(f"goal checkpoint {goal_path} is not fully pretrained")
    else:
        # one shared pretraining for the whole sweep
        train_windows, _ = build_windows(cfg.dataset)
        torch.manual_seed(cfg.seed)
        goal_model = GoalPredictor(cfg.goal_config())
        gcfg = cfg.goal_train_config()
        pretrain_next_frame(goal_model, train_windows, gcfg)
        pretrain_goal_heads(goal_model, train_windows, gcfg)
        goal_path = str(save_goal_checkpoint(
            goal_model, run_dir / "goal_heads.pt", gcfg,
            normalization={"scheme": NORMALIZATION_SCHEME, "unit": train_windows[0].unit}))
    rows = []
    for label, patch in _ablation_variants(cfg):
        variant_dir = run_dir / "variants" / label
        variant = _patched(cfg, patch)
        variant = replace(variant, output_dir=str(variant_dir),
                          goal=replace(variant.goal, checkpoint=goal_path))
        prepare_run_dir(variant, "train", argv)
        variant_windows, _ = build_windows(variant.dataset)
        # same load/seed/init order as cmd_train so echoed configs reproduce rows
        goal_for_run, _ = load_goal_checkpoint(goal_path)
        torch.manual_seed(variant.seed)
        stack = RefinementStack(variant.refiner_config())
        train_refiner(variant_windows, goal_for_run, stack, variant.train_config(), variant_dir)
        report = evaluate_checkpoint(variant_dir / "checkpoint.pt", variant_windows)
        write_report(report, variant_dir / "report.json")
        rows.append((label, report.ade, report.fde))
        print(f"  {label}: ade={report.ade:.6f} fde={report.fde:.6f}")
    table = run_dir / "ablation.csv"
    with open(table, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variant", "ade", "fde"])
        for label, ade_v, fde_v in rows:
            writer.writerow([label, repr(ade_v), repr(fde_v)])
    print(f"{len(rows)} variants -> {table}")
    return 0


def cmd_plot(cfg: ExperimentConfig, argv, checkpoint, samples=None) -> int:
    from .plots import render_predictions  # matplotlib import deferred to use

    if checkpoint is None:
        raise ConfigurationError("plot needs --checkpoint")
    run_dir = prepare_run_dir(cfg, "plot", argv)
    _, test_windows = build_windows(cfg.dataset)
    goal_model, stack, _ = load_checkpoint(checkpoint)
    n = samples if samples is not None else cfg.plot.samples
    if n > len(test_windows):
        print(f"warning: only {len(test_windows)} samples available, requested {n}",
              file=sys.stderr)
        n = len(test_windows)
    paths = render_predictions(goal_model, stack, test_windows, run_dir / "plots",
                               samples=n, dpi=cfg.plot.dpi)
    print(f"wrote {len(paths)} plot(s) -> {run_dir / 'plots'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajrefine",
        description="Goal-guided multimodal trajectory forecasting with granular refinement.",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--preset", default=None, help="named profile (desk, desk_ablate, paper)")
        p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        p.add_argument("--out", type=Path, default=None, help="override the output directory")
        p.add_argument("--set", dest="sets", action="append", default=[],
                       metavar="SECTION.FIELD=VALUE", help="config override, repeatable")

    p = sub.add_parser("pretrain-goal", help="run both goal-predictor pretraining stages")
    common(p)
    p.add_argument("--resume", type=Path, default=None,
                   help="stage checkpoint to resume from (skips completed stages)")

    p = sub.add_parser("train", help="train the refinement stack under a frozen goal predictor")
    common(p)
    p.add_argument("--goal-checkpoint", type=Path, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("ablate", help="run a variant sweep and aggregate the results")
    common(p)
    p.add_argument("--sweep", choices=("granularity", "fusion", "velocity"), default=None)
    p.add_argument("--goal-checkpoint", type=Path, default=None)

    p = sub.add_parser("plot", help="render prediction plots from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--samples", type=int, default=None)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.preset, args.sets)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    if getattr(args, "sweep", None):
        cfg = replace(cfg, ablation=replace(cfg.ablation, sweep=args.sweep))
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "pretrain-goal":
            return cmd_pretrain_goal(cfg, argv, resume=args.resume)
        if args.command == "train":
            return cmd_train(cfg, argv, goal_checkpoint=args.goal_checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, argv, checkpoint=args.checkpoint, split=args.split)
        if args.command == "ablate":
            return cmd_ablate(cfg, argv, goal_checkpoint=args.goal_checkpoint)
        if args.command == "plot":
            return cmd_plot(cfg, argv, checkpoint=args.checkpoint, samples=args.samples)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, ParseError, GranularityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
