"""Command-line entry points: synth, train, eval, refine, plot.

Option resolution order is flags > config file (--config JSON) > environment
(DYADIC_<OPTION>) > defaults, and every subcommand echoes its fully resolved
options into the output directory so results stay reproducible from the
output alone.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from . import refine as refinemod
from .predictor import (VARIANTS, ModelConfig, build_model, restore_model,
                        save_checkpoint)
from .skeleton import Skeleton
from .training import TrainConfig, TrainingDivergedError, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _resolve(args, spec: dict) -> dict:
    """Apply the flags > file > environment > defaults chain for every
    option named in spec: {option: (cast, default)}."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_cfg = json.load(f)
    resolved = {}
    for key, (cast, default) in spec.items():
        value = getattr(args, key, None)
        if value is None and key in file_cfg:
            value = cast(file_cfg[key])
        if value is None:
            env = os.environ.get(f"DYADIC_{key.upper()}")
            if env is not None:
                value = cast(env)
        resolved[key] = default if value is None else value
    return resolved


def _echo_config(out_dir: Path, command: str, opts: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command}
    payload.update({k: (str(v) if isinstance(v, Path) else v)
                    for k, v in opts.items()})
    with open(out_dir / "config.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# -- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = {
        "sequences": (int, 4),
        "length": (int, 300),
        "mode": (str, "lag"),
        "seed": (int, 0),
        "noise": (float, 0.0),
        "lag_frames": (int, 15),
        "burst_rate": (float, 0.0),
        "file_format": (str, "csv"),
        "splits": (str, ""),
    }
    opts = _resolve(args, spec)
    out_dir = Path(args.out)
    cfg = datamod.SyntheticDyadConfig(
        coupling=opts["mode"], lag_frames=opts["lag_frames"],
        noise_mm=opts["noise"], burst_rate=opts["burst_rate"])
    pairs = datamod.generate_synthetic(cfg, opts["sequences"], opts["length"],
                                       opts["seed"])
    if opts["splits"]:
        splits = opts["splits"].split(",")
        if len(splits) != len(pairs):
            raise ValueError(
                f"{len(splits)} split tags for {len(pairs)} sequences")
    else:
        splits = ["train"] * len(pairs)
        if len(pairs) >= 3:
            splits[-2], splits[-1] = "validation", "test"
        elif len(pairs) == 2:
            splits[-1] = "validation"
    datamod.save_dataset(out_dir, pairs, splits=splits,
                         file_format=opts["file_format"])
    _echo_config(out_dir, "synth", opts)
    print(f"wrote {len(pairs)} dyad sequences to {out_dir}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------

def _model_config_from(opts, dim: int) -> ModelConfig:
    return ModelConfig(
        past_len=opts["past_len"], window_len=opts["window_len"],
        future_len=opts["future_len"], joint_count=dim // 3,
        latent_dim=opts["latent_dim"], hidden=opts["hidden"],
        residual_blocks=opts["blocks"], variant=opts["variant"])


_TRAIN_SPEC = {
    "variant": (str, "full"),
    "epochs": (int, 500),
    "learning_rate": (float, 5e-4),
    "batch_size": (int, 32),
    "seed": (int, 0),
    "max_steps": (int, None),
    "stride": (int, 1),
    "past_len": (int, 60),
    "window_len": (int, 10),
    "future_len": (int, 30),
    "latent_dim": (int, 256),
    "hidden": (int, 256),
    "blocks": (int, 12),
}


def cmd_train(args) -> int:
    opts = _resolve(args, _TRAIN_SPEC)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = datamod.load_dataset(args.data)
    groups = datamod.split_samples(dataset, opts["past_len"], opts["future_len"],
                                   opts["stride"])
    if not groups["train"]:
        raise ValueError("dataset has no training windows")
    val = groups["validation"] or groups["train"][-1:]

    dim = dataset[0][1].dim
    start_epoch = 0
    if args.resume:
        model, extra = restore_model(args.resume)
        start_epoch = int(extra.get("epoch", -1)) + 1
        if model.config.variant != opts["variant"]:
            raise ValueError(
                f"checkpoint variant {model.config.variant} != {opts['variant']}")
    else:
        model = build_model(_model_config_from(opts, dim), seed=opts["seed"])

    train_cfg = TrainConfig(
        learning_rate=opts["learning_rate"], batch_size=opts["batch_size"],
        epochs=opts["epochs"], seed=opts["seed"], max_steps=opts["max_steps"],
        log_path=str(out_dir / "metrics.jsonl"))
    result = train(model, groups["train"], val, train_cfg,
                   start_epoch=start_epoch, quiet=False)
    save_checkpoint(out_dir / "checkpoint.dyck", model,
                    extra={"epoch": result.history[-1]["epoch"],
                           "best_epoch": result.best_epoch,
                           "best_val_mpjpe": result.best_val_mpjpe,
                           "steps": result.steps})
    _echo_config(out_dir, "train", opts)
    print(f"best validation MPJPE {result.best_val_mpjpe:.2f} mm "
          f"(epoch {result.best_epoch})")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------

def cmd_eval(args) -> int:
    spec = {"split": (str, "test"), "stride": (int, 1)}
    opts = _resolve(args, spec)
    out_dir = Path(args.out)
    model, _ = restore_model(args.checkpoint)
    dataset = datamod.load_dataset(args.data)
    groups = datamod.split_samples(dataset, model.config.past_len,
                                   model.config.future_len, opts["stride"])
    samples = groups.get(opts["split"], [])
    if not samples:
        raise ValueError(f"no {opts['split']} windows in {args.data}")
    table = evaluate(model, samples,
                     label=f"Ours-{model.config.variant}")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval_table.csv", "w") as f:
        f.write(table.to_csv())
    with open(out_dir / "eval_per_frame.json", "w") as f:
        json.dump({"per_frame_mm": table.per_frame_mm.tolist(),
                   "num_windows": table.num_windows}, f)
    _echo_config(out_dir, "eval", {**opts, "checkpoint": str(args.checkpoint)})
    print(table.to_csv(), end="")
    return EXIT_OK


# -- refine ----------------------------------------------------------------------

def cmd_refine(args) -> int:
    spec = {
        "threshold": (float, 0.3),
        "spline_window": (int, 30),
        "w_limb": (float, 1.0),
        "w_foot": (float, 0.1),
        "w_shape": (float, 0.1),
        "w_anchor": (float, 0.01),
        "max_iterations": (int, 400),
    }
    opts = _resolve(args, spec)
    out_dir = Path(args.out)
    rig = refinemod.read_cameras(args.cameras)
    det_dir = Path(args.detections)
    det_files = sorted(det_dir.glob("view*.csv"))
    if len(det_files) != len(rig):
        raise ValueError(
            f"{len(det_files)} detection files for {len(rig)} cameras")
    views = [refinemod.read_detections(p) for p in det_files]
    cfg = refinemod.RefineConfig(
        confidence_threshold=opts["threshold"],
        spline_window=opts["spline_window"], w_limb=opts["w_limb"],
        w_foot=opts["w_foot"], w_shape=opts["w_shape"],
        w_anchor=opts["w_anchor"], max_iterations=opts["max_iterations"])
    skeleton = Skeleton(joint_count=views[0].uv.shape[1]) \
        if views[0].uv.shape[1] == 19 else Skeleton()
    poses, report = refinemod.run_pipeline(views, rig, skeleton, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    datamod.write_pose_file(out_dir / "refined_poses.csv", poses)
    with open(out_dir / "report.json", "w") as f:
        json.dump({
            "mean_reprojection_px": report.mean_reprojection_px,
            "missing_fraction": report.missing_fraction,
            "limb_std_triangulated_mm": report.limb_std_triangulated,
            "limb_std_refined_mm": report.limb_std_refined,
            "objective_first": report.optimize.objective_history[0],
            "objective_last": report.optimize.objective_history[-1],
            "iterations": report.optimize.iterations,
            "converged": report.optimize.converged,
        }, f, indent=2)
    _echo_config(out_dir, "refine", opts)
    print(f"refined {poses.shape[0]} frames; limb std "
          f"{report.limb_std_triangulated:.2f} -> {report.limb_std_refined:.2f} mm")
    return EXIT_OK


# -- plot ------------------------------------------------------------------------

def cmd_plot(args) -> int:
    spec = {"horizons": (str, "100,200,300,400,500,600,700,800,900,1000"),
            "frame_rate": (float, 30.0)}
    opts = _resolve(args, spec)
    target = datamod.read_pose_file(args.sample)
    pred = datamod.read_pose_file(args.prediction)
    if target.shape[1] != pred.shape[1]:
        raise ValueError(
            f"skeleton mismatch: sample K={target.shape[1]}, "
            f"prediction K={pred.shape[1]}")
    if target.shape[1] % 3:
        raise ValueError(f"K={target.shape[1]} not divisible by 3")
    horizons = [int(h) for h in opts["horizons"].split(",")]
    frames = [int(round(h * opts["frame_rate"] / 1000.0)) for h in horizons]
    if max(frames) > pred.shape[0] or max(frames) > target.shape[0]:
        raise ValueError(
            f"horizon frame {max(frames)} beyond available "
            f"{min(pred.shape[0], target.shape[0])} frames")
    gt = target[-pred.shape[0]:] if target.shape[0] > pred.shape[0] else target

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    joint_count = pred.shape[1] // 3
    limbs = Skeleton().limbs if joint_count == 19 else ()
    fig, axes = plt.subplots(1, len(frames), figsize=(1.6 * len(frames), 3.2))
    if len(frames) == 1:
        axes = [axes]
    for ax, ms, fr in zip(axes, horizons, frames):
        for poses, color in ((gt, "black"), (pred, "tab:red")):
            joints = poses[fr - 1].reshape(joint_count, 3)
            for a, b in limbs:
                ax.plot([joints[a, 0], joints[b, 0]],
                        [joints[a, 2], joints[b, 2]], color=color, lw=1.2)
            if not limbs:
                ax.scatter(joints[:, 0], joints[:, 2], s=4, c=color)
        ax.set_title(str(ms), fontsize=9)
        ax.set_aspect("equal")
        ax.axis("off")
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    _echo_config(out.parent, "plot", {**opts, "out": str(out)})
    print(f"wrote {out}")
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="dyadic-motion",
                     description="Dyadic motion prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dyad dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--sequences", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--mode", choices=["mirror", "lag", "offset"])
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--lag-frames", dest="lag_frames", type=int)
    p.add_argument("--burst-rate", dest="burst_rate", type=float)
    p.add_argument("--format", dest="file_format", choices=["csv", "bin"])
    p.add_argument("--splits", help="comma-separated split tag per sequence")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a predictor variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--past-len", dest="past_len", type=int)
    p.add_argument("--window-len", dest="window_len", type=int)
    p.add_argument("--future-len", dest="future_len", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("refine", help="run the 3D refinement pipeline")
    p.add_argument("--cameras", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--threshold", type=float)
    p.add_argument("--spline-window", dest="spline_window", type=int)
    p.add_argument("--w-limb", dest="w_limb", type=float)
    p.add_argument("--w-foot", dest="w_foot", type=float)
    p.add_argument("--w-shape", dest="w_shape", type=float)
    p.add_argument("--w-anchor", dest="w_anchor", type=float)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("plot", help="render a prediction strip image")
    p.add_argument("--sample", required=True)
    p.add_argument("--prediction", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--horizons")
    p.add_argument("--frame-rate", dest="frame_rate", type=float)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except TrainingDivergedError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ValueError, OSError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
