"""Command-line entry point.

Exit status: 0 success, 2 bad configuration (unknown key or bad value),
3 missing checkpoint, data or demonstration, 1 anything else.
Every command writes the effective configuration as ``config.ini`` next to
its outputs. ``SKILLEMB_OUTPUT_ROOT`` sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig

log = logging.getLogger("skillemb")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


class MissingInputError(FileNotFoundError):
    pass


def _output_root() -> Path:
    return Path(os.environ.get("SKILLEMB_OUTPUT_ROOT", "runs"))


def _load_config(args) -> ExperimentConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInputError(f"config file {path} does not exist")
        cfg = ExperimentConfig.load(path)
    else:
        cfg = ExperimentConfig()
    return cfg.apply_overrides(args.set)


def _freeze(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.ini"
    cfg.save(path)
    return path


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"{what} {p} does not exist")
    return p


def _load_split(root, split, required=True):
    from . import dataio

    split_dir = Path(root) / split
    if not split_dir.is_dir():
        if required:
            raise MissingInputError(f"data split {split_dir} does not exist")
        return None
    return dataio.load_dataset(root, split)


def _load_demo(path):
    from . import dataio

    p = _require(path, "demonstration")
    return dataio.load_demonstration(p, p.parent.name)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args, cfg):
    from . import dataio

    out = Path(args.out) if args.out else _output_root() / "data"
    splits = dataio.generate_splits(cfg.dataio, cfg.experiment.seed)
    for ds in splits.values():
        dataio.save_dataset(ds, out)
    _freeze(cfg, out)
    print(json.dumps({split: len(ds) for split, ds in splits.items()}))
    return EXIT_OK


def cmd_train(args, cfg):
    from . import trainer

    data = _require(args.data, "data directory")
    out = Path(args.out) if args.out else _output_root() / "train"
    train = _load_split(data, "train").select_tasks(cfg.dataio.train_tasks)
    if len(train) == 0:
        raise MissingInputError(f"no training demonstrations for tasks {cfg.dataio.train_tasks} in {data}")
    val = _load_split(data, "validation", required=False)
    if val is not None:
        val = val.select_tasks(cfg.dataio.train_tasks)
    _freeze(cfg, out)
    result = trainer.fit(cfg, train, val, out_dir=out)
    summary = {"steps": result["step"], "best_val_alignment": result["best_val_alignment"],
               "checkpoint": str(out / "last.pt")}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval_align(args, cfg):
    from . import evaluation, trainer

    ckpt = _require(args.checkpoint, "checkpoint")
    data = _require(args.data, "data directory")
    payload = trainer.load_checkpoint(ckpt)
    dataset = _load_split(data, args.split)
    tasks = [t for t in args.tasks.split(",") if t] if args.tasks else None
    report = evaluation.evaluate_transfer(payload, dataset, tasks)
    out = Path(args.out) if args.out else ckpt.parent / "eval"
    report.write(out / "alignment.jsonl")
    _freeze(ExperimentConfig.from_dict(payload["config"]).apply_overrides(args.set), out)
    print(report.summary())
    return EXIT_OK


def cmd_plot_tsne(args, cfg):
    from . import evaluation

    ckpt = _require(args.checkpoint, "checkpoint")
    demo = _load_demo(args.demo)
    out = Path(args.out) if args.out else ckpt.parent / "plots" / f"tsne_{demo.demo_id}.png"
    pts = evaluation.emit_trajectory_plot(ckpt, demo, out, view=args.view,
                                          perplexity=cfg.evaluation.tsne_perplexity,
                                          seed=cfg.evaluation.tsne_seed)
    np.savetxt(out.with_suffix(".csv"), pts, delimiter=",", header="x,y", comments="")
    _freeze(cfg, out.parent)
    print(out)
    return EXIT_OK


def cmd_plot_reward(args, cfg):
    from . import evaluation

    ckpt = _require(args.checkpoint, "checkpoint")
    demo = _load_demo(args.demo)
    out = Path(args.out) if args.out else ckpt.parent / "plots" / f"reward_{demo.demo_id}.png"
    series = evaluation.emit_reward_curve(ckpt, demo, args.goal_frame, out, view=args.view,
                                          goal_view=1 - args.view)
    out.with_suffix(".json").write_text(json.dumps({"demo_id": demo.demo_id,
                                                    "series": [float(x) for x in series]}))
    _freeze(cfg, out.parent)
    print(out)
    return EXIT_OK


def cmd_rl_train(args, cfg):
    import torch

    from . import rl, trainer
    from .encoder import Encoder

    if args.env != "toy":
        raise ConfigError(f"unknown environment {args.env!r}", "env")
    demo = _load_demo(args.demo)
    if args.reward == "random":
        torch.manual_seed(cfg.experiment.seed)
        encoder = Encoder(cfg.encoder).eval()
    else:
        encoder = trainer.encoder_from_checkpoint(_require(args.checkpoint, "checkpoint"))
    rcfg = cfg.rl
    if args.reward in ("embedding", "random"):
        reward = rl.EmbeddingReward(encoder, demo, rcfg.agent_view, rcfg.demo_view,
                                    rcfg.xi_reward, rcfg.xi_percentile, rcfg.bonus)
    elif args.reward == "oracle":
        reward = rl.OracleReward(demo, rcfg.bonus, rcfg.terminate_distance)
    else:
        reward = rl.ZeroReward()
    out = Path(args.out) if args.out else _output_root() / "rl"
    _freeze(cfg, out)
    result = rl.ppo_train(demo, encoder, reward, rcfg, seed=cfg.experiment.seed,
                          max_speed=cfg.dataio.max_speed, out_dir=out)
    tau, p = rl.mann_kendall(result.curve)
    summary = {"final_distance": result.final_distance, "goal_reached": result.goal_reached,
               "trend_tau": tau, "trend_p": p,
               "xi_reward": getattr(getattr(reward, "spec", None), "xi_reward", None)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    _plot_curve(result.curve, out / "learning_curve.png")
    torch.save({"policy": result.policy.state_dict(), "obs_mean": result.normalizer.mean,
                "obs_var": result.normalizer.var}, out / "policy.pt")
    print(json.dumps(summary))
    return EXIT_OK


def _plot_curve(curve, path):
    from .evaluation import _plt

    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(np.arange(len(curve)), curve)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean return")
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="skillemb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="generate the synthetic dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", parents=[common], help="train an embedding")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-align", parents=[common], help="alignment of held-out view pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tasks", default="", help="comma-separated task names (default: all)")
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_align)

    p = sub.add_parser("plot-tsne", parents=[common], help="t-SNE of one demonstration")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demo", required=True, help="demonstration directory")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_tsne)

    p = sub.add_parser("plot-reward", parents=[common], help="reward curve against a goal frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demo", required=True, help="demonstration directory")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--goal-frame", type=int, default=None,
                   help="goal frame index in the other view (default: last)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_reward)

    p = sub.add_parser("rl-train", parents=[common], help="PPO with an embedding reward")
    p.add_argument("--checkpoint")
    p.add_argument("--demo", required=True, help="demonstration directory")
    p.add_argument("--env", default="toy")
    p.add_argument("--reward", choices=("embedding", "random", "oracle", "zero"), default="embedding")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rl_train)
    return parser


def main(argv=None) -> int:
    from . import dataio, trainer

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if args.command == "rl-train" and args.reward in ("embedding", "oracle") and not args.checkpoint:
            raise MissingInputError("rl-train needs --checkpoint for this reward")
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: configuration key {exc.key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError, dataio.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except trainer.CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
