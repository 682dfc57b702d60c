"""Command-line interface: train, eval, ablate, dataset."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np
import torch


def cmd_train(args) -> int:
    from . import harness

    cfg = harness.load_config(args.config)
    result = harness.run_training(cfg, run_dir=args.run_dir, resume=args.resume)
    print(f"run directory: {result.run_dir}")
    print(f"frames: {result.frames}  stopped_early: {result.stopped_early}")
    print(f"final checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from . import harness
    from .blockfile import read_blockfile

    cfg = harness.load_config(args.config)
    model = harness.build_model(cfg)
    harness.load_checkpoint(args.ckpt, model)
    layouts = harness.build_layouts(cfg)
    env = harness.build_envs(cfg, layouts)[0]
    policy = harness.ModelPolicy(model, env.config.actions, seed=args.seed)
    report = harness.evaluate(policy, env, args.episodes, seed=args.seed)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args) -> int:
    from . import harness

    base = harness.load_config(args.config)
    rows = harness.run_ablation(args.suite, base, args.out, seeds=tuple(args.seeds),
                                eval_every=args.eval_every,
                                eval_episodes=args.eval_episodes,
                                run_root=args.run_root)
    print(f"wrote {len(rows)} evaluation rows to {args.out}")
    return 0


def cmd_dataset(args) -> int:
    from . import harness, pretrain

    cfg = harness.load_config(args.config)
    layouts = harness.unique_layouts(harness.build_layouts(cfg))
    rng = np.random.default_rng(args.seed)
    path = pretrain.generate_dataset(layouts, args.n, rng, args.out,
                                     frame_hw=cfg.env.frame_hw)
    ds = pretrain.Dataset(path)
    digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
    print(f"wrote {len(ds)} records to {path}")
    print(f"sha256: {digest}")
    return 0


def main(argv=None) -> int:
    torch.set_num_threads(max(1, torch.get_num_threads()))
    parser = argparse.ArgumentParser(prog="navrl",
                                     description="maze navigation RL harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--run-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a paired ablation suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="comparison CSV path")
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--eval-every", type=int, default=20_000)
    p.add_argument("--eval-episodes", type=int, default=20)
    p.add_argument("--run-root", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dataset", help="pre-render an observation dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
