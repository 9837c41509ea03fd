"""Command-line entry point: ``ocgan {train,eval,sample,interpolate,mine-demo,ablate}``.

Exit codes: 0 success, 1 runtime failure (divergence, I/O, corrupt files),
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np
import torch

from . import checkpoint, pgm
from .datasets import Protocol, SplitPlan, build_split, load_idx_dataset, to_image_batch
from .errors import OcganError, ShapeError, UsageError
from .evaluation import dump_json, evaluate_split, format_ablation_table, run_ablation
from .model import ModelConfig, decode, encode, sample_uniform_latent
from .training import Ablation, TrainConfig, mine_informative_negatives, train, write_loss_log

log = logging.getLogger("ocgan")

DEFAULT_DATA_DIRS = {"mnist": "data/mnist", "fmnist": "data/fmnist"}

# flag name -> (section, key) in the resolved config
_TRAIN_FLAGS = {
    "iterations": "iterations",
    "seed": "seed",
    "ablation": "ablation",
    "batch_size": "batch_size",
    "val_check_every": "val_check_every",
    "mining_warmup": "mining_warmup_iterations",
    "mining_subiterations": "mining_subiterations",
    "mining_step_size": "mining_step_size",
    "learning_rate": "learning_rate",
}
_MODEL_FLAGS = {
    "ae_base_channels": "ae_base_channels",
    "vis_disc_base_channels": "vis_disc_base_channels",
    "classifier_base_channels": "classifier_base_channels",
}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def resolve_config(args) -> dict:
    """Config file values first, then any flag given on the command line."""
    cfg = {"dataset": "mnist", "data_dir": None, "known_class": 0, "protocol": 2,
           "model": {}, "train": {}}
    if getattr(args, "config", None):
        with open(args.config) as f:
            loaded = json.load(f)
        for key in ("dataset", "data_dir", "known_class", "protocol"):
            if key in loaded:
                cfg[key] = loaded[key]
        cfg["model"].update(loaded.get("model", {}))
        cfg["train"].update(loaded.get("train", {}))
    for flag, key in (("dataset", "dataset"), ("data_dir", "data_dir"), ("known_class", "known_class"),
                      ("protocol", "protocol")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg["train"][key] = value
    for flag, key in _MODEL_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg["model"][key] = value
    if cfg["data_dir"] is None:
        cfg["data_dir"] = DEFAULT_DATA_DIRS[cfg["dataset"]]
    if "seed" in cfg["train"] and "init_seed" not in cfg["model"]:
        cfg["model"]["init_seed"] = cfg["train"]["seed"]
    # round-trip through the dataclasses so the echo lists every default
    cfg["model"] = ModelConfig(**cfg["model"]).to_dict()
    cfg["train"] = TrainConfig(**cfg["train"]).to_dict()
    return cfg


def _configs(cfg):
    return ModelConfig.from_dict(cfg["model"]), TrainConfig.from_dict(cfg["train"])


def _load_split(cfg):
    data_dir = cfg["data_dir"]
    protocol = Protocol(int(cfg["protocol"]))
    plan = SplitPlan(protocol, int(cfg["known_class"]), seed=int(cfg["train"]["seed"]))
    train_ds = load_idx_dataset(data_dir, "train")
    test_ds = load_idx_dataset(data_dir, "test") if protocol == Protocol.TWO else None
    return build_split(train_ds, plan, test_ds)


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    dump_json({"command": "train", **cfg}, os.path.join(out, "config.json"))
    model_config, train_config = _configs(cfg)
    split = _load_split(cfg)
    state = train(split, model_config, train_config, progress_every=args.log_every)
    meta = {key: cfg[key] for key in ("dataset", "known_class", "protocol")}
    meta.update(train_config=cfg["train"], seed=train_config.seed)
    checkpoint.save_model(os.path.join(out, "best.ocgn"), state.model,
                          {**meta, "kind": "best", "iteration": state.best_iteration,
                           "best_val_mse": state.best_val_mse},
                          tensors=state.best_parameters)
    checkpoint.save_model(os.path.join(out, "final.ocgn"), state.model,
                          {**meta, "kind": "final", "iteration": state.iteration,
                           "best_val_mse": state.best_val_mse})
    write_loss_log(state.loss_log, os.path.join(out, "losses.csv"))
    print(f"best val MSE {state.best_val_mse:.6f} at iteration {state.best_iteration}")
    return 0


def _checkpoint_path(args):
    return args.checkpoint or os.path.join(args.out, "best.ocgn")


def cmd_eval(args):
    model, meta = checkpoint.load_model(_checkpoint_path(args))
    # dataset/class/protocol default to what the checkpoint was trained on
    for key in ("dataset", "known_class", "protocol"):
        if getattr(args, key, None) is None and key in meta:
            setattr(args, key, meta[key])
    if args.seed is None and "seed" in meta:
        args.seed = meta["seed"]
    cfg = resolve_config(args)
    out = _out_dir(args)
    split = _load_split(cfg)
    extra = {"known_class": cfg["known_class"], "protocol": cfg["protocol"], "seed": cfg["train"]["seed"],
             "checkpoint_iteration": meta.get("iteration"), "dataset": cfg["dataset"]}
    run = evaluate_split(model, split, out, extra)
    print(f"AUC {run.result.auc:.4f} (n_pos={run.result.n_pos}, n_neg={run.result.n_neg})")
    return 0


def _decode_np(model, z):
    with torch.no_grad():
        return decode(model, z).numpy()


def cmd_sample(args):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    model, _ = checkpoint.load_model(_checkpoint_path(args))
    seed = 0 if args.seed is None else args.seed
    z = sample_uniform_latent(model.latent, args.count, seed)
    images = _decode_np(model, z)
    cols = math.ceil(math.sqrt(args.count))
    path = os.path.join(_out_dir(args), "samples.pgm")
    pgm.write_pgm(path, pgm.tile(images, cols))
    print(path)
    return 0


def _endpoint(args, which, model, cfg_cache):
    path = getattr(args, f"image_{which}")
    index = getattr(args, f"index_{which}")
    if path:
        img = to_image_batch(pgm.read_pgm(path)[None])
    elif index is not None:
        if "test" not in cfg_cache:
            data_dir = args.data_dir or DEFAULT_DATA_DIRS[args.dataset or "mnist"]
            cfg_cache["test"] = load_idx_dataset(data_dir, "test").images
        img = to_image_batch(cfg_cache["test"][index][None])
    else:
        raise UsageError(f"give --image-{which} PATH or --index-{which} N")
    s = model.config.input_side
    if img.shape[1:] != (1, s, s):
        raise ShapeError(f"endpoint {which} is {img.shape[2]}x{img.shape[3]}, model expects {s}x{s}")
    return img


def cmd_interpolate(args):
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    model, _ = checkpoint.load_model(_checkpoint_path(args))
    cache = {}
    a, b = _endpoint(args, "a", model, cache), _endpoint(args, "b", model, cache)
    with torch.no_grad():
        za, zb = encode(model, a), encode(model, b)
        t = torch.linspace(0.0, 1.0, args.steps, dtype=za.dtype).view(-1, 1, 1, 1)
        path_z = za + t * (zb - za)
    images = _decode_np(model, path_z)
    out = os.path.join(_out_dir(args), "interpolation.pgm")
    pgm.write_pgm(out, pgm.tile(images, args.steps))
    print(out)
    return 0


def cmd_mine_demo(args):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    model, meta = checkpoint.load_model(_checkpoint_path(args))
    if not model.has("classifier"):
        raise UsageError("mine-demo needs a checkpoint of the full model (with classifier)")
    train_cfg = TrainConfig.from_dict(meta["train_config"]) if "train_config" in meta else TrainConfig()
    steps = train_cfg.mining_subiterations if args.mining_subiterations is None else args.mining_subiterations
    step_size = train_cfg.mining_step_size if args.mining_step_size is None else args.mining_step_size
    seed = 0 if args.seed is None else args.seed
    z = torch.as_tensor(sample_uniform_latent(model.latent, args.count, seed))
    mined = mine_informative_negatives(model, z, steps, step_size)
    images = np.concatenate([_decode_np(model, z), _decode_np(model, mined)])
    out = os.path.join(_out_dir(args), "mining.pgm")
    pgm.write_pgm(out, pgm.tile(images, args.count))
    print(out)
    return 0


def cmd_ablate(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    dump_json({"command": "ablate", "classes": args.classes, **cfg}, os.path.join(out, "config.json"))
    model_config, train_config = _configs(cfg)
    protocol = Protocol(int(cfg["protocol"]))
    train_ds = load_idx_dataset(cfg["data_dir"], "train")
    test_ds = load_idx_dataset(cfg["data_dir"], "test") if protocol == Protocol.TWO else None
    classes = args.classes if args.classes else [int(cfg["known_class"])]
    rows = run_ablation(train_ds, classes, model_config, train_config, test_ds, protocol, out_dir=out)
    with open(os.path.join(out, "ablation.csv"), "w") as f:
        f.write("variant,mean_auc\n")
        for r in rows:
            f.write(f"{r.variant.value},{r.mean_auc!r}\n")
    print(format_ablation_table(rows))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(p, data=True, training=True):
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON config file; flags override its values")
    if data:
        p.add_argument("--dataset", choices=sorted(DEFAULT_DATA_DIRS))
        p.add_argument("--data-dir", help="directory holding the four IDX files")
        p.add_argument("--class", dest="known_class", type=int, choices=range(10), metavar="0..9")
        p.add_argument("--protocol", type=int, choices=(1, 2))
    if training:
        p.add_argument("--ablation", choices=[a.value for a in Ablation])
        p.add_argument("--iterations", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--val-check-every", type=int)
        p.add_argument("--mining-warmup", type=int)
        p.add_argument("--mining-subiterations", type=int)
        p.add_argument("--mining-step-size", type=float)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--ae-base-channels", type=int)
        p.add_argument("--vis-disc-base-channels", type=int)
        p.add_argument("--classifier-base-channels", type=int)
        p.add_argument("--log-every", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocgan", description="One-class novelty detection with OCGAN")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write best/final checkpoints")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score the test split of a checkpoint and report AUC")
    _common(p, training=False)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="decode uniform latent samples into a PGM grid")
    _common(p, data=False, training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=64)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="decode a straight latent path between two images")
    _common(p, training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--image-a")
    p.add_argument("--image-b")
    p.add_argument("--index-a", type=int, help="index into the test images")
    p.add_argument("--index-b", type=int)
    p.add_argument("--steps", type=int, default=11)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("mine-demo", help="latents before/after negative mining as a two-row PGM")
    _common(p, data=False, training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--mining-subiterations", type=int)
    p.add_argument("--mining-step-size", type=float)
    p.set_defaults(func=cmd_mine_demo)

    p = sub.add_parser("ablate", help="mean AUC of each ablation variant")
    _common(p)
    p.add_argument("--classes", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with code 2
    except (OcganError, OSError, ValueError) as exc:
        print(f"ocgan: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
