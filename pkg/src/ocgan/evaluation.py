"""Reconstruction-error scoring, ROC/AUC, and protocol / ablation experiments.

Orientation: a higher reconstruction MSE means "more novel", and the
out-of-class examples (label 0) are the ones being detected. AUC is the
probability that a random out-of-class example outscores a random in-class
one, ties counting one half.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .datasets import EvalSplit, Protocol, RawDataset, SplitPlan, build_split
from .errors import DegenerateLabelsError
from .model import ModelConfig, OCGAN, load_parameter_store
from .training import ABLATION_LABELS, ABLATION_ORDER, Ablation, TrainConfig, TrainState, reconstruction_mse, train


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


@dataclass
class AucResult:
    auc: float
    n_pos: int  # in-class test examples (label 1)
    n_neg: int  # out-of-class test examples (label 0)


def novelty_score(model: OCGAN, images) -> np.ndarray:
    """Reconstruction MSE per image; evaluation mode and no noise."""
    images = images.numpy() if isinstance(images, torch.Tensor) else np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    return reconstruction_mse(model, images)


def compute_auc(scores, labels) -> tuple:
    """Tie-aware ROC sweep and Mann-Whitney AUC.

    ``labels`` uses 1 for in-class and 0 for out-of-class. Returns
    ``(RocCurve, AucResult)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    novel = labels == 0
    n_out, n_in = int(novel.sum()), int((~novel).sum())
    if n_out == 0 or n_in == 0:
        raise DegenerateLabelsError("need at least one in-class and one out-of-class record")

    order = np.argsort(-scores, kind="mergesort")
    s, is_out = scores[order], novel[order]
    # group equal scores: one ROC vertex per distinct threshold
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    out_per = np.add.reduceat(is_out.astype(np.int64), starts)
    in_per = np.add.reduceat((~is_out).astype(np.int64), starts)

    tpr = np.r_[0, np.cumsum(out_per)] / n_out
    fpr = np.r_[0, np.cumsum(in_per)] / n_in

    # in-class examples scoring strictly below each group (groups run high -> low)
    in_below = n_in - np.cumsum(in_per)
    wins = np.sum(out_per * in_below) + 0.5 * np.sum(out_per * in_per)
    auc = float(wins / (n_out * n_in))
    return RocCurve(fpr, tpr), AucResult(auc, n_in, n_out)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def write_scores_csv(path, scores, labels):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("index", "score", "label"))
        for i, (s, y) in enumerate(zip(scores, labels)):
            w.writerow((i, repr(float(s)), int(y)))


def write_roc_csv(path, roc: RocCurve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("fpr", "tpr"))
        for a, b in zip(roc.fpr, roc.tpr):
            w.writerow((repr(float(a)), repr(float(b))))


def config_hash(*parts: dict) -> str:
    blob = json.dumps(list(parts), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


@dataclass
class ProtocolRun:
    result: AucResult
    roc: RocCurve
    scores: np.ndarray
    split: EvalSplit
    state: Optional[TrainState] = None
    summary: Optional[dict] = None


def evaluate_split(model: OCGAN, split: EvalSplit, out_dir=None, summary_extra: Optional[dict] = None) -> ProtocolRun:
    t0 = time.perf_counter()
    scores = novelty_score(model, split.test_images)
    roc, result = compute_auc(scores, split.test_labels)
    summary = {
        "auc": result.auc,
        "n_pos": result.n_pos,
        "n_neg": result.n_neg,
        "scoring_seconds": time.perf_counter() - t0,
        **(summary_extra or {}),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_scores_csv(os.path.join(out_dir, "scores.csv"), scores, split.test_labels)
        write_roc_csv(os.path.join(out_dir, "roc.csv"), roc)
        dump_json(summary, os.path.join(out_dir, "summary.json"))
    return ProtocolRun(result, roc, scores, split, summary=summary)


def run_protocol(
    dataset: RawDataset,
    known_class: int,
    protocol,
    model_config: ModelConfig,
    train_config: TrainConfig,
    test_dataset: Optional[RawDataset] = None,
    out_dir=None,
    val_fraction: float = 0.1,
) -> ProtocolRun:
    """Split, train, restore the best-validation parameters, score, and compute AUC."""
    start = time.perf_counter()
    plan = SplitPlan(Protocol(protocol), known_class, seed=train_config.seed, val_fraction=val_fraction)
    split = build_split(dataset, plan, test_dataset)
    state = train(split, model_config, train_config)
    load_parameter_store(state.model, state.best_parameters)
    extra = {
        "config_hash": config_hash(model_config.to_dict(), train_config.to_dict(),
                                   {"protocol": int(plan.protocol), "known_class": known_class}),
        "seed": train_config.seed,
        "known_class": known_class,
        "protocol": int(plan.protocol),
        "ablation": train_config.ablation.value,
        "best_iteration": state.best_iteration,
        "best_val_mse": state.best_val_mse,
    }
    run = evaluate_split(state.model, split, out_dir, extra)
    run.state = state
    run.summary["wall_clock_seconds"] = time.perf_counter() - start
    if out_dir is not None:
        dump_json(run.summary, os.path.join(out_dir, "summary.json"))
    return run


@dataclass
class AblationRow:
    variant: Ablation
    label: str
    mean_auc: float
    aucs: dict  # known_class -> AUC


def run_ablation(
    dataset: RawDataset,
    classes: Sequence[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    test_dataset: Optional[RawDataset] = None,
    protocol=Protocol.TWO,
    variants: Sequence = ABLATION_ORDER,
    out_dir=None,
) -> list:
    """Mean AUC per ablation variant over ``classes``, rows in Table-4 order."""
    from dataclasses import replace

    rows = []
    wanted = {Ablation(v) for v in variants}
    for variant in (v for v in ABLATION_ORDER if v in wanted):
        cfg = replace(train_config, ablation=variant)
        aucs = {}
        for k in classes:
            sub = None if out_dir is None else os.path.join(out_dir, variant.value.replace("+", "_"), f"class{k}")
            aucs[k] = run_protocol(dataset, k, protocol, model_config, cfg, test_dataset, sub).result.auc
        rows.append(AblationRow(variant, ABLATION_LABELS[variant], float(np.mean(list(aucs.values()))), aucs))
    return rows


def format_ablation_table(rows) -> str:
    width = max(len(r.label) for r in rows)
    return "\n".join(f"{r.label:<{width}}  {r.mean_auc:.4f}" for r in rows)
