"""Train a reduced-width model on one digit and report test AUC.

Runs in a few minutes on one CPU core. Pass a digit and an iteration count to change the run:

    python demos/02_train_and_score.py /path/to/mnist 1 1500
"""
import sys

import numpy as np
import torch

from ocgan import Ablation, ModelConfig, Protocol, TrainConfig, load_idx_dataset, run_protocol

data_dir = sys.argv[1] if len(sys.argv) > 1 else "/root/data/mnist"
digit = int(sys.argv[2]) if len(sys.argv) > 2 else 1
iterations = int(sys.argv[3]) if len(sys.argv) > 3 else 1500
torch.set_num_threads(1)

train = load_idx_dataset(data_dir, "train")
test = load_idx_dataset(data_dir, "test")

model_config = ModelConfig(ae_base_channels=16, classifier_base_channels=16)
train_config = TrainConfig(iterations=iterations, mining_warmup_iterations=iterations // 2,
                           val_check_every=250, ablation=Ablation.FULL)
run = run_protocol(train, digit, Protocol.TWO, model_config, train_config, test_dataset=test)

print("validation history (iteration, val MSE, best so far):")
for it, val, best in run.state.val_history:
    print(f"  {it:5d}  {val:.5f}  {best:.5f}")

scores, labels = run.scores, run.split.test_labels
print(f"best iteration {run.state.best_iteration}, AUC {run.result.auc:.4f}")
print(f"mean novelty score: in-class {scores[labels == 1].mean():.4f}, "
      f"out-of-class {scores[labels == 0].mean():.4f}")
for k in range(10):
    print(f"  digit {k}: mean score {scores[test.labels == k].mean():.4f}")
