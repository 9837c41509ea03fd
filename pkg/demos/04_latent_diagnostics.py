"""Decode random latents, mine informative negatives, and walk between two digits.

Trains a small model first (about a minute), then writes PGM grids to ``demo_out/``:

    python demos/04_latent_diagnostics.py /path/to/mnist
"""
import os
import sys

import numpy as np
import torch

from ocgan import Ablation, ModelConfig, Protocol, SplitPlan, TrainConfig, build_split, load_idx_dataset, train
from ocgan.model import decode, encode, sample_uniform_latent
from ocgan.pgm import tile, write_pgm
from ocgan.training import bce_from_logits, mine_informative_negatives

data_dir = sys.argv[1] if len(sys.argv) > 1 else "/root/data/mnist"
out = "demo_out"
os.makedirs(out, exist_ok=True)
torch.set_num_threads(1)

split = build_split(load_idx_dataset(data_dir, "train"), SplitPlan(Protocol.TWO, 8, seed=0),
                    load_idx_dataset(data_dir, "test"))
config = ModelConfig(ae_base_channels=8, vis_disc_base_channels=8, classifier_base_channels=8)
state = train(split, config, TrainConfig(iterations=400, mining_warmup_iterations=200,
                                         val_check_every=200, ablation=Ablation.FULL))
model = state.model.eval()

# Every latent in the box should decode to something that looks like the known class.
z = torch.as_tensor(sample_uniform_latent(model.latent, 64, 0))
with torch.no_grad():
    write_pgm(os.path.join(out, "samples.pgm"), tile(decode(model, z).numpy(), 8))

# Mining pushes latents toward decodings the classifier rejects.
z = z[:8]
mined = mine_informative_negatives(model, z)
with torch.no_grad():
    before, after = decode(model, z), decode(model, mined)
    print("classifier BCE before mining", bce_from_logits(model.classifier(before), 1).item())
    print("classifier BCE after mining ", bce_from_logits(model.classifier(after), 1).item())
write_pgm(os.path.join(out, "mining.pgm"), tile(np.concatenate([before.numpy(), after.numpy()]), 8))

# A straight line between two encodings.
a, b = split.test_images[split.test_labels == 1][:2]
with torch.no_grad():
    za, zb = encode(model, a[None]), encode(model, b[None])
    t = torch.linspace(0, 1, 9).view(-1, 1, 1, 1)
    write_pgm(os.path.join(out, "interpolation.pgm"), tile(decode(model, za + t * (zb - za)).numpy(), 9))
print("wrote", sorted(os.listdir(out)))
