"""One-class novelty detection with an adversarially constrained denoising autoencoder."""
from .datasets import EvalSplit, NoiseSpec, Protocol, RawDataset, SplitPlan, build_split, load_idx_dataset
from .evaluation import compute_auc, novelty_score, run_ablation, run_protocol
from .model import LatentShape, ModelConfig, build
from .training import Ablation, TrainConfig, TrainState, train

__version__ = "0.1.0"
