"""Reading MNIST IDX files and building the two evaluation protocols.

    python demos/01_idx_and_splits.py /path/to/mnist
"""
import sys

import numpy as np

from ocgan.datasets import Protocol, SplitPlan, build_split, load_idx_dataset, parse_idx, serialize_idx

data_dir = sys.argv[1] if len(sys.argv) > 1 else "/root/data/mnist"

# IDX is a tiny big-endian container; a round trip is byte-exact.
arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
blob = serialize_idx(arr)
print("IDX header bytes:", list(blob[:12]))
assert np.array_equal(parse_idx(blob), arr)

train = load_idx_dataset(data_dir, "train")
test = load_idx_dataset(data_dir, "test")
print(f"train {train.images.shape}, test {test.images.shape}")

# Protocol 1 pools one split and balances the test negatives against the held-out positives.
p1 = build_split(train, SplitPlan(Protocol.ONE, known_class=3, seed=0))
print("protocol 1:", len(p1.train), "train,", len(p1.val), "val,",
      int(p1.test_labels.sum()), "test positives,", int((p1.test_labels == 0).sum()), "test negatives")

# Protocol 2 trains on the known class only and tests on the whole test split.
p2 = build_split(train, SplitPlan(Protocol.TWO, known_class=3, seed=0), test)
print("protocol 2:", len(p2.train), "train,", len(p2.val), "val,", len(p2.test_labels), "test images,",
      int(p2.test_labels.sum()), "of them in-class")
