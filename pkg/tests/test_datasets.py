import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ocgan.datasets import (
    NoiseSpec,
    Protocol,
    RawDataset,
    SplitPlan,
    batches,
    build_split,
    inject_noise,
    parse_idx,
    serialize_idx,
    to_image_batch,
)
from ocgan.errors import EmptyClassError, FormatError, InsufficientNegatives, TruncationError, UnsupportedDtype


def synthetic_dataset(counts, side=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n, k) for k, n in enumerate(counts)])
    images = rng.integers(0, 256, size=(len(labels), side, side), dtype=np.uint8)
    return RawDataset(images, labels, num_classes=max(10, len(counts)))


# --- IDX ---------------------------------------------------------------------

def test_parse_hand_encoded_header():
    # magic 0x00000803 then dims 1, 2, 2 as big-endian uint32: 16 header bytes
    header = bytes([0x00, 0x00, 0x08, 0x03,
                    0x00, 0x00, 0x00, 0x01,
                    0x00, 0x00, 0x00, 0x02,
                    0x00, 0x00, 0x00, 0x02])
    out = parse_idx(header + bytes([1, 2, 3, 4]))
    assert out.shape == (1, 2, 2)
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, [[[1, 2], [3, 4]]])


def test_parse_empty_tensor():
    out = parse_idx(bytes([0, 0, 8, 1, 0, 0, 0, 0]))
    assert out.shape == (0,)


@pytest.mark.parametrize(
    "data, error",
    [
        (bytes([0, 1, 8, 1, 0, 0, 0, 1, 5]), FormatError),
        (bytes([0, 0, 8, 1, 0, 0, 0, 3, 5]), TruncationError),
        (bytes([0, 0, 8, 2, 0, 0, 0]), TruncationError),
        (bytes([0, 0, 0x0D, 1, 0, 0, 0, 1, 0, 0, 0, 0]), UnsupportedDtype),
        (bytes([0, 0, 8, 1, 0, 0, 0, 1, 5, 6]), FormatError),
    ],
)
def test_parse_errors(data, error):
    with pytest.raises(error):
        parse_idx(data)


@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=1, max_dims=4, min_side=0, max_side=5)))
def test_idx_round_trip(arr):
    data = serialize_idx(arr)
    back = parse_idx(data)
    np.testing.assert_array_equal(back, arr)
    assert serialize_idx(back) == data


def test_official_mnist_header(mnist_dir):
    import os

    with open(os.path.join(mnist_dir, "train-images-idx3-ubyte"), "rb") as f:
        head = f.read(16)
    with open(os.path.join(mnist_dir, "train-labels-idx1-ubyte"), "rb") as f:
        label_count = struct.unpack(">I", f.read(8)[4:])[0]
    count, rows, cols = struct.unpack(">III", head[4:])
    from ocgan.datasets import read_idx_file

    images = read_idx_file(os.path.join(mnist_dir, "train-images-idx3-ubyte"))
    assert images.shape == (count, rows, cols) == (60000, 28, 28)
    assert label_count == count


# --- splits ------------------------------------------------------------------

def test_protocol1_sizes():
    ds = synthetic_dataset([100, 60, 60])
    split = build_split(ds, SplitPlan(Protocol.ONE, 0, seed=3, val_fraction=0.1))
    assert len(split.train) == 72
    assert len(split.val) == 8
    assert (split.test_labels == 1).sum() == 20
    assert (split.test_labels == 0).sum() == 20


def test_protocol2_mnist_digit1(mnist_train, mnist_test, mnist_dir):
    import os

    split = build_split(mnist_train, SplitPlan(Protocol.TWO, 1, seed=0), mnist_test)
    with open(os.path.join(mnist_dir, "t10k-labels-idx1-ubyte"), "rb") as f:
        raw_labels = np.frombuffer(f.read()[8:], dtype=np.uint8)
    assert len(split.test_images) == 10000
    np.testing.assert_array_equal(split.test_labels, (raw_labels == 1).astype(int))
    assert split.test_labels.sum() == 1135
    n_train_ones = int((mnist_train.labels == 1).sum())
    assert len(split.train) + len(split.val) == n_train_ones


def test_split_determinism():
    ds = synthetic_dataset([50, 50, 50])
    plan = SplitPlan(Protocol.ONE, 1, seed=11)
    a, b = build_split(ds, plan), build_split(ds, plan)
    for x, y in [(a.train, b.train), (a.val, b.val), (a.test_images, b.test_images), (a.test_labels, b.test_labels)]:
        assert x.tobytes() == y.tobytes()


@settings(max_examples=40, deadline=None)
@given(
    counts=st.lists(st.integers(1, 40), min_size=2, max_size=5),
    known=st.integers(0, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_protocol1_balance_and_partition(counts, known, seed):
    known = known % len(counts)
    ds = synthetic_dataset(counts, seed=seed % 1000)
    n_in = counts[known]
    n_test_pos = n_in - int(round(0.8 * n_in))
    n_out = sum(counts) - n_in
    plan = SplitPlan(Protocol.ONE, known, seed=seed)
    if n_test_pos == 0:
        with pytest.raises(EmptyClassError):
            build_split(ds, plan)
        return
    if n_out < n_test_pos:
        with pytest.raises(InsufficientNegatives):
            build_split(ds, plan)
        return
    split = build_split(ds, plan)
    assert (split.test_labels == 0).sum() == (split.test_labels == 1).sum()
    m = split.meta
    pos = m["test_indices"][split.test_labels == 1]
    neg = m["test_indices"][split.test_labels == 0]
    parts = [set(m["train_indices"]), set(m["val_indices"]), set(pos)]
    assert sum(map(len, parts)) == n_in
    assert set().union(*parts) == set(np.flatnonzero(ds.labels == known))
    assert all(ds.labels[i] != known for i in neg)


def test_split_errors():
    ds = synthetic_dataset([10, 0, 1])
    with pytest.raises(EmptyClassError):
        build_split(ds, SplitPlan(Protocol.ONE, 1))
    with pytest.raises(InsufficientNegatives):
        build_split(ds, SplitPlan(Protocol.ONE, 0))


def test_val_fraction_bounds():
    with pytest.raises(ValueError):
        SplitPlan(Protocol.ONE, 0, val_fraction=1.0)


def test_image_batch_scaling():
    raw = np.array([[[0, 255], [128, 1]]], dtype=np.uint8)
    batch = to_image_batch(raw)
    assert batch.shape == (1, 1, 2, 2)
    assert batch.min() >= 0 and batch.max() <= 1
    np.testing.assert_array_equal(batch[0, 0], raw[0].astype(np.float32) / np.float32(255))


# --- noise and batching --------------------------------------------------------

def test_noise_degenerate_variance():
    x = np.random.default_rng(0).uniform(size=(4, 1, 28, 28)).astype(np.float32)
    out = inject_noise(x, NoiseSpec(variance=1e-12, seed=1))
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_noise_moments():
    x = np.zeros((100000,), dtype=np.float64)
    noise = inject_noise(x, NoiseSpec(variance=0.2, seed=5))
    assert abs(noise.mean()) < 0.01
    assert abs(noise.var() - 0.2) < 0.01


def test_noise_determinism_and_unclamped():
    x = np.full((2, 1, 28, 28), 0.5, dtype=np.float32)
    a = inject_noise(x, NoiseSpec(seed=9))
    b = inject_noise(x, NoiseSpec(seed=9))
    assert a.tobytes() == b.tobytes()
    assert a.min() < 0 and a.max() > 1


def test_noise_spec_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        NoiseSpec(variance=0.0)


def test_batches():
    imgs = np.arange(10)
    assert [len(c) for c in batches(imgs, 4, 0)] == [4, 4, 2]
    assert [len(c) for c in batches(imgs, 10, 0)] == [10]
    assert [len(c) for c in batches(imgs, 50, 0)] == [10]
    first = np.concatenate(list(batches(imgs, 3, 7)))
    second = np.concatenate(list(batches(imgs, 3, 7)))
    np.testing.assert_array_equal(first, second)
    assert sorted(first) == list(range(10))
    assert list(batches(np.arange(0), 4, 0)) == []
    with pytest.raises(ValueError):
        list(batches(imgs, 0, 0))
