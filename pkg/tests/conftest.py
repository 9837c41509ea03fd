import os

import numpy as np
import pytest
import torch

from ocgan.datasets import load_idx_dataset
from ocgan.model import ModelConfig

MNIST_DIR = os.environ.get("OCGAN_MNIST_DIR", "/root/data/mnist")


def _has_mnist():
    return os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte")) or os.path.exists(
        os.path.join(MNIST_DIR, "train-images-idx3-ubyte.gz"))


requires_mnist = pytest.mark.skipif(not _has_mnist(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


@pytest.fixture(scope="session")
def mnist_dir():
    if not _has_mnist():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    return MNIST_DIR


@pytest.fixture(scope="session")
def mnist_train(mnist_dir):
    return load_idx_dataset(mnist_dir, "train")


@pytest.fixture(scope="session")
def mnist_test(mnist_dir):
    return load_idx_dataset(mnist_dir, "test")


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny()


@pytest.fixture
def tiny_images():
    rng = np.random.default_rng(123)
    return rng.uniform(0, 1, size=(16, 1, 8, 8)).astype(np.float32)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._acceptance = {}


def pytest_collection_modifyitems(config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            config._acceptance[item.nodeid] = {"number": mark.args[0], "title": mark.args[1]}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    entry = item.config._acceptance.get(item.nodeid)
    if entry is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["outcome"] = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        entry["detail"] = dict(item.user_properties).get("detail", "")


def pytest_terminal_summary(terminalreporter, config):
    entries = sorted(config._acceptance.values(), key=lambda e: e["number"])
    if not entries:
        return
    terminalreporter.section("acceptance criteria")
    for e in entries:
        line = f"criterion {e['number']} [{e.get('outcome', 'NOT RUN')}] {e['title']}"
        if e.get("detail"):
            line += f": {e['detail']}"
        terminalreporter.write_line(line)
