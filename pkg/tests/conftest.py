import numpy as np
import pytest

from eegprobe import engine as E
from eegprobe.dataset import split_by_subject
from eegprobe.synthdata import SynthSpec, default_components, generate
from eegprobe.training import TrainConfig, train


def small_model(input_shape=(6, 16), filters=(4, 3), hidden=None, seed=0):
    """Two convolutions with pooling between them, then the classifier."""
    layers = [
        E.conv(filters[0], 3, 3),
        E.relu_layer(),
        E.maxpool(),
        E.dropout(0.25),
        E.conv(filters[1], 2, 3),
        E.relu_layer(),
        E.flatten(),
    ]
    if hidden:
        layers += [E.fc(hidden), E.relu_layer()]
    layers += [E.fc(2), E.softmax_layer()]
    spec = E.ModelSpec(tuple(layers), input_shape)
    rng = np.random.default_rng(seed)
    w = E.init_weights(spec, rng)
    # non-zero biases so every layer's bias path is exercised
    w = E.Weights({i: (k, rng.normal(0, 0.1, b.shape)) for i, (k, b) in w.params.items()})
    return spec, w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# The planted-feature experiment shared by several acceptance criteria:
# 20 subjects per class x 20 samples, class 0 carries a 7 Hz frontal theta.
PLANTED = SynthSpec(
    subjects_per_class=20,
    samples_per_subject=20,
    planted=default_components(24, theta_amp=1.0, alpha_amp=0.3),
    rng_seed=1,
)
TRAIN_CONFIG = TrainConfig(epochs=30, rng_seed=0)


@pytest.fixture(scope="session")
def planted_experiment():
    import time

    ds = generate(PLANTED)
    train_ds, test_ds = split_by_subject(ds, [0.7, 0.3], seed=0)
    spec = E.toy_cnn(ds.shape)
    t0 = time.perf_counter()
    weights, history = train(spec, train_ds, TRAIN_CONFIG)
    elapsed = time.perf_counter() - t0
    return {
        "spec": spec,
        "weights": weights,
        "history": history,
        "train": train_ds,
        "test": test_ds,
        "train_seconds": elapsed,
    }


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
