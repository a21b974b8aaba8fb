import numpy as np
import pytest

from hydalearn.data import ToySpec, toy_splits
from hydalearn.multitask import MultiTaskNet
from hydalearn.tensor_core import Rng

ACCEPTANCE_LINES = []


def tiny_toy(seed=0, aux_mode="related", n_train=96):
    return ToySpec(n_train=n_train, n_val=40, n_test=40, input_dim=6, output_dim=3,
                   aux_mode=aux_mode, seed=seed)


def tiny_net(splits, seed=0, loss_main="mse", loss_aux="mse", activation="tanh"):
    return MultiTaskNet.build(
        splits.train.inputs.shape[1], [8, 8], [5],
        splits.train.targets_main.shape[1], splits.train.targets_aux.shape[1],
        Rng(seed).child("init"), activation=activation, loss_main=loss_main, loss_aux=loss_aux,
    )


@pytest.fixture
def splits():
    return toy_splits(tiny_toy())


@pytest.fixture
def net(splits):
    return tiny_net(splits)


@pytest.fixture
def report():
    """Record a one-line acceptance verdict, printed again in the terminal summary."""
    def _report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


class ConstantMetric:
    """Lower-is-better metric that ignores the predictions; every gain is exactly zero."""

    sign = -1.0
    higher_is_better = False

    def __init__(self, value=0.5):
        self.value = value

    def __call__(self, pred, target):
        return self.value

    def gain(self, new, old):
        return self.sign * (new - old)

    def worst(self):
        return float("inf")
