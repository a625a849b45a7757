import numpy as np
import pytest

from unida_lab.losses import LossWeights, ModelBundle, SslConfig, WeightedBatch
from unida_lab.ndcore import init_mlp, make_rng


def tiny_problem(seed, *, n=12, dim=5, width=8, n_classes=4):
    """Two-layer width-8 nets and a weighted batch with soft weights."""
    rng = make_rng(seed, 99)
    models = ModelBundle(
        init_mlp([dim, width, width], ["relu", "relu"], rng),
        init_mlp([width, n_classes], ["identity"], rng),
        init_mlp([width, width, 1], ["relu", "sigmoid"], rng),
    )
    # nonzero biases so every bias gradient is exercised
    for p in (models.feature, models.classifier, models.discriminator):
        for layer in p.layers:
            layer.bias[:] = 0.1 * rng.standard_normal(layer.bias.shape)
    batch = WeightedBatch(
        rng.standard_normal((n, dim)),
        rng.integers(0, n_classes, n),
        rng.standard_normal((n, dim)) + 0.5,
        rng.uniform(0, 1, n),
        rng.uniform(0, 1, n),
    )
    views = (
        batch.target_x + 0.3 * rng.standard_normal((n, dim)),
        batch.target_x + 0.3 * rng.standard_normal((n, dim)),
    )
    return models, batch, views


@pytest.fixture
def problem():
    return tiny_problem(0)


# acceptance criteria report one pass/fail line each at the end of the run
_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_CRITERIA, {})[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
