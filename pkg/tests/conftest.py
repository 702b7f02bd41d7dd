import numpy as np
import pytest

from fedsim.data import Dataset, SyntheticTaskSpec, gen_blobs
from fedsim.nn import linear_softmax, mlp1, with_params
from fedsim.params import ParameterVector


@pytest.fixture(scope="session")
def small_blobs() -> Dataset:
    """400 examples of the 4-class blob task, enough for quick training."""
    return gen_blobs(SyntheticTaskSpec(num_classes=4, input_dim=10, samples=400,
                                       radius=3.0, noise=0.5, seed=3))


def random_linear(rng, input_dim=10, num_classes=4, scale=0.5):
    model = linear_softmax(input_dim, num_classes)
    values = scale * rng.standard_normal(len(model.params))
    return with_params(model, ParameterVector(values, model.params.layout))


def random_mlp(rng, input_dim=10, num_classes=4, hidden_dim=6, scale=0.5):
    model = mlp1(input_dim, num_classes, hidden_dim)
    values = scale * rng.standard_normal(len(model.params))
    return with_params(model, ParameterVector(values, model.params.layout))


def random_batch(rng, count=8, input_dim=10, num_classes=4) -> Dataset:
    return Dataset(rng.standard_normal((count, input_dim)),
                   rng.integers(0, num_classes, size=count))


def fd_gradient(loss_at, values: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    out = np.empty_like(values)
    for i in range(values.size):
        bumped = values.copy()
        bumped[i] += h
        up = loss_at(bumped)
        bumped[i] -= 2 * h
        down = loss_at(bumped)
        out[i] = (up - down) / (2 * h)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    scale = np.maximum(scale, 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))
