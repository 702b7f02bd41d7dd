"""Softmax classifiers with hand-written gradients, plus benign local training.

Two architectures: a linear softmax classifier and a one-hidden-layer tanh
network.  Everything runs in float64 on flat parameter vectors so that local
training, aggregation, and attacks share one representation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .params import ParameterVector, zeros

LINEAR_SOFTMAX = "linear_softmax"
MLP1 = "mlp1"


@dataclass
class Model:
    kind: str
    params: ParameterVector
    input_dim: int
    num_classes: int
    hidden_dim: int = 0


def model_layout(kind: str, input_dim: int, num_classes: int, hidden_dim: int = 0):
    if kind == LINEAR_SOFTMAX:
        return (("W", (num_classes, input_dim)), ("b", (num_classes,)))
    if kind == MLP1:
        if hidden_dim < 1:
            raise ValueError("mlp1 needs hidden_dim >= 1")
        return (
            ("W1", (hidden_dim, input_dim)),
            ("b1", (hidden_dim,)),
            ("W2", (num_classes, hidden_dim)),
            ("b2", (num_classes,)),
        )
    raise ValueError(f"unknown model kind {kind!r}")


def linear_softmax(input_dim: int, num_classes: int,
                   params: ParameterVector | None = None) -> Model:
    layout = model_layout(LINEAR_SOFTMAX, input_dim, num_classes)
    if params is None:
        params = zeros(layout)
    elif params.layout != layout:
        raise ValueError("params do not match a linear softmax layout")
    return Model(LINEAR_SOFTMAX, params, input_dim, num_classes)


def mlp1(input_dim: int, num_classes: int, hidden_dim: int,
         params: ParameterVector | None = None) -> Model:
    layout = model_layout(MLP1, input_dim, num_classes, hidden_dim)
    if params is None:
        params = zeros(layout)
    elif params.layout != layout:
        raise ValueError("params do not match the mlp1 layout")
    return Model(MLP1, params, input_dim, num_classes, hidden_dim)


def init_params(model: Model, rng: np.random.Generator | None = None,
                scale: float = 0.1) -> ParameterVector:
    """Fresh initial weights: zeros for linear, scaled normal for mlp1.

    The hidden layer must break symmetry, so mlp1 requires an rng.
    """
    layout = model.params.layout
    if model.kind == LINEAR_SOFTMAX:
        return zeros(layout)
    if rng is None:
        raise ValueError("mlp1 initialization needs an rng")
    return ParameterVector(scale * rng.standard_normal(len(model.params)), layout)


def with_params(model: Model, params: ParameterVector) -> Model:
    if params.layout != model.params.layout:
        raise ValueError("params layout does not match model")
    return replace(model, params=params)


def _check_features(model: Model, features: np.ndarray):
    if features.shape[-1] != model.input_dim:
        raise ValueError(
            f"feature dim {features.shape[-1]} != model input_dim {model.input_dim}"
        )


def batch_logits(model: Model, features: np.ndarray) -> np.ndarray:
    """Class scores for a (B, d) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    _check_features(model, features)
    w = model.params.unpack()
    if model.kind == LINEAR_SOFTMAX:
        return features @ w["W"].T + w["b"]
    hidden = np.tanh(features @ w["W1"].T + w["b1"])
    return hidden @ w["W2"].T + w["b2"]


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Class scores for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector")
    return batch_logits(model, x[None, :])[0]


def loss_ce(logits: np.ndarray, label: int) -> float:
    """Cross-entropy of softmax(logits) against one label, max-subtracted."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if label < 0 or label >= logits.shape[-1]:
        raise ValueError(f"label {label} out of range")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mean_loss(model: Model, data: Dataset) -> float:
    """Mean cross-entropy over a dataset."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    z = batch_logits(model, data.features)
    if np.any(data.labels < 0) or np.any(data.labels >= model.num_classes):
        raise ValueError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(data)), data.labels]
    return float(np.mean(lse - picked))


def grad(model: Model, batch: Dataset) -> ParameterVector:
    """Gradient of the mean cross-entropy over the batch."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    _check_features(model, batch.features)
    if np.any(batch.labels < 0) or np.any(batch.labels >= model.num_classes):
        raise ValueError("label out of range")
    x = batch.features
    w = model.params.unpack()
    if model.kind == LINEAR_SOFTMAX:
        p = _softmax_rows(x @ w["W"].T + w["b"])
        p[np.arange(len(batch)), batch.labels] -= 1.0
        p /= len(batch)
        flat = np.concatenate([(p.T @ x).reshape(-1), p.sum(axis=0)])
        return ParameterVector(flat, model.params.layout)
    hidden = np.tanh(x @ w["W1"].T + w["b1"])
    p = _softmax_rows(hidden @ w["W2"].T + w["b2"])
    p[np.arange(len(batch)), batch.labels] -= 1.0
    p /= len(batch)
    g_w2 = p.T @ hidden
    g_b2 = p.sum(axis=0)
    back = (p @ w["W2"]) * (1.0 - hidden * hidden)
    g_w1 = back.T @ x
    g_b1 = back.sum(axis=0)
    flat = np.concatenate(
        [g_w1.reshape(-1), g_b1, g_w2.reshape(-1), g_b2]
    )
    return ParameterVector(flat, model.params.layout)


def sgd_step(params: ParameterVector, gradient: ParameterVector,
             lr: float) -> ParameterVector:
    if lr < 0:
        raise ValueError("negative learning rate")
    return params - lr * gradient


def batch_order(count: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(count)
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def train_local(model: Model, data: Dataset, epochs: int, lr: float,
                batch_size: int, rng: np.random.Generator) -> ParameterVector:
    """Benign participant update: epochs of shuffled minibatch SGD.

    Starts from model.params (the received global weights) and returns the
    locally trained vector; the model is not modified.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if epochs < 0:
        raise ValueError("negative epoch count")
    local = model.params.copy()
    for _ in range(epochs):
        for idx in batch_order(len(data), batch_size, rng):
            g = grad(with_params(model, local), data.subset(idx))
            local = sgd_step(local, g, lr)
    return local


def predict(model: Model, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(batch_logits(model, features), axis=1)


def accuracy(model: Model, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(model, data.features) == data.labels))
