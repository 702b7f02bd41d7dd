"""Classifier forward/gradient math and the benign training loop."""
import numpy as np
import pytest

from conftest import fd_gradient, max_rel_error, random_batch, random_linear, random_mlp
from fedsim import nn
from fedsim.data import Dataset
from fedsim.params import ParameterVector


def test_zero_params_zero_logits():
    x = np.ones(10)
    assert np.array_equal(nn.forward(nn.linear_softmax(10, 4), x), np.zeros(4))
    assert np.array_equal(nn.forward(nn.mlp1(10, 4, 5), x), np.zeros(4))


def test_linear_forward_hand_case():
    model = nn.linear_softmax(2, 2)
    params = ParameterVector([1.0, 2.0, 3.0, 4.0, 0.5, -0.5], model.params.layout)
    got = nn.forward(nn.with_params(model, params), np.array([1.0, 1.0]))
    # W @ x + b with W rows (1,2) and (3,4)
    assert np.allclose(got, [3.5, 6.5])


def test_forward_rejects_bad_shapes():
    model = nn.linear_softmax(10, 4)
    with pytest.raises(ValueError):
        nn.forward(model, np.ones(7))
    with pytest.raises(ValueError):
        nn.forward(model, np.ones((2, 10)))


def test_loss_ce_uniform():
    assert nn.loss_ce(np.zeros(4), 0) == pytest.approx(np.log(4))


def test_loss_ce_saturated_no_overflow():
    assert nn.loss_ce(np.array([1000.0, 0.0]), 0) == pytest.approx(0.0, abs=1e-12)


def test_loss_ce_brute_force():
    logits = np.array([1.0, 2.0, 3.0])
    p = np.exp(logits) / np.exp(logits).sum()
    assert nn.loss_ce(logits, 2) == pytest.approx(-np.log(p[2]))


def test_loss_ce_rejects():
    with pytest.raises(ValueError):
        nn.loss_ce(np.zeros(3), 3)
    with pytest.raises(ValueError):
        nn.loss_ce(np.array([np.inf, 0.0]), 0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for make in (random_linear, random_mlp):
        for _ in range(5):
            model = make(rng)
            batch = random_batch(rng)

            def loss_at(values):
                pv = ParameterVector(values, model.params.layout)
                return nn.mean_loss(nn.with_params(model, pv), batch)

            analytic = nn.grad(model, batch).values
            numeric = fd_gradient(loss_at, model.params.values.copy())
            assert max_rel_error(analytic, numeric) < 1e-4


def test_gradient_flat_when_saturated():
    model = nn.linear_softmax(2, 2)
    params = ParameterVector([100.0, 0.0, -100.0, 0.0, 0.0, 0.0],
                             model.params.layout)
    batch = Dataset(np.array([[1.0, 0.0]]), np.array([0]))
    g = nn.grad(nn.with_params(model, params), batch)
    assert g.norm() < 1e-6


def test_gradient_duplication_invariant():
    rng = np.random.default_rng(11)
    model = random_linear(rng)
    batch = random_batch(rng, count=6)
    doubled = Dataset(np.concatenate([batch.features, batch.features]),
                      np.concatenate([batch.labels, batch.labels]))
    np.testing.assert_allclose(nn.grad(model, batch).values,
                               nn.grad(model, doubled).values, rtol=1e-12, atol=1e-15)


def test_gradient_rejects():
    model = nn.linear_softmax(10, 4)
    with pytest.raises(ValueError):
        nn.grad(model, Dataset(np.empty((0, 10)), np.empty(0, dtype=int)))
    with pytest.raises(ValueError):
        nn.grad(model, Dataset(np.ones((2, 10)), np.array([0, 9])))


def test_sgd_step():
    layout = (("w", (2,)),)
    p = ParameterVector([1.0, 1.0], layout)
    g = ParameterVector([2.0, -2.0], layout)
    assert np.array_equal(nn.sgd_step(p, g, 0.5).values, [0.0, 2.0])
    assert np.array_equal(nn.sgd_step(p, g, 0.0).values, p.values)
    with pytest.raises(ValueError):
        nn.sgd_step(p, g, -0.1)


def test_sgd_step_composes_linearly():
    rng = np.random.default_rng(2)
    layout = (("w", (8,)),)
    p = ParameterVector(rng.standard_normal(8), layout)
    g = ParameterVector(rng.standard_normal(8), layout)
    two = nn.sgd_step(nn.sgd_step(p, g, 0.3), g, 0.2)
    one = nn.sgd_step(p, g, 0.5)
    np.testing.assert_allclose(two.values, one.values, rtol=1e-12, atol=1e-15)


def test_sgd_descends_convex_loss():
    # cross-entropy is convex in a linear model's parameters
    rng = np.random.default_rng(5)
    model = random_linear(rng)
    batch = random_batch(rng, count=16)
    losses = [nn.mean_loss(model, batch)]
    for _ in range(50):
        model = nn.with_params(model, nn.sgd_step(model.params,
                                                  nn.grad(model, batch), 0.05))
        losses.append(nn.mean_loss(model, batch))
    for prev, cur in zip(losses, losses[1:]):
        assert cur <= prev + 1e-12


def test_train_local_identity_cases(small_blobs):
    model = nn.linear_softmax(10, 4)
    out = nn.train_local(model, small_blobs, epochs=0, lr=0.1, batch_size=32,
                         rng=np.random.default_rng(0))
    assert np.array_equal(out.values, model.params.values)
    out = nn.train_local(model, small_blobs, epochs=3, lr=0.0, batch_size=32,
                         rng=np.random.default_rng(0))
    assert np.array_equal(out.values, model.params.values)


def test_train_local_single_step_composition(small_blobs):
    data = small_blobs.subset(np.arange(20))
    model = nn.linear_softmax(10, 4)
    got = nn.train_local(model, data, epochs=1, lr=0.1, batch_size=50,
                         rng=np.random.default_rng(42))
    order = np.random.default_rng(42).permutation(len(data))
    expected = nn.sgd_step(model.params, nn.grad(model, data.subset(order)), 0.1)
    assert np.array_equal(got.values, expected.values)


def test_train_local_deterministic(small_blobs):
    model = nn.linear_softmax(10, 4)
    a = nn.train_local(model, small_blobs, 2, 0.1, 32, np.random.default_rng(9))
    b = nn.train_local(model, small_blobs, 2, 0.1, 32, np.random.default_rng(9))
    assert np.array_equal(a.values, b.values)


def test_train_local_rejects_empty():
    model = nn.linear_softmax(10, 4)
    empty = Dataset(np.empty((0, 10)), np.empty(0, dtype=int))
    with pytest.raises(ValueError):
        nn.train_local(model, empty, 1, 0.1, 32, np.random.default_rng(0))


def test_batch_order_covers_everything():
    batches = nn.batch_order(10, 4, np.random.default_rng(1))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches)) == list(range(10))
    with pytest.raises(ValueError):
        nn.batch_order(10, 0, np.random.default_rng(1))


def test_predict_ties_break_low():
    model = nn.linear_softmax(10, 4)
    data = Dataset(np.ones((8, 10)), np.array([0, 0, 1, 1, 2, 2, 3, 3]))
    assert np.array_equal(nn.predict(model, data.features), np.zeros(8))
    # constant class-0 output on a balanced 4-class set
    assert nn.accuracy(model, data) == 0.25


def test_accuracy_matches_manual_count():
    rng = np.random.default_rng(3)
    model = random_linear(rng)
    data = random_batch(rng, count=40)
    manual = np.mean([
        int(np.argmax(nn.forward(model, x)) == y)
        for x, y in zip(data.features, data.labels)
    ])
    assert nn.accuracy(model, data) == pytest.approx(manual)


def test_accuracy_rejects_empty():
    with pytest.raises(ValueError):
        nn.accuracy(nn.linear_softmax(10, 4),
                    Dataset(np.empty((0, 10)), np.empty(0, dtype=int)))


def test_model_constructors_validate():
    with pytest.raises(ValueError):
        nn.mlp1(10, 4, 0)
    with pytest.raises(ValueError):
        nn.model_layout("conv", 10, 4)
    model = nn.linear_softmax(10, 4)
    wrong = ParameterVector(np.zeros(4), (("W", (2, 2)),))
    with pytest.raises(ValueError):
        nn.with_params(model, wrong)
    with pytest.raises(ValueError):
        nn.init_params(nn.mlp1(10, 4, 3))


def test_forward_and_loss_deterministic():
    rng = np.random.default_rng(13)
    model = random_mlp(rng)
    x = rng.standard_normal(10)
    a, b = nn.forward(model, x), nn.forward(model, x)
    assert np.array_equal(a, b)
    assert nn.loss_ce(a, 1) == nn.loss_ce(b, 1)
