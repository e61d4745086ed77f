import numpy as np
import pytest

from chameleon.core.autodiff import AdamState, adam_step, backward
from chameleon.core.base_model import BaseModelParams, accuracy, predict, task_loss
from chameleon.core.errors import DimensionError
from conftest import finite_difference


@pytest.fixture
def params():
    return BaseModelParams.initialize(n_positions=6, n_classes=3, rng=np.random.default_rng(0))


def test_initialize_shapes(params):
    assert params["yhat.w1"].shape == (16, 6)
    assert params["yhat.w2"].shape == (16, 16)
    assert params["yhat.w3"].shape == (3, 16)
    assert not params["yhat.b1"].data.any()
    assert (params.n_positions, params.n_classes) == (6, 3)


def test_predict_outputs_probabilities(params):
    probs = predict(np.random.default_rng(1).uniform(size=(20, 6)), params).data
    assert probs.shape == (20, 3)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_predict_rejects_wrong_width(params):
    with pytest.raises(DimensionError):
        predict(np.ones((4, 5)), params)


def test_task_loss_gradients(params):
    rng = np.random.default_rng(2)
    for name in params.names():
        params[name].data = params[name].data + rng.normal(size=params[name].shape) * 0.1
    x = rng.uniform(size=(20, 6))
    y = np.eye(3)[rng.integers(0, 3, size=20)]

    params.zero_grad()
    backward(task_loss(params, x, y))
    for name in params.names():
        numeric = finite_difference(lambda: task_loss(params, x, y).item(), params[name].data)
        assert np.allclose(params[name].grad, numeric, rtol=1e-4, atol=1e-7), name


def test_accuracy():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    y = np.eye(2)[[0, 1, 1, 1]]
    assert accuracy(probs, y) == 0.75


def test_zero_weights_predict_uniform(params):
    params.load({name: np.zeros(value.shape) for name, value in params.values().items()})
    probs = predict(np.random.default_rng(4).normal(size=(5, 6)), params).data
    assert np.allclose(probs, 1 / 3)


def test_adam_fits_a_separable_task():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 2, size=100)
    x = rng.normal(scale=0.5, size=(100, 2)) + np.where(labels[:, None] == 1, 2.0, -2.0)
    y = np.eye(2)[labels]
    params = BaseModelParams.initialize(n_positions=2, n_classes=2, rng=rng)
    state = AdamState()
    for _ in range(200):
        params.zero_grad()
        backward(task_loss(params, x, y))
        adam_step(params, state, lr=1e-2)
    assert accuracy(predict(x, params), y) >= 0.95
