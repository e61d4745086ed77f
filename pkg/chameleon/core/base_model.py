import numpy as np

from chameleon.core.autodiff import (
    GridLike, ParamStore, Tensor, as_tensor, cross_entropy, glorot_init, linear, relu, softmax_rows,
)
from chameleon.core.errors import DimensionError

HIDDEN_UNITS = 16


class BaseModelParams(ParamStore):
    """theta_yhat: two dense ReLU layers of 16 units and a softmax output over C classes."""

    @classmethod
    def initialize(cls, n_positions: int, n_classes: int, rng: np.random.Generator) -> "BaseModelParams":
        params = cls()
        widths = (n_positions, HIDDEN_UNITS, HIDDEN_UNITS, n_classes)
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            params.add(f"yhat.w{i}", glorot_init(fan_out, fan_in, rng))
            params.add(f"yhat.b{i}", np.zeros((1, fan_out)))
        return params

    @property
    def n_positions(self) -> int:
        return self["yhat.w1"].cols

    @property
    def n_classes(self) -> int:
        return self["yhat.w3"].rows


def predict(x_aligned: GridLike, params: BaseModelParams) -> Tensor:
    """Class probabilities (N x C) for a block already laid out on the K shared positions."""
    x = as_tensor(x_aligned)
    if x.cols != params.n_positions:
        raise DimensionError(f"Base model expects {params.n_positions} columns, got {x.cols}")
    h = relu(linear(x, params["yhat.w1"], params["yhat.b1"]))
    h = relu(linear(h, params["yhat.w2"], params["yhat.b2"]))
    return softmax_rows(linear(h, params["yhat.w3"], params["yhat.b3"]))


def task_loss(params: BaseModelParams, x_aligned: GridLike, y_onehot: np.ndarray) -> Tensor:
    return cross_entropy(predict(x_aligned, params), y_onehot)


def accuracy(probs: GridLike, y_onehot: np.ndarray) -> float:
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return float((probs.argmax(axis=1) == np.asarray(y_onehot).argmax(axis=1)).mean())
