from dataclasses import replace

import numpy as np

from chameleon.core.autodiff import (
    GridLike, ParamStore, Tensor, as_tensor, glorot_init, linear, matmul, relu, softmax_rows, transpose,
)
from chameleon.core.errors import DimensionError, ShapeError
from chameleon.core.logger import setup_logger
from chameleon.core.sampler import sample_train_task

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Chameleon Encoder
# =================================================================================================
#
# JOB:
# Maps a task block X (N instances x F features) to a reordering matrix PI (F x K) whose row j
# says how much of feature j is shifted to each of the K shared positions, then aligns the block:
# X_aligned = X @ PI (N x K).
#
# ARCHITECTURE:
# Each feature, seen as its N-vector of instance values, goes independently through the same
# three pointwise layers N -> 8 -> 16 -> K (ReLU, ReLU, row softmax). Because the map is shared
# across features:
# - permuting X's columns permutes PI's rows the same way (equivariance), and
# - X @ PI is unchanged by that permutation (invariance of enc).
#
# CONSTRAINT:
# The first layer consumes exactly N values per feature, so every block passed in must have the
# instance count the encoder was built for. PI is recomputed for every block (train block during
# adaptation, test block during evaluation); nothing is cached between them.
#
# =================================================================================================

HIDDEN_WIDTHS = (8, 16)


class EncoderParams(ParamStore):
    """theta_enc: enc.w1 (8 x N), enc.w2 (16 x 8), enc.w3 (K x 16) and their bias rows."""

    @classmethod
    def initialize(cls, n_instances: int, n_positions: int, rng: np.random.Generator) -> "EncoderParams":
        params = cls()
        widths = (n_instances,) + HIDDEN_WIDTHS + (n_positions,)
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            params.add(f"enc.w{i}", glorot_init(fan_out, fan_in, rng))
            params.add(f"enc.b{i}", np.zeros((1, fan_out)))
        return params

    @property
    def n_instances(self) -> int:
        return self["enc.w1"].cols

    @property
    def n_positions(self) -> int:
        return self["enc.w3"].rows


def phi_forward(x: GridLike, params: EncoderParams) -> Tensor:
    """Reordering matrix (F x K) for the block `x` (N x F); every row sums to 1."""
    x = as_tensor(x)
    if x.rows != params.n_instances:
        raise ShapeError(
            f"Encoder expects blocks of {params.n_instances} instances, got {x.rows}"
        )
    if x.cols < 1:
        raise ShapeError("Encoder needs at least one feature")
    h = transpose(x)  # F x N: one row per feature
    h = relu(linear(h, params["enc.w1"], params["enc.b1"]))
    h = relu(linear(h, params["enc.w2"], params["enc.b2"]))
    return softmax_rows(linear(h, params["enc.w3"], params["enc.b3"]))


def align(x: GridLike, pi: GridLike) -> Tensor:
    """x_aligned[m, n] = sum_j x[m, j] * pi[j, n]."""
    x, pi = as_tensor(x), as_tensor(pi)
    if pi.rows != x.cols:
        raise DimensionError(f"Reordering matrix has {pi.rows} rows for {x.cols} features")
    return matmul(x, pi)


def enc(x: GridLike, params: EncoderParams) -> Tensor:
    x = as_tensor(x)
    return align(x, phi_forward(x, params))


def heatmap(table, split, params: EncoderParams, n_tasks: int, rng: np.random.Generator,
            sampler_config=None) -> np.ndarray:
    """
    Average feature shift (K x K): row i is the mean predicted PI row of canonical feature i
    over `n_tasks` permuted-subset tasks. Features never sampled keep an all-zero row.

    Tasks are drawn from every feature of the dataset (training instances only), so in Split
    mode the rows of reserved features show how the encoder places unseen features.
    """
    all_features = tuple(range(table.n_features))
    view = replace(split, train_features=all_features, test_features=())
    k = params.n_positions
    totals = np.zeros((k, k))
    counts = np.zeros(k)

    for _ in range(n_tasks):
        task = sample_train_task(table, view, rng, sampler_config)
        pi = phi_forward(task.x_train, params).data
        for row, feature in enumerate(task.feature_indices):
            totals[feature] += pi[row]
            counts[feature] += 1

    seen = counts > 0
    totals[seen] /= counts[seen][:, None]
    if not seen.all():
        logger.info(f"Heat map: {int((~seen).sum())} feature(s) never sampled in {n_tasks} tasks")
    return totals


def recovery_rate(tasks, params: EncoderParams) -> float:
    """Share of feature occurrences whose argmax position matches the canonical index."""
    hits, total = 0, 0
    for task in tasks:
        pi = phi_forward(task.x_train, params).data
        hits += int((pi.argmax(axis=1) == task.feature_indices).sum())
        total += task.n_features
    return hits / total if total else 0.0
