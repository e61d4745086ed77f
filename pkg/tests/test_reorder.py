import numpy as np
import pytest

from chameleon.core.encoder import EncoderParams, phi_forward
from chameleon.core.errors import DimensionError, TrainingError
from chameleon.core.reorder import reorder_loss, reorder_train
from chameleon.core.sampler import make_split
from chameleon.core.schemas import Mode, ReorderTrainConfig


@pytest.fixture
def setup(table, small_sampler):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    encoder = EncoderParams.initialize(small_sampler.shots_train * table.n_classes, table.n_features,
                                       np.random.default_rng(0))
    return table, split, encoder, small_sampler


def test_loss_of_perfect_prediction_is_zero():
    target = np.eye(4)[[2, 0, 3]]
    assert reorder_loss(target, target).item() == pytest.approx(0.0)


def test_loss_of_uniform_prediction_is_log_k():
    target = np.eye(5)[[1, 4]]
    assert reorder_loss(np.full((2, 5), 0.2), target).item() == pytest.approx(np.log(5))


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        reorder_loss(np.full((2, 5), 0.2), np.eye(4)[[0, 1]])


def test_training_lowers_the_loss(setup):
    table, split, encoder, sampler = setup
    before = encoder.values()
    config = ReorderTrainConfig(pretrain_epochs=300, pretrain_lr=1e-2, log_every=0)
    trained, trace = reorder_train(encoder, table, split, config, sampler)

    assert len(trace) == 300
    assert np.all(np.isfinite(trace))
    assert np.mean(trace[-30:]) < np.mean(trace[:30])
    # The input encoder is left as it was.
    for name, value in encoder.values().items():
        assert np.array_equal(value, before[name])
    assert not np.array_equal(trained["enc.w1"].data, before["enc.w1"])


def test_training_is_deterministic(setup):
    table, split, encoder, sampler = setup
    config = ReorderTrainConfig(pretrain_epochs=20, pretrain_lr=1e-2, tasks_per_epoch=2, log_every=0)
    a, trace_a = reorder_train(encoder, table, split, config, sampler)
    b, trace_b = reorder_train(encoder, table, split, config, sampler)
    assert trace_a == trace_b
    assert np.array_equal(a["enc.w3"].data, b["enc.w3"].data)


def test_zero_epochs_returns_a_copy(setup):
    table, split, encoder, sampler = setup
    trained, trace = reorder_train(encoder, table, split, ReorderTrainConfig(pretrain_epochs=0), sampler)
    assert trace == []
    assert trained is not encoder
    assert np.array_equal(trained["enc.w2"].data, encoder["enc.w2"].data)


def test_divergence_raises_with_trace(setup):
    table, split, encoder, sampler = setup
    encoder["enc.w3"].data = np.full(encoder["enc.w3"].shape, np.nan)
    with pytest.raises(TrainingError) as info:
        reorder_train(encoder, table, split, ReorderTrainConfig(pretrain_epochs=5, log_every=0), sampler)
    assert info.value.trace == []
    assert info.value.exit_code == 4


def test_loss_is_invariant_under_a_shared_feature_permutation(table, small_sampler):
    n = small_sampler.shots_train * table.n_classes
    encoder = EncoderParams.initialize(n, 6, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(size=(n, 4))
        target = np.eye(6)[rng.choice(6, size=4, replace=False)]
        perm = rng.permutation(4)
        loss = reorder_loss(phi_forward(x, encoder), target).item()
        permuted = reorder_loss(phi_forward(x[:, perm], encoder), target[perm]).item()
        assert permuted == pytest.approx(loss, abs=1e-12)
