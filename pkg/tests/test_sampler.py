from dataclasses import replace

import numpy as np
import pytest

from chameleon.core.errors import ConfigError, ContractError, DataError, SamplingError
from chameleon.core.sampler import (
    feature_count_range, load_table, load_task_cache, make_split, oracle_task, pad_task,
    sample_eval_tasks, sample_test_task, sample_train_task, save_task_cache, task_cache_key,
)
from chameleon.core.schemas import Mode, SamplerConfig
from conftest import synthetic_table, write_csv


@pytest.fixture
def rng():
    return np.random.default_rng(11)


# --- Ingestion ---

def test_load_table_normalizes_and_codes_labels(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("a,b,label\n1,10,yes\n3,10,no\n2,10,yes\n")
    table = load_table(path)
    assert table.name == "tiny"
    assert table.classes == ["no", "yes"]
    assert table.y.tolist() == [1, 0, 1]
    assert table.x[:, 0].tolist() == [0.0, 1.0, 0.5]
    assert not table.x[:, 1].any()  # constant column


def test_load_table_rejects_text_features(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,label\nx,1\ny,0\n")
    with pytest.raises(DataError):
        load_table(path)


def test_load_table_rejects_single_class(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("a,label\n1,1\n2,1\n")
    with pytest.raises(DataError):
        load_table(path)


def test_load_table_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_table(tmp_path / "nope.csv")


def test_csv_round_trip_keeps_shape(tmp_path, table):
    loaded = load_table(write_csv(tmp_path / "synthetic.csv", table))
    assert (loaded.n_instances, loaded.n_features, loaded.n_classes) == (120, 6, 2)


# --- Splits ---

def test_nosplit_is_stratified_and_disjoint(table):
    split = make_split(table, Mode.NOSPLIT, seed=0)
    assert not set(split.train_instances) & set(split.test_instances)
    assert len(split.train_instances) + len(split.test_instances) == table.n_instances
    for c in range(table.n_classes):
        assert np.sum(table.y[split.train_instances] == c) == 45  # round(0.75 * 60)
    assert split.train_features == tuple(range(6))
    assert split.test_features == ()


def test_split_reserves_ceil_fifth_of_features():
    table = synthetic_table(n_features=8)
    split = make_split(table, Mode.SPLIT, seed=1)
    assert len(split.test_features) == 2  # ceil(0.2 * 8)
    assert sorted(split.train_features + split.test_features) == list(range(8))


def test_split_needs_five_features():
    with pytest.raises(ConfigError):
        make_split(synthetic_table(n_features=4), Mode.SPLIT, seed=0)


def test_split_is_deterministic(table):
    a, b = make_split(table, Mode.NOSPLIT, 5), make_split(table, Mode.NOSPLIT, 5)
    assert np.array_equal(a.train_instances, b.train_instances)


# --- Tasks ---

@pytest.mark.parametrize("n_features, expected", [(6, (3, 3)), (10, (4, 6)), (2, (1, 1)), (1, (1, 1))])
def test_feature_count_range(n_features, expected):
    assert feature_count_range(n_features, SamplerConfig()) == expected


def test_train_task_shapes_and_targets(table, small_sampler, rng):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    task = sample_train_task(table, split, rng, small_sampler)
    f = task.n_features
    assert task.x_train.shape == (10, f)
    assert task.x_test.shape == (10, f)
    assert task.pi_true.shape == (f, 6)
    assert np.array_equal(task.pi_true.argmax(axis=1), task.feature_indices)
    # Grouped by class: five shots of class 0 then five of class 1.
    assert task.y_train.argmax(axis=1).tolist() == [0] * 5 + [1] * 5
    assert set(task.train_instances) <= set(split.train_instances)
    assert not set(task.train_instances) & set(task.test_instances)


def test_train_tasks_never_use_reserved_features(small_sampler, rng):
    table = synthetic_table(n_features=10)
    split = make_split(table, Mode.SPLIT, seed=0, config=small_sampler)
    for _ in range(30):
        task = sample_train_task(table, split, rng, small_sampler)
        assert not set(task.feature_indices) & set(split.test_features)


def test_split_test_tasks_mix_in_unseen_features(small_sampler, rng):
    table = synthetic_table(n_features=10)
    split = make_split(table, Mode.SPLIT, seed=0, config=small_sampler)
    for _ in range(30):
        task = sample_test_task(table, split, rng, small_sampler)
        unseen = set(task.feature_indices) & set(split.test_features)
        assert len(unseen) >= 1
        assert set(task.test_instances) <= set(split.test_instances)


def test_sampling_error_when_class_too_small(rng):
    table = synthetic_table(per_class=12)
    split = make_split(table, Mode.NOSPLIT, seed=0)
    with pytest.raises(SamplingError):
        sample_test_task(table, split, rng, SamplerConfig())


def test_eval_tasks_depend_only_on_split(table, small_sampler):
    split = make_split(table, Mode.NOSPLIT, seed=2, config=small_sampler)
    a = sample_eval_tasks(table, split, 5, small_sampler)
    b = sample_eval_tasks(table, split, 5, small_sampler)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.feature_indices, tb.feature_indices)
        assert np.array_equal(ta.x_test, tb.x_test)


# --- Baseline layouts ---

def test_pad_task_keeps_order(table, small_sampler, rng):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    task = sample_train_task(table, split, rng, small_sampler)
    padded = pad_task(task)
    f = task.n_features
    assert padded.x_train.shape == (10, 6)
    assert np.array_equal(padded.x_train[:, :f], task.x_train)
    assert not padded.x_train[:, f:].any()


def test_pad_task_full_width_is_unchanged(table, small_sampler, rng):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    task = sample_train_task(table, split, rng, small_sampler)
    full = replace(oracle_task(task), feature_indices=np.arange(6), pi_true=np.eye(6))
    assert pad_task(full) is full


def test_pad_task_rejects_too_many_features(table, small_sampler, rng):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    task = sample_train_task(table, split, rng, small_sampler)
    narrow = replace(task, pi_true=task.pi_true[:, :1])
    with pytest.raises(ContractError):
        pad_task(narrow)


def test_oracle_task_places_canonical_columns(table, small_sampler, rng):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    task = sample_train_task(table, split, rng, small_sampler)
    placed = oracle_task(task)
    for j, feature in enumerate(task.feature_indices):
        assert np.array_equal(placed.x_train[:, feature], task.x_train[:, j])
    unused = sorted(set(range(6)) - set(task.feature_indices))
    assert not placed.x_train[:, unused].any()


# --- Cache ---

def test_task_cache_round_trip(tmp_path, table, small_sampler):
    split = make_split(table, Mode.NOSPLIT, seed=0, config=small_sampler)
    tasks = sample_eval_tasks(table, split, 4, small_sampler)
    path = save_task_cache(tasks, tmp_path / "tasks.npz", {'seed': 0})
    loaded = load_task_cache(path)
    assert len(loaded) == 4
    for a, b in zip(tasks, loaded):
        assert np.array_equal(a.x_train, b.x_train)
        assert np.array_equal(a.y_test, b.y_test)
        assert np.array_equal(a.pi_true, b.pi_true)
        assert np.array_equal(a.test_instances, b.test_instances)
    assert task_cache_key(path) == {'seed': 0}
