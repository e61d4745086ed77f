import json
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from chameleon.core.config import MAX_RECOMMENDED_FEATURES, MIN_CLASS_INSTANCES
from chameleon.core.errors import ConfigError, ContractError, DataError, SamplingError
from chameleon.core.logger import setup_logger
from chameleon.core.schemas import DatasetTable, Mode, SamplerConfig, SplitSpec, Task
from chameleon.core.utils import atomic_write_npz, derive_rng, frac_ceil, frac_floor, round_half_up

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Task Sampler
# =================================================================================================
#
# JOB:
# Builds the meta-dataset out of ONE tabular dataset: every task is a handful of instances per
# class over a random subset of the features in random order. Because all tasks come from the
# same table, the true position of every sampled feature is known, which gives the reordering
# targets (pi_true) for free.
#
# DATA FLOW:
# load_table (normalize) -> make_split (instances 75/25, Split mode reserves 20% of features)
#   -> sample_train_task / sample_test_task -> pad_task / oracle_task for the baselines.
#
# KEY CONCEPTS:
# - K (n_positions) is the full feature count of the dataset, so even reserved features have a
#   canonical position.
# - Blocks are grouped by class (class 0 shots, class 1 shots, ...): the encoder reads instances
#   as ordered channels, so the sampler fixes that order.
# - Determinism: every function that draws takes an explicit numpy Generator.
#
# =================================================================================================

# Name, instances, features, classes of the benchmark datasets the protocol was defined on.
KNOWN_DATASETS = {
    'phoneme': (5404, 5, 2),
    'cmc': (1473, 24, 3),
    'vowel': (990, 27, 11),
    'analcatdata-dmft': (797, 21, 6),
    'tic-tac-toe': (958, 27, 2),
    'banknote-authentication': (1372, 4, 2),
    'wdbc': (569, 30, 2),
    'diabetes': (768, 8, 2),
    'segment': (2310, 16, 7),
    'MagicTelescope': (19020, 10, 2),
    'blood-transfusion-service-center': (748, 4, 2),
    'wall-robot-navigation': (5456, 24, 4),
    'wilt': (4839, 5, 2),
    'pendigits': (10992, 16, 10),
    'GesturePhaseSegmentationProcessed': (9873, 32, 5),
    'abalone': (4177, 10, 3),
    'jungle-chess-2pcs-raw-endgame-complete': (44819, 6, 3),
    'letter': (20000, 16, 26),
    'ilpd': (583, 11, 2),
    'wine-quality': (6497, 11, 5),
    'mfeat-morphological': (2000, 6, 10),
    'electricity': (45312, 14, 2),
    'vehicle': (846, 18, 4),
}

MIN_SPLIT_FEATURES = 5
CACHE_FORMAT = "chameleon-task-cache"
CACHE_VERSION = 1


# --- Ingestion ---

def normalize_columns(x: np.ndarray) -> np.ndarray:
    """Min-max scaling per column to [0, 1]; constant columns become 0."""
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def table_from_frame(frame: pd.DataFrame, name: str) -> DatasetTable:
    if frame.shape[0] == 0:
        raise DataError(f"{name}: no rows")
    if frame.shape[1] < 2:
        raise DataError(f"{name}: need at least one feature column and a label column")

    features = frame.iloc[:, :-1]
    labels = frame.iloc[:, -1]
    try:
        x = features.apply(pd.to_numeric, errors='raise').to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise DataError(f"{name}: non-numeric feature value ({e})")
    if not np.isfinite(x).all():
        raise DataError(f"{name}: missing or infinite feature values")
    if labels.isna().any():
        raise DataError(f"{name}: missing labels")

    # Labels are categorical: integers and strings are both kept as their text form.
    label_text = labels.astype(str).str.strip()
    classes = sorted(label_text.unique())
    if len(classes) < 2:
        raise DataError(f"{name}: the label column has a single class")
    codes = {c: i for i, c in enumerate(classes)}
    y = label_text.map(codes).to_numpy(dtype=int)

    table = DatasetTable(
        name=name,
        x=normalize_columns(x),
        y=y,
        classes=classes,
        feature_names=[str(c) for c in features.columns],
    )
    _check_admission(table)
    return table


def _check_admission(table: DatasetTable) -> None:
    if table.n_features > MAX_RECOMMENDED_FEATURES:
        logger.warning(
            f"{table.name}: {table.n_features} features exceed the protocol's limit of "
            f"{MAX_RECOMMENDED_FEATURES}; continuing"
        )
    counts = np.bincount(table.y, minlength=table.n_classes)
    small = [table.classes[i] for i, c in enumerate(counts) if c < MIN_CLASS_INSTANCES]
    if small:
        logger.warning(f"{table.name}: classes {small} have fewer than {MIN_CLASS_INSTANCES} instances")
    known = KNOWN_DATASETS.get(table.name)
    if known and known != (table.n_instances, table.n_features, table.n_classes):
        logger.warning(
            f"{table.name}: shape {(table.n_instances, table.n_features, table.n_classes)} "
            f"differs from the benchmark's {known}"
        )


def load_table(path) -> DatasetTable:
    """
    Reads a comma-delimited file with a header row; the last column is the class label.
    Feature columns are min-max normalized to [0, 1].
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, header=0, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: could not parse ({e})")
    table = table_from_frame(frame, path.stem)
    logger.info(
        f"Loaded {table.name}: {table.n_instances} instances, {table.n_features} features, "
        f"{table.n_classes} classes"
    )
    return table


# --- Splits ---

def make_split(table: DatasetTable, mode: Mode, seed: int, config: Optional[SamplerConfig] = None) -> SplitSpec:
    """
    Deterministic instance split (stratified per class) and, in Split mode, a feature split
    reserving ceil(20%) of the features for test tasks.
    """
    config = config or SamplerConfig()
    mode = Mode(mode)
    if mode is Mode.SPLIT and table.n_features < MIN_SPLIT_FEATURES:
        raise ConfigError(
            f"{table.name}: split mode needs at least {MIN_SPLIT_FEATURES} features, has {table.n_features}"
        )
    rng = derive_rng(seed, "split")

    train_idx, test_idx = [], []
    for c in range(table.n_classes):
        members = rng.permutation(np.flatnonzero(table.y == c))
        n_train = round_half_up(config.train_instance_frac * len(members))
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])

    features = np.arange(table.n_features)
    reserved: tuple = ()
    if mode is Mode.SPLIT:
        n_reserved = frac_ceil(config.reserved_feature_frac, table.n_features)
        reserved = tuple(sorted(int(f) for f in rng.choice(features, n_reserved, replace=False)))
    kept = tuple(int(f) for f in features if f not in reserved)

    return SplitSpec(
        mode=mode,
        seed=seed,
        train_instances=np.sort(np.concatenate(train_idx)),
        test_instances=np.sort(np.concatenate(test_idx)),
        train_features=kept,
        test_features=reserved,
    )


# --- Tasks ---

def feature_count_range(n_train_features: int, config: SamplerConfig):
    lo = max(1, frac_ceil(config.min_feature_frac, n_train_features))
    hi = max(lo, frac_floor(config.max_feature_frac, n_train_features))
    return lo, min(hi, n_train_features)


def reordering_target(feature_indices: Sequence[int], n_positions: int) -> np.ndarray:
    """One-hot F x K matrix: row j marks the canonical position of feature_indices[j]."""
    pi = np.zeros((len(feature_indices), n_positions))
    pi[np.arange(len(feature_indices)), np.asarray(feature_indices, dtype=int)] = 1.0
    return pi


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _draw_instances(table: DatasetTable, pool: np.ndarray, rng: np.random.Generator, config: SamplerConfig):
    train_rows, test_rows = [], []
    need = config.shots_train + config.shots_test
    for c in range(table.n_classes):
        members = pool[table.y[pool] == c]
        if len(members) < need:
            raise SamplingError(
                f"{table.name}: class '{table.classes[c]}' has {len(members)} instances in the pool, "
                f"a task needs {need}"
            )
        picked = rng.choice(members, need, replace=False)
        train_rows.append(picked[:config.shots_train])
        test_rows.append(picked[config.shots_train:])
    return np.concatenate(train_rows), np.concatenate(test_rows)


def build_task(table: DatasetTable, features: np.ndarray, train_rows: np.ndarray, test_rows: np.ndarray) -> Task:
    features = np.asarray(features, dtype=int)
    return Task(
        x_train=table.x[np.ix_(train_rows, features)],
        y_train=_one_hot(table.y[train_rows], table.n_classes),
        x_test=table.x[np.ix_(test_rows, features)],
        y_test=_one_hot(table.y[test_rows], table.n_classes),
        feature_indices=features,
        pi_true=reordering_target(features, table.n_features),
        train_instances=np.asarray(train_rows, dtype=int),
        test_instances=np.asarray(test_rows, dtype=int),
    )


def sample_train_task(table: DatasetTable, split: SplitSpec, rng: np.random.Generator,
                      config: Optional[SamplerConfig] = None) -> Task:
    """Random 40-60% subset of the training features, in random order, over training instances."""
    config = config or SamplerConfig()
    pool = np.asarray(split.train_features, dtype=int)
    lo, hi = feature_count_range(len(pool), config)
    n = int(rng.integers(lo, hi + 1))
    features = rng.choice(pool, n, replace=False)
    train_rows, test_rows = _draw_instances(table, split.train_instances, rng, config)
    return build_task(table, features, train_rows, test_rows)


def sample_test_task(table: DatasetTable, split: SplitSpec, rng: np.random.Generator,
                     config: Optional[SamplerConfig] = None) -> Task:
    """
    Task over test instances only. In Split mode 20% of the sampled features (at least one)
    come from the reserved features, the rest from the training features.
    """
    config = config or SamplerConfig()
    seen = np.asarray(split.train_features, dtype=int)
    lo, hi = feature_count_range(len(seen), config)
    n = int(rng.integers(lo, hi + 1))

    if split.mode is Mode.SPLIT and split.test_features:
        unseen = np.asarray(split.test_features, dtype=int)
        n_unseen = min(len(unseen), max(1, round_half_up(config.test_feature_quota * n)))
        n_seen = min(len(seen), n - n_unseen)
        features = np.concatenate([
            rng.choice(unseen, n_unseen, replace=False),
            rng.choice(seen, n_seen, replace=False),
        ])
        features = rng.permutation(features)
    else:
        features = rng.choice(seen, n, replace=False)

    train_rows, test_rows = _draw_instances(table, split.test_instances, rng, config)
    return build_task(table, features, train_rows, test_rows)


def sample_eval_tasks(table: DatasetTable, split: SplitSpec, n_tasks: int,
                      config: Optional[SamplerConfig] = None) -> List[Task]:
    """The fixed evaluation set of a run; (table, mode, seed) determine it completely."""
    rng = derive_rng(split.seed, "eval-tasks")
    return [sample_test_task(table, split, rng, config) for _ in range(n_tasks)]


def pad_task(task: Task) -> Task:
    """Zero-pads both blocks on the right to K columns, keeping the sampled order."""
    k, f = task.n_positions, task.n_features
    if f > k:
        raise ContractError(f"Cannot pad {f} features into {k} positions")
    if f == k:
        return task
    pad = lambda x: np.hstack([x, np.zeros((x.shape[0], k - f))])
    return replace(task, x_train=pad(task.x_train), x_test=pad(task.x_test))


def oracle_task(task: Task) -> Task:
    """Places every sampled feature at its canonical column, zeros elsewhere."""
    def place(x):
        out = np.zeros((x.shape[0], task.n_positions))
        out[:, task.feature_indices] = x
        return out
    return replace(task, x_train=place(task.x_train), x_test=place(task.x_test))


# --- Evaluation-task cache ---

def save_task_cache(tasks: List[Task], path, key: Optional[dict] = None) -> str:
    """
    Stores tasks of varying width in one .npz: blocks are concatenated column-wise and
    `offsets` marks where each task's features start.
    """
    if not tasks:
        raise ContractError("Refusing to cache an empty task list")
    widths = [t.n_features for t in tasks]
    header = {
        'format': CACHE_FORMAT,
        'version': CACHE_VERSION,
        'n_positions': tasks[0].n_positions,
        'key': key or {},
    }
    return atomic_write_npz(path, {
        '__header__': np.array(json.dumps(header, sort_keys=True)),
        'offsets': np.concatenate([[0], np.cumsum(widths)]),
        'x_train': np.hstack([t.x_train for t in tasks]),
        'x_test': np.hstack([t.x_test for t in tasks]),
        'y_train': np.stack([t.y_train for t in tasks]),
        'y_test': np.stack([t.y_test for t in tasks]),
        'feature_indices': np.concatenate([t.feature_indices for t in tasks]),
        'train_instances': np.stack([t.train_instances for t in tasks]),
        'test_instances': np.stack([t.test_instances for t in tasks]),
    })


def load_task_cache(path) -> List[Task]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data['__header__']))
        if header.get('format') != CACHE_FORMAT or header.get('version', 0) > CACHE_VERSION:
            raise DataError(f"{path}: not a readable task cache")
        k = header['n_positions']
        offsets = data['offsets']
        tasks = []
        for i in range(len(offsets) - 1):
            cols = slice(offsets[i], offsets[i + 1])
            features = data['feature_indices'][cols].astype(int)
            tasks.append(Task(
                x_train=data['x_train'][:, cols].copy(),
                y_train=data['y_train'][i].copy(),
                x_test=data['x_test'][:, cols].copy(),
                y_test=data['y_test'][i].copy(),
                feature_indices=features,
                pi_true=reordering_target(features, k),
                train_instances=data['train_instances'][i].astype(int),
                test_instances=data['test_instances'][i].astype(int),
            ))
    return tasks


def task_cache_key(path) -> dict:
    """The `key` a cache file was written with (empty for caches written without one)."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data['__header__']))
    if header.get('format') != CACHE_FORMAT:
        raise DataError(f"{path}: not a readable task cache")
    return header.get('key', {})
