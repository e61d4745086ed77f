import os
import sys

import numpy as np
import pytest

# Adjust path to include the package
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from chameleon.core.schemas import DatasetTable, SamplerConfig


def synthetic_table(n_features=6, n_classes=2, per_class=60, seed=0, name="synthetic") -> DatasetTable:
    """
    Feature j lives in [j/F, (j+1)/F], so every feature has its own value range and the
    encoder can tell them apart. The label is whether the mean in-range offset is high.
    """
    rng = np.random.default_rng(seed)
    n = per_class * n_classes
    offsets = rng.uniform(0.0, 1.0, size=(n, n_features))
    score = offsets.mean(axis=1)
    # Equal-sized classes by score quantile.
    order = np.argsort(score, kind="stable")
    y = np.empty(n, dtype=int)
    for c in range(n_classes):
        y[order[c * per_class:(c + 1) * per_class]] = c
    x = (np.arange(n_features)[None, :] + offsets) / n_features
    return DatasetTable(
        name=name,
        x=x,
        y=y,
        classes=[str(c) for c in range(n_classes)],
        feature_names=[f"f{j}" for j in range(n_features)],
    )


def finite_difference(f, value: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function f with respect to every entry of `value`."""
    grad = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        old = value[idx]
        value[idx] = old + h
        up = f()
        value[idx] = old - h
        down = f()
        value[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def write_csv(path, table: DatasetTable) -> str:
    header = ",".join(table.feature_names + ["label"])
    lines = [header] + [
        ",".join(f"{v:.10f}" for v in row) + f",{table.classes[c]}" for row, c in zip(table.x, table.y)
    ]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def table():
    return synthetic_table()


@pytest.fixture
def small_sampler():
    return SamplerConfig(shots_train=5, shots_test=5)
