from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, TypedDict

import numpy as np

from chameleon.core.config import PROTOCOL


class Mode(str, Enum):
    SPLIT = "split"
    NOSPLIT = "nosplit"


class Variant(str, Enum):
    RANDOM = "random"
    YHAT_PAD = "yhat"
    UNTRAIN = "untrain"
    FULL = "full"
    FROZEN = "frozen"
    ORACLE = "oracle"

    @classmethod
    def parse(cls, value: str) -> "Variant":
        return cls(value.strip().lower())


@dataclass
class SamplerConfig:
    shots_train: int = PROTOCOL['shots_train']
    shots_test: int = PROTOCOL['shots_test']
    train_instance_frac: float = PROTOCOL['train_instance_frac']
    reserved_feature_frac: float = PROTOCOL['reserved_feature_frac']
    min_feature_frac: float = PROTOCOL['min_feature_frac']
    max_feature_frac: float = PROTOCOL['max_feature_frac']
    test_feature_quota: float = PROTOCOL['test_feature_quota']


@dataclass
class ReorderTrainConfig:
    pretrain_epochs: int = PROTOCOL['pretrain_epochs']
    pretrain_lr: float = PROTOCOL['pretrain_lr']
    tasks_per_epoch: int = PROTOCOL['tasks_per_epoch']
    seed: int = 0
    log_every: int = 500


@dataclass
class MetaConfig:
    inner_lr: float = PROTOCOL['inner_lr']
    meta_lr: float = PROTOCOL['meta_lr']
    inner_steps: int = PROTOCOL['inner_steps']
    meta_batch_size: int = PROTOCOL['meta_batch_size']
    meta_epochs: int = PROTOCOL['meta_epochs']
    eval_steps: int = PROTOCOL['eval_steps']
    inner_optimizer: str = PROTOCOL['inner_optimizer']  # adam | sgd
    eval_every: int = 500       # meta-epochs between monitor evaluations (0 disables)
    monitor_tasks: int = 32     # evaluation tasks used for the monitor columns of the trace
    seed: int = 0
    log_every: int = 500


@dataclass
class DatasetTable:
    """A normalized tabular dataset; labels are integer codes into `classes`."""
    name: str
    x: np.ndarray                      # N_total x F_full, every column in [0, 1]
    y: np.ndarray                      # N_total integer class codes
    classes: List[str]
    feature_names: List[str]

    @property
    def n_instances(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass
class SplitSpec:
    mode: Mode
    seed: int
    train_instances: np.ndarray
    test_instances: np.ndarray
    train_features: Tuple[int, ...]
    test_features: Tuple[int, ...] = ()


@dataclass
class Task:
    """
    One few-shot episode. Blocks hold `shots * C` rows grouped by class; columns follow
    `feature_indices`, the canonical indices of the sampled features in sampled order.
    """
    x_train: np.ndarray
    y_train: np.ndarray                # one-hot N x C
    x_test: np.ndarray
    y_test: np.ndarray
    feature_indices: np.ndarray
    pi_true: np.ndarray                # one-hot F x K
    train_instances: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    test_instances: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_features(self) -> int:
        return len(self.feature_indices)

    @property
    def n_positions(self) -> int:
        return self.pi_true.shape[1]

    @property
    def n_instances(self) -> int:
        return self.x_train.shape[0]

    @property
    def n_classes(self) -> int:
        return self.y_train.shape[1]


class TaskResult(TypedDict):
    task: int
    loss: float
    accuracy: float


class MetaTraceRow(TypedDict):
    meta_epoch: int
    train_loss: float
    monitor_loss: Optional[float]
    monitor_accuracy: Optional[float]


class StageResult(TypedDict):
    status: int
    artifacts: List[str]
    failures: List[dict]
