from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from chameleon.core.autodiff import cross_entropy
from chameleon.core.base_model import accuracy
from chameleon.core.meta.models import CombinedInit, forward, prepare_task
from chameleon.core.meta.reptile import adapt_steps, inner_adapt
from chameleon.core.schemas import Task, TaskResult, Variant


@dataclass
class EvalReport:
    variant: Variant
    per_task: List[TaskResult] = field(default_factory=list)
    mean_loss: float = float("nan")
    std_loss: float = float("nan")
    mean_accuracy: float = float("nan")
    std_accuracy: float = float("nan")

    def to_dict(self) -> Dict:
        return {
            'variant': self.variant.value,
            'n_tasks': len(self.per_task),
            'mean_loss': self.mean_loss,
            'std_loss': self.std_loss,
            'mean_accuracy': self.mean_accuracy,
            'std_accuracy': self.std_accuracy,
        }


def score_block(params: CombinedInit, task: Task, variant: Variant) -> Tuple[float, float]:
    """(loss, accuracy) on the task's test block; the encoder sees the test block itself."""
    probs = forward(params, task.x_test, variant)
    return cross_entropy(probs, task.y_test).item(), accuracy(probs, task.y_test)


def evaluate(
    init: CombinedInit,
    test_tasks: Sequence[Task],
    variant: Variant,
    steps: int = 3,
    lr: float = 1e-3,
    optimizer: str = "adam",
    threads: int = 1,
) -> EvalReport:
    """Adapt `steps` times on each task's train block, then score its test block."""

    def run(indexed):
        i, task = indexed
        prepared = prepare_task(task, variant)
        adapted = inner_adapt(init, prepared, steps, lr, variant, optimizer)
        loss, acc = score_block(adapted, prepared, variant)
        return TaskResult(task=i, loss=loss, accuracy=acc)

    indexed = list(enumerate(test_tasks))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_task = list(pool.map(run, indexed))
    else:
        per_task = [run(item) for item in indexed]

    losses = np.array([r['loss'] for r in per_task])
    accs = np.array([r['accuracy'] for r in per_task])
    return EvalReport(
        variant=variant,
        per_task=per_task,
        mean_loss=float(losses.mean()),
        std_loss=float(losses.std()),
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std()),
    )


def adaptation_curve(
    init: CombinedInit,
    reference: CombinedInit,
    task: Task,
    steps: int,
    variant: Variant,
    lr: float = 1e-3,
    optimizer: str = "adam",
) -> Dict[str, List[float]]:
    """
    Test-block loss after 0..steps inner steps, from the learned `init` and from a
    `reference` initialization (usually a fresh Glorot draw of the same variant).
    """
    prepared = prepare_task(task, variant)
    curves = {}
    for label, start in (("learned", init), ("reference", reference)):
        losses = [score_block(start, prepared, variant)[0]]
        for params, _ in adapt_steps(start, prepared, steps, lr, variant, optimizer):
            losses.append(score_block(params, prepared, variant)[0])
        curves[label] = losses
    return curves
