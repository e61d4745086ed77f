import math
from concurrent.futures import Executor
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from chameleon.core.autodiff import AdamState, adam_step, backward, cross_entropy, sgd_step
from chameleon.core.errors import ContractError, TrainingError
from chameleon.core.meta.models import CombinedInit, forward, update_names
from chameleon.core.schemas import Task, Variant

# =================================================================================================
# TOUR HEADER: Reptile
# =================================================================================================
#
# JOB:
# The two halves of first-order meta-learning:
# 1. inner_adapt: k optimizer steps on ONE task's train block, starting from a copy of theta_init.
# 2. reptile_meta_step: move theta_init toward the adapted parameters of a batch of tasks,
#    theta <- theta + beta * mean_i(theta'_i - theta).
#
# KEY CONCEPTS:
# - Adam state is fresh for every task and lives only for that task's k steps.
# - Variant masks (update_names) apply to both halves: FROZEN never moves theta_enc.
# - Tasks arrive already laid out for the variant (prepare_task): padded, oracle or raw.
#
# THREADING:
# The inner adaptations of a batch only read theta_init, so they may run on an executor; the
# meta-update is a serial reduction over their results, in batch order.
#
# =================================================================================================


def adapt_steps(
    init: CombinedInit,
    task: Task,
    k: int,
    lr: float,
    variant: Variant,
    optimizer: str = "adam",
) -> Iterator[Tuple[CombinedInit, float]]:
    """Yields (params, train loss before the step) after each of the k inner steps."""
    params = init.clone()
    store = params.store()
    names = update_names(params, variant)
    state = AdamState()

    for step in range(k):
        store.zero_grad()
        loss = cross_entropy(forward(params, task.x_train, variant), task.y_train)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"Adaptation loss is {value} at inner step {step}")
        backward(loss)
        if optimizer == "sgd":
            sgd_step(store, lr, names)
        elif optimizer == "adam":
            adam_step(store, state, lr, names)
        else:
            raise ContractError(f"Unknown inner optimizer: {optimizer}")
        yield params, value


def adapt_with_losses(
    init: CombinedInit, task: Task, k: int, lr: float, variant: Variant, optimizer: str = "adam",
) -> Tuple[CombinedInit, List[float]]:
    adapted, losses = init.clone(), []
    for adapted, value in adapt_steps(init, task, k, lr, variant, optimizer):
        losses.append(value)
    return adapted, losses


def inner_adapt(
    init: CombinedInit, task: Task, k: int, lr: float, variant: Variant, optimizer: str = "adam",
) -> CombinedInit:
    """k steps on the task's train block from a copy of `init`; `init` itself is untouched."""
    return adapt_with_losses(init, task, k, lr, variant, optimizer)[0]


def reptile_meta_step(
    init: CombinedInit,
    task_batch: Sequence[Task],
    k: int,
    inner_lr: float,
    meta_lr: float,
    variant: Variant,
    optimizer: str = "adam",
    executor: Optional[Executor] = None,
) -> Tuple[CombinedInit, float]:
    """
    Returns the moved initialization and the mean first-step train loss of the batch.
    Only the parameters the variant may update are moved.
    """
    if not task_batch:
        raise ContractError("A meta-step needs at least one task")

    def run(task):
        return adapt_with_losses(init, task, k, inner_lr, variant, optimizer)

    results = list(executor.map(run, task_batch)) if executor else [run(t) for t in task_batch]

    theta = init.values()
    updated = init.clone()
    moved = {}
    for name in update_names(init, variant):
        deltas = [adapted.store()[name].data - theta[name] for adapted, _ in results]
        moved[name] = theta[name] + meta_lr * np.mean(deltas, axis=0)
    updated.load(moved)

    first_losses = [losses[0] for _, losses in results if losses]
    mean_loss = float(np.mean(first_losses)) if first_losses else float("nan")
    return updated, mean_loss
