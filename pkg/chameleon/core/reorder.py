import math
from typing import List, Optional, Tuple

import numpy as np

from chameleon.core.autodiff import AdamState, GridLike, Tensor, adam_step, as_tensor, backward, cross_entropy
from chameleon.core.encoder import EncoderParams, phi_forward
from chameleon.core.errors import DimensionError, TrainingError
from chameleon.core.logger import setup_logger
from chameleon.core.sampler import sample_train_task
from chameleon.core.schemas import DatasetTable, ReorderTrainConfig, SamplerConfig, SplitSpec
from chameleon.core.utils import derive_rng

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Reordering Pretraining
# =================================================================================================
#
# JOB:
# Supervised pretraining of the encoder: sample a permuted-subset task, predict its reordering
# matrix, and take one Adam step on the cross-entropy against the known one-hot target.
#
# KEY CONCEPTS:
# - One "epoch" is one sampled task and one update (tasks_per_epoch > 1 averages gradients of
#   several tasks into that one update).
# - Only training instances and training features are ever sampled here.
# - Only theta_enc is touched; the classifier does not exist in this stage.
#
# =================================================================================================


def reorder_loss(pi_pred: GridLike, pi_true: np.ndarray) -> Tensor:
    """Mean over the F rows of -log(pi_pred at the true position)."""
    pi_pred = as_tensor(pi_pred)
    if pi_pred.shape != np.shape(pi_true):
        raise DimensionError(f"Predicted {pi_pred.shape} vs target {np.shape(pi_true)}")
    return cross_entropy(pi_pred, pi_true)


def reorder_train(
    encoder: EncoderParams,
    table: DatasetTable,
    split: SplitSpec,
    config: Optional[ReorderTrainConfig] = None,
    sampler_config: Optional[SamplerConfig] = None,
) -> Tuple[EncoderParams, List[float]]:
    """
    Returns the trained copy of `encoder` and the per-epoch loss trace.
    The input encoder is not modified.
    """
    config = config or ReorderTrainConfig()
    params = encoder.clone()
    state = AdamState()
    rng = derive_rng(config.seed, "pretrain")
    trace: List[float] = []
    per_epoch = max(1, config.tasks_per_epoch)

    for epoch in range(config.pretrain_epochs):
        params.zero_grad()
        epoch_loss = 0.0
        for _ in range(per_epoch):
            task = sample_train_task(table, split, rng, sampler_config)
            loss = reorder_loss(phi_forward(task.x_train, params), task.pi_true)
            backward(loss)
            epoch_loss += loss.item()
        epoch_loss /= per_epoch

        if not math.isfinite(epoch_loss):
            logger.error(f"Reordering loss diverged at epoch {epoch}")
            raise TrainingError(f"Reordering loss is {epoch_loss} at epoch {epoch}", trace)
        if per_epoch > 1:
            params.scale_grad(1.0 / per_epoch)
        adam_step(params, state, config.pretrain_lr)
        trace.append(epoch_loss)

        if config.log_every and (epoch + 1) % config.log_every == 0:
            recent = np.mean(trace[-config.log_every:])
            logger.info(f"Pretrain epoch {epoch + 1}/{config.pretrain_epochs}: mean loss {recent:.4f}")

    return params, trace
