from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

from chameleon.core.encoder import EncoderParams
from chameleon.core.errors import ConfigError, TrainingError
from chameleon.core.logger import setup_logger
from chameleon.core.meta.evaluation import evaluate
from chameleon.core.meta.models import VARIANT_POLICY, CombinedInit, initial_params, prepare_task
from chameleon.core.meta.reptile import reptile_meta_step
from chameleon.core.sampler import sample_train_task
from chameleon.core.schemas import (
    DatasetTable, MetaConfig, MetaTraceRow, Mode, SamplerConfig, SplitSpec, Task, Variant,
)
from chameleon.core.utils import derive_rng

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Meta-Training Loop
# =================================================================================================
#
# JOB:
# Runs `meta_epochs` Reptile meta-steps for one variant and returns the learned initialization
# plus a trace. One meta-epoch = one batch of `meta_batch_size` freshly sampled training tasks.
#
# VARIANTS (see models.VARIANT_POLICY):
# - random   : Glorot init, no training at all.
# - yhat     : yhat alone on right-padded tasks.
# - oracle   : yhat alone on perfectly aligned tasks (no-split only).
# - untrain  : yhat o enc, encoder from Glorot, both trained jointly.
# - full     : yhat o enc, encoder from reordering pretraining, both trained jointly.
# - frozen   : as full, but the encoder never moves.
#
# The reordering loss never enters this loop; the encoder is shaped here only by the task loss.
#
# =================================================================================================


def meta_train(
    variant: Variant,
    table: DatasetTable,
    split: SplitSpec,
    config: Optional[MetaConfig] = None,
    sampler_config: Optional[SamplerConfig] = None,
    pretrained: Optional[EncoderParams] = None,
    monitor_tasks: Sequence[Task] = (),
    threads: int = 1,
) -> Tuple[CombinedInit, List[MetaTraceRow]]:
    config = config or MetaConfig()
    sampler_config = sampler_config or SamplerConfig()
    variant = Variant(variant)
    policy = VARIANT_POLICY[variant]
    if variant is Variant.ORACLE and split.mode is Mode.SPLIT:
        raise ConfigError("The oracle variant is undefined in split mode")

    init = initial_params(
        variant,
        n_instances=sampler_config.shots_train * table.n_classes,
        n_positions=table.n_features,
        n_classes=table.n_classes,
        seed=config.seed,
        pretrained=pretrained,
    )
    if not policy.meta_trains:
        logger.info(f"[{variant.value}] no meta-training; returning the Glorot initialization")
        return init, []

    # Every variant of a seed draws the same stream of training tasks.
    rng = derive_rng(config.seed, "meta")
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    trace: List[MetaTraceRow] = []
    try:
        for epoch in range(1, config.meta_epochs + 1):
            batch = [
                prepare_task(sample_train_task(table, split, rng, sampler_config), variant)
                for _ in range(config.meta_batch_size)
            ]
            init, train_loss = reptile_meta_step(
                init, batch, config.inner_steps, config.inner_lr, config.meta_lr,
                variant, config.inner_optimizer, executor,
            )
            if not init.store().is_finite():
                logger.error(f"[{variant.value}] parameters diverged at meta-epoch {epoch}")
                raise TrainingError(f"Non-finite parameters after meta-epoch {epoch}", trace)
            row = MetaTraceRow(meta_epoch=epoch, train_loss=train_loss,
                               monitor_loss=None, monitor_accuracy=None)

            if config.eval_every and monitor_tasks and epoch % config.eval_every == 0:
                report = evaluate(init, monitor_tasks[:config.monitor_tasks], variant,
                                  config.eval_steps, config.inner_lr, config.inner_optimizer)
                row['monitor_loss'] = report.mean_loss
                row['monitor_accuracy'] = report.mean_accuracy
            trace.append(row)

            if config.log_every and epoch % config.log_every == 0:
                extra = ""
                if row['monitor_accuracy'] is not None:
                    extra = f", monitor accuracy {row['monitor_accuracy']:.3f}"
                logger.info(
                    f"[{variant.value}] meta-epoch {epoch}/{config.meta_epochs}: "
                    f"train loss {train_loss:.4f}{extra}"
                )
    finally:
        if executor:
            executor.shutdown()

    return init, trace
