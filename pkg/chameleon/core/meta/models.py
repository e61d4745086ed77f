from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from chameleon.core.autodiff import GridLike, ParamStore, Tensor, merge
from chameleon.core.base_model import BaseModelParams, predict
from chameleon.core.encoder import EncoderParams, enc
from chameleon.core.errors import ConfigError
from chameleon.core.sampler import oracle_task, pad_task
from chameleon.core.schemas import Task, Variant
from chameleon.core.utils import derive_rng


@dataclass(frozen=True)
class VariantPolicy:
    uses_encoder: bool
    trains_encoder: bool
    meta_trains: bool
    layout: str             # raw | pad | oracle
    needs_pretrained: bool


VARIANT_POLICY: Dict[Variant, VariantPolicy] = {
    Variant.RANDOM: VariantPolicy(False, False, False, "pad", False),
    Variant.YHAT_PAD: VariantPolicy(False, False, True, "pad", False),
    Variant.UNTRAIN: VariantPolicy(True, True, True, "raw", False),
    Variant.FULL: VariantPolicy(True, True, True, "raw", True),
    Variant.FROZEN: VariantPolicy(True, False, True, "raw", True),
    Variant.ORACLE: VariantPolicy(False, False, True, "oracle", False),
}


@dataclass
class CombinedInit:
    """theta_init: the base model plus, for encoder variants, the encoder."""
    base: BaseModelParams
    encoder: Optional[EncoderParams] = None

    def clone(self) -> "CombinedInit":
        return CombinedInit(
            base=self.base.clone(),
            encoder=self.encoder.clone() if self.encoder is not None else None,
        )

    def store(self) -> ParamStore:
        """One ParamStore sharing this init's tensors (updates write through)."""
        return merge(self.encoder, self.base)

    def values(self) -> Dict[str, np.ndarray]:
        return self.store().values()

    def load(self, values: Dict[str, np.ndarray]) -> None:
        self.store().load(values)


def update_names(init: CombinedInit, variant: Variant) -> List[str]:
    """Parameters a variant is allowed to move, in adaptation and in meta-updates alike."""
    names = init.base.names()
    if init.encoder is not None and VARIANT_POLICY[variant].trains_encoder:
        names = init.encoder.names() + names
    return names


def prepare_task(task: Task, variant: Variant) -> Task:
    layout = VARIANT_POLICY[variant].layout
    if layout == "pad":
        return pad_task(task)
    if layout == "oracle":
        return oracle_task(task)
    return task


def forward(init: CombinedInit, x: GridLike, variant: Variant) -> Tensor:
    """Class probabilities of yhat (after enc for encoder variants) on a prepared block."""
    if VARIANT_POLICY[variant].uses_encoder:
        x = enc(x, init.encoder)
    return predict(x, init.base)


def fresh_encoder(n_instances: int, n_positions: int, seed: int) -> EncoderParams:
    """The Glorot encoder of a seed; pretraining starts from the same draw UNTRAIN uses."""
    return EncoderParams.initialize(n_instances, n_positions, derive_rng(seed, "encoder-init"))


def initial_params(
    variant: Variant,
    n_instances: int,
    n_positions: int,
    n_classes: int,
    seed: int,
    pretrained: Optional[EncoderParams] = None,
) -> CombinedInit:
    policy = VARIANT_POLICY[variant]
    if policy.needs_pretrained and pretrained is None:
        raise ConfigError(f"Variant '{variant.value}' requires a pretrained encoder")
    if not policy.needs_pretrained and pretrained is not None:
        raise ConfigError(f"Variant '{variant.value}' does not take a pretrained encoder")

    base = BaseModelParams.initialize(n_positions, n_classes, derive_rng(seed, "base-init"))
    encoder = None
    if policy.needs_pretrained:
        if (pretrained.n_instances, pretrained.n_positions) != (n_instances, n_positions):
            raise ConfigError(
                f"Pretrained encoder is built for N={pretrained.n_instances}, K={pretrained.n_positions}; "
                f"the tasks need N={n_instances}, K={n_positions}"
            )
        encoder = pretrained.clone()
    elif policy.uses_encoder:
        encoder = fresh_encoder(n_instances, n_positions, seed)
    return CombinedInit(base=base, encoder=encoder)
