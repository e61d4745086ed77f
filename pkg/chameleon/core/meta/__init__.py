from .models import VARIANT_POLICY, CombinedInit, VariantPolicy, initial_params, prepare_task, update_names
from .reptile import inner_adapt, reptile_meta_step
from .evaluation import EvalReport, adaptation_curve, evaluate
from .training import meta_train

__all__ = [
    "VARIANT_POLICY",
    "CombinedInit",
    "VariantPolicy",
    "initial_params",
    "prepare_task",
    "update_names",
    "inner_adapt",
    "reptile_meta_step",
    "EvalReport",
    "adaptation_curve",
    "evaluate",
    "meta_train",
]
