import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values

from chameleon.core.config import PRESET_ALIASES, PRESETS, PROTOCOL, env_threads
from chameleon.core.errors import ConfigError
from chameleon.core.logger import setup_logger
from chameleon.core.schemas import MetaConfig, Mode, ReorderTrainConfig, SamplerConfig, Variant

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Experiment Configuration
# =================================================================================================
#
# JOB:
# Turns presets, key-value config files and CLI flags into one typed ExperimentConfig.
#
# PRECEDENCE:
# flags > config file > preset > PROTOCOL defaults. Keys are flat ("inner_lr", not
# "meta.inner_lr"); from_dict routes each key to the sub-config that declares it.
#
# FILE FORMAT:
# The same KEY=VALUE syntax as a .env file, parsed with python-dotenv. Lists are comma
# separated: `variants=random,yhat,full`.
#
# =================================================================================================

SUB_CONFIGS = {
    'sampler': SamplerConfig,
    'reorder': ReorderTrainConfig,
    'meta': MetaConfig,
}

# Run-level seeds are assigned per repetition; they are not user-facing keys.
PRIVATE_KEYS = {'seed'}


def _coerce(value: Any, kind: type, key: str) -> Any:
    if value is None or isinstance(value, kind):
        return value
    try:
        if kind is bool:
            return str(value).strip().lower() in ("1", "true", "yes", "on")
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for '{key}': {value!r} (expected {kind.__name__})")


def _split_list(value: Any) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def default_variants(mode: Mode) -> List[Variant]:
    # No perfect alignment exists once unseen features enter the test tasks.
    if mode is Mode.SPLIT:
        return [v for v in Variant if v is not Variant.ORACLE]
    return list(Variant)


@dataclass
class ExperimentConfig:
    datasets: List[str] = field(default_factory=list)
    mode: Mode = Mode.NOSPLIT
    variants: List[Variant] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: list(range(PROTOCOL['n_seeds'])))
    preset: str = "paper"
    out: str = "runs"
    cache: bool = True
    eval_tasks: int = PROTOCOL['eval_tasks']
    heatmap_tasks: int = 500
    curve_steps: int = 10
    threads: int = field(default_factory=env_threads)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    reorder: ReorderTrainConfig = field(default_factory=ReorderTrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        top: Dict[str, Any] = {}
        nested: Dict[str, Dict[str, Any]] = {name: {} for name in SUB_CONFIGS}
        # A key declared by several sub-configs (log_every) is set on all of them.
        sub_fields: Dict[str, List] = {}
        for name, sub in SUB_CONFIGS.items():
            for f in fields(sub):
                if f.name not in PRIVATE_KEYS:
                    sub_fields.setdefault(f.name, []).append((name, f.type))

        for key, value in data.items():
            if value is None:
                continue
            if key in sub_fields:
                for owner, kind in sub_fields[key]:
                    nested[owner][key] = _coerce(value, kind, key)
            elif key in ("datasets", "dataset"):
                top["datasets"] = _split_list(value)
            elif key == "mode":
                try:
                    top["mode"] = Mode(str(value).strip().lower())
                except ValueError:
                    raise ConfigError(f"Unknown mode: {value!r} (expected split or nosplit)")
            elif key == "variants":
                try:
                    top["variants"] = [Variant.parse(v) for v in _split_list(value)]
                except ValueError as e:
                    raise ConfigError(f"Unknown variant in {value!r}: {e}")
            elif key == "seeds":
                top["seeds"] = [_coerce(s, int, key) for s in _split_list(value)]
            elif key == "n_seeds":
                top["seeds"] = list(range(_coerce(value, int, key)))
            elif key in ("preset", "out"):
                top[key] = str(value)
            elif key == "cache":
                top[key] = _coerce(value, bool, key)
            elif key in ("eval_tasks", "heatmap_tasks", "curve_steps", "threads"):
                top[key] = _coerce(value, int, key)
            else:
                raise ConfigError(f"Unknown configuration key: '{key}'")

        config = cls(
            sampler=SamplerConfig(**nested['sampler']),
            reorder=ReorderTrainConfig(**nested['reorder']),
            meta=MetaConfig(**nested['meta']),
            **top,
        )
        if not config.variants:
            config.variants = default_variants(config.mode)
        return config

    def flat(self) -> Dict[str, Any]:
        """Flat, JSON-friendly view used for manifests and deviation checks."""
        out: Dict[str, Any] = {
            'datasets': list(self.datasets),
            'mode': self.mode.value,
            'variants': [v.value for v in self.variants],
            'seeds': list(self.seeds),
            'n_seeds': len(self.seeds),
            'preset': self.preset,
            'cache': self.cache,
            'eval_tasks': self.eval_tasks,
            'heatmap_tasks': self.heatmap_tasks,
            'curve_steps': self.curve_steps,
        }
        for name in SUB_CONFIGS:
            sub = getattr(self, name)
            for f in fields(sub):
                if f.name not in PRIVATE_KEYS:
                    out[f.name] = getattr(sub, f.name)
        return out

    def for_seed(self, seed: int) -> 'ExperimentConfig':
        """Copy whose pretraining and meta-training streams are keyed by `seed`."""
        return replace(
            self,
            reorder=replace(self.reorder, seed=seed),
            meta=replace(self.meta, seed=seed),
        )

    def validate(self, check_paths: bool = True) -> None:
        if check_paths:
            if not self.datasets:
                raise ConfigError("No dataset given (use --dataset)")
            for path in self.datasets:
                if not os.path.exists(path):
                    raise ConfigError(f"Dataset file not found: {path}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"Seeds must be distinct: {self.seeds}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        if self.mode is Mode.SPLIT and Variant.ORACLE in self.variants:
            raise ConfigError("The oracle variant is undefined in split mode")
        for key in ("inner_lr", "meta_lr"):
            if getattr(self.meta, key) <= 0:
                raise ConfigError(f"'{key}' must be positive")
        if self.reorder.pretrain_lr <= 0:
            raise ConfigError("'pretrain_lr' must be positive")
        if self.reorder.pretrain_epochs < 0 or self.meta.meta_epochs < 0:
            raise ConfigError("Epoch counts must be non-negative")
        if self.meta.inner_optimizer not in ("adam", "sgd"):
            raise ConfigError(f"Unknown inner optimizer: {self.meta.inner_optimizer}")
        if self.meta.meta_batch_size < 1 or self.eval_tasks < 1:
            raise ConfigError("'meta_batch_size' and 'eval_tasks' must be positive")
        # The encoder's first layer consumes a fixed number of instances per feature.
        if self.sampler.shots_train != self.sampler.shots_test:
            raise ConfigError("shots_train and shots_test must match (fixed encoder input width)")
        if self.preset not in PRESETS:
            raise ConfigError(f"Unknown preset: {self.preset}")


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Reads a KEY=VALUE config file. Missing path means no file values."""
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path)
    return {k.strip().lower(): v for k, v in values.items() if v is not None}


def build_config(
    file_values: Optional[Dict[str, Any]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """Merges preset, file values and flag overrides (in increasing precedence)."""
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    preset = str(overrides.get('preset') or file_values.get('preset') or 'paper').strip().lower()
    preset = PRESET_ALIASES.get(preset, preset)
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset: {preset} (expected one of {sorted(PRESETS)})")

    merged: Dict[str, Any] = dict(PRESETS[preset])
    merged.update(file_values)
    merged.update(overrides)
    merged['preset'] = preset
    return ExperimentConfig.from_dict(merged)


def deviations(config: ExperimentConfig) -> Dict[str, Dict[str, Any]]:
    """Every protocol constant whose value differs from the reference protocol."""
    flat = config.flat()
    diff = {}
    for key, reference in PROTOCOL.items():
        used = flat.get(key)
        if used is not None and used != reference:
            diff[key] = {'protocol': reference, 'used': used}
    if diff:
        logger.info(f"Running with {len(diff)} deviation(s) from the reference protocol: {sorted(diff)}")
    return diff
