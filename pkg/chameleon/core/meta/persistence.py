import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from chameleon.core.base_model import BaseModelParams
from chameleon.core.encoder import EncoderParams
from chameleon.core.errors import DataError, DependencyError
from chameleon.core.meta.models import CombinedInit
from chameleon.core.utils import atomic_write_csv, atomic_write_json, atomic_write_npz

# =================================================================================================
# TOUR HEADER: Run Artifacts
# =================================================================================================
#
# JOB:
# Reads and writes everything a stage leaves on disk:
# - checkpoint.npz : named parameter grids + a JSON header (format, version, variant, seed,
#                    meta_epoch, config, shapes)
# - trace.csv      : loss traces
# - report.json    : evaluation summaries
# - manifest.json  : what a stage consumed and produced
#
# RULES:
# - Every write is atomic (temp file + rename), so a crashed run never leaves half a file.
# - Nothing time-dependent is written: two identical runs produce identical bytes.
#
# =================================================================================================

CHECKPOINT_FORMAT = "chameleon-checkpoint"
CHECKPOINT_VERSION = 1

TRACE_COLUMNS = {
    'pretrain': ['epoch', 'loss'],
    'meta': ['meta_epoch', 'train_loss', 'monitor_loss', 'monitor_accuracy'],
}


def save_checkpoint(
    path,
    params: Union[CombinedInit, EncoderParams],
    variant: str,
    seed: int,
    meta_epoch: int = 0,
    config: Optional[Dict[str, Any]] = None,
) -> str:
    grids = params.values()
    header = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'variant': variant,
        'seed': seed,
        'meta_epoch': meta_epoch,
        'config': config or {},
        'shapes': {name: list(g.shape) for name, g in grids.items()},
    }
    return atomic_write_npz(path, {'__header__': np.array(json.dumps(header, sort_keys=True)), **grids})


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise DependencyError(path)
    with np.load(path, allow_pickle=False) as data:
        if '__header__' not in data.files:
            raise DataError(f"{path}: missing checkpoint header")
        header = json.loads(str(data['__header__']))
        grids = {name: data[name].copy() for name in data.files if name != '__header__'}
    if header.get('format') != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a checkpoint ({header.get('format')})")
    if header.get('version', 0) > CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {header['version']} is newer than supported")
    for name, shape in header.get('shapes', {}).items():
        if name not in grids or list(grids[name].shape) != shape:
            raise DataError(f"{path}: grid '{name}' does not match its declared shape {shape}")
    return grids, header


def _store_from(cls, grids: Dict[str, np.ndarray], prefix: str):
    picked = {name: g for name, g in grids.items() if name.startswith(prefix)}
    return cls(picked) if picked else None


def load_checkpoint(path) -> Tuple[CombinedInit, Dict[str, Any]]:
    grids, header = read_checkpoint(path)
    base = _store_from(BaseModelParams, grids, "yhat.")
    if base is None:
        raise DataError(f"{path}: holds no base model (is it an encoder checkpoint?)")
    return CombinedInit(base=base, encoder=_store_from(EncoderParams, grids, "enc.")), header


def load_encoder(path) -> Tuple[EncoderParams, Dict[str, Any]]:
    grids, header = read_checkpoint(path)
    encoder = _store_from(EncoderParams, grids, "enc.")
    if encoder is None:
        raise DataError(f"{path}: holds no encoder")
    return encoder, header


def write_trace(path, rows: Sequence[Dict[str, Any]], kind: str) -> str:
    return atomic_write_csv(path, rows, TRACE_COLUMNS[kind])


def pretrain_rows(losses: Sequence[float]) -> List[Dict[str, Any]]:
    return [{'epoch': i, 'loss': loss} for i, loss in enumerate(losses, start=1)]


def write_report(path, report: Dict[str, Any]) -> str:
    return atomic_write_json(path, report)


def write_manifest(
    path,
    stage: str,
    config: Dict[str, Any],
    deviations: Dict[str, Any],
    inputs: Sequence[str] = (),
    outputs: Sequence[str] = (),
    failures: Sequence[Dict[str, Any]] = (),
) -> str:
    base = Path(path).parent
    rel = lambda p: str(Path(p).relative_to(base)) if Path(p).is_relative_to(base) else str(p)
    return atomic_write_json(path, {
        'stage': stage,
        'config': config,
        'deviations': deviations,
        'inputs': [str(p) for p in inputs],
        'outputs': sorted(rel(p) for p in outputs),
        'failures': list(failures),
    })
