import io
import json
import math
import os
import tempfile
import zipfile
import zlib
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
import pandas as pd

PathLike = Union[str, Path]

ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def derive_rng(seed: int, *keys: Union[str, int]) -> np.random.Generator:
    """
    Independent, reproducible random stream for (seed, *keys).

    String keys are hashed with crc32 (stable across processes, unlike hash()),
    so "pretrain" and "meta" streams of the same seed never overlap.
    """
    entropy = [int(seed)]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def frac_floor(frac: float, n: int) -> int:
    return math.floor(frac * n + 1e-9)


def frac_ceil(frac: float, n: int) -> int:
    return math.ceil(frac * n - 1e-9)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


# --- Atomic writes ---

def _atomic_write(path: PathLike, payload: bytes) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return str(path)


def atomic_write_text(path: PathLike, text: str) -> str:
    return _atomic_write(path, text.encode("utf-8"))


def atomic_write_npz(path: PathLike, arrays: Dict[str, np.ndarray]) -> str:
    """
    Same layout as numpy.savez, but every member carries a fixed timestamp, so identical
    arrays always give identical bytes.
    """
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, array in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH)
            with archive.open(info, "w", force_zip64=True) as member:
                np.lib.format.write_array(member, np.asanyarray(array), allow_pickle=False)
    return _atomic_write(path, buffer.getvalue())


def _json_default(o: Any):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "value"):  # enums
        return o.value
    raise TypeError(f"Object of type {type(o).__name__} is not JSON serializable")


def atomic_write_json(path: PathLike, data: Any) -> str:
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
    return atomic_write_text(path, text + "\n")


def atomic_write_csv(path: PathLike, rows: Iterable[Dict[str, Any]], columns: List[str]) -> str:
    frame = pd.DataFrame(list(rows), columns=columns)
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.10g"))


# --- Report formatting ---

def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def format_summary_table(rows: List[Dict[str, Any]]) -> str:
    """Plain-text table of RunReport rows for the terminal."""
    if not rows:
        return "No results."
    lines = [f"{'variant':<10} {'accuracy':>17} {'loss':>17}  seeds"]
    for r in rows:
        acc = format_mean_std(r['mean_accuracy'], r['std_accuracy'])
        loss = format_mean_std(r['mean_loss'], r['std_loss'])
        lines.append(f"{r['variant']:<10} {acc:>17} {loss:>17}  {r['n_seeds']}")
    return "\n".join(lines)
