"""Deterministic CSV/JSON writers with provenance headers, and CSV input."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import __version__


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def header_line(config_hash: str, seed: Optional[int] = None, **extra) -> str:
    parts = [f"fbcool {__version__}", f"config_hash={config_hash}"]
    if seed is not None:
        parts.append(f"seed={seed}")
    parts.extend(f"{k}={v}" for k, v in sorted(extra.items()))
    return "# " + " ".join(parts)


def write_csv(path, columns: Mapping[str, object], config_hash: str, seed: Optional[int] = None, **extra) -> Path:
    """One ``#`` metadata line, a header row, then one row per sample."""
    path = Path(path)
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[n])) for n in names]
    length = {a.size for a in arrays}
    if len(length) != 1:
        raise ValueError(f"columns have unequal lengths: {dict(zip(names, (a.size for a in arrays)))}")
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(header_line(config_hash, seed, **extra) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*arrays):
            writer.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        # JSON has no inf/nan; keep them readable and round-trippable as strings
        return value if math.isfinite(value) else str(value)
    return obj


def write_json(path, payload: Mapping, config_hash: str, seed: Optional[int] = None) -> Path:
    path = Path(path)
    body = {"meta": {"tool": "fbcool", "version": __version__, "config_hash": config_hash, "seed": seed}}
    body.update(_jsonable(payload))
    path.write_text(json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def write_manifest(out_dir, command: str, config_hash: str, seed: Optional[int], files) -> Path:
    out_dir = Path(out_dir)
    payload = {"command": command, "files": sorted(Path(f).name for f in files)}
    return write_json(out_dir / "manifest.json", payload, config_hash, seed)


def read_csv(path, required: tuple) -> dict:
    """Numeric columns of a CSV file (``#`` lines skipped); ``required`` names must be present."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValueError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}; expected {list(required)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return {name: data[:, header.index(name)] for name in required}
