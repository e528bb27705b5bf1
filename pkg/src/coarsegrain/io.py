"""Result serialization: CSV slot tables and time series, JSON tables and manifests.

Floats are written with 17 significant digits so that every value round-trips
exactly, and nothing time-dependent is written, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
import platform
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy

from .core import SlotDistribution, SlotPartition
from .liouville import ClassicalField

SCHEMA_VERSION = "1.0"
DIST_COLUMNS = ("i", "j", "x_center", "p_center", "probability")


def fmt(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return f"{v:.17g}"


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            # JSON has no infinities; use null and let readers interpret it
            return "null"
        return fmt(v)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (Mapping, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Mapping[str, Any]) -> str:
    """JSON text with sorted keys, 17-digit floats and a schema version."""
    data = dict(obj)
    data.setdefault("schema_version", SCHEMA_VERSION)
    return _encode(data, 2, 0) + "\n"


def check_schema(data: Mapping[str, Any]) -> None:
    ver = data.get("schema_version")
    if not isinstance(ver, str):
        raise ValueError("missing schema_version")
    if ver.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ValueError(f"unsupported schema major version {ver!r}")


def loads(text: str) -> dict:
    data = json.loads(text)
    check_schema(data)
    return data


def write_json(path: str | Path, obj: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path: str | Path) -> dict:
    return loads(Path(path).read_text())


def _rows(dist) -> list[tuple[int, int, float]]:
    if isinstance(dist, SlotDistribution):
        return [(i, j, v) for (i, j), v in dist.entries.items()]
    if isinstance(dist, ClassicalField):
        return [(i, j, v) for (i, j), v in sorted(dist.as_dict().items()) if v != 0.0]
    raise TypeError(f"unsupported distribution type {type(dist).__name__}")


def distribution_csv(dist) -> str:
    """CSV text with one row per populated slot."""
    part = dist.partition
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIST_COLUMNS)
    for i, j, v in _rows(dist):
        w.writerow([i, j, fmt(part.x_center(i)), fmt(part.p_center(j)), fmt(v)])
    return buf.getvalue()


def write_distribution_csv(path: str | Path, dist) -> Path:
    path = Path(path)
    path.write_text(distribution_csv(dist))
    return path


def parse_distribution_csv(text: str, part: SlotPartition,
                           captured_mass_tol: float = 1.0) -> SlotDistribution:
    r = csv.reader(io.StringIO(text))
    header = next(r, None)
    if tuple(header or ()) != DIST_COLUMNS:
        raise ValueError(f"unexpected CSV header {header!r}")
    entries = {(int(row[0]), int(row[1])): float(row[4]) for row in r if row}
    return SlotDistribution(entries, part, captured_mass_tol=captured_mass_tol)


def read_distribution_csv(path: str | Path, part: SlotPartition,
                          captured_mass_tol: float = 1.0) -> SlotDistribution:
    return parse_distribution_csv(Path(path).read_text(), part, captured_mass_tol)


def timeseries_csv(columns: Mapping[str, Sequence[float]]) -> str:
    """CSV text; the first column should be ``t``."""
    names = list(columns)
    lengths = {len(columns[k]) for k in names}
    if len(lengths) > 1:
        raise ValueError("time-series columns differ in length")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*(columns[k] for k in names)):
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_timeseries_csv(path: str | Path, columns: Mapping[str, Sequence[float]]) -> Path:
    path = Path(path)
    path.write_text(timeseries_csv(columns))
    return path


def versions() -> dict[str, str]:
    from . import __version__

    return {
        "coarsegrain": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def manifest(command: str, scenario_name: str, config_hash: str, seed: int,
             outputs: Sequence[str], extra: Mapping[str, Any] | None = None) -> dict:
    m = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "scenario": scenario_name,
        "config_hash": config_hash,
        "seed": int(seed),
        "versions": versions(),
        "outputs": sorted(outputs),
    }
    if extra:
        m.update(extra)
    return m
