"""Deterministic CSV and JSON writers that stamp each file with the run metadata."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def csv_text(header, rows, meta: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in sorted((meta or {}).items()):
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows, meta: dict | None = None) -> None:
    Path(path).write_text(csv_text(header, rows, meta))


def json_text(obj, meta: dict | None = None) -> str:
    body = {"meta": _plain(meta or {}), "report": _plain(obj)}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def write_json(path, obj, meta: dict | None = None) -> None:
    Path(path).write_text(json_text(obj, meta))
