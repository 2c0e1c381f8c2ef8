"""File formats: measure JSON, dataset CSV, plan/table CSV, atomic writes."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, InvalidMeasure, InvalidParameter
from .measure import DiscreteMeasure, from_json_dict, to_json_dict
from .network import Dataset


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write ``text`` to a sibling temp file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    """Deterministic JSON (sorted keys, shortest round-trip floats)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def read_measure(path) -> DiscreteMeasure:
    data = read_json(path)
    if not isinstance(data, dict):
        raise InvalidMeasure(f"{path}: expected a JSON object")
    return from_json_dict(data)


def write_measure(path, m: DiscreteMeasure) -> Path:
    return write_json(path, to_json_dict(m))


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, rows_to_csv(header, rows))


def read_dataset_csv(path) -> Dataset:
    """Dataset CSV with header ``x1,...,xd,y`` (``d = 0`` means only a ``y`` column)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = [row for row in reader if row]
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except StopIteration as exc:
        raise InvalidParameter(f"{path}: empty dataset file") from exc
    header = [h.strip() for h in header]
    d = len(header) - 1
    if d < 0 or header[-1] != "y" or header[:-1] != [f"x{i + 1}" for i in range(d)]:
        raise InvalidParameter(f"{path}: header must be x1,...,xd,y, got {','.join(header)}")
    try:
        arr = np.array([[float(v) for v in row] for row in body], dtype=float)
    except ValueError as exc:
        raise InvalidParameter(f"{path}: non-numeric entry: {exc}") from exc
    if arr.size == 0:
        raise InvalidParameter(f"{path}: no samples")
    if arr.shape[1] != d + 1:
        raise InvalidParameter(f"{path}: rows must have {d + 1} columns")
    return Dataset(arr[:, :d], arr[:, d])


def write_dataset_csv(path, data: Dataset) -> Path:
    header = [f"x{i + 1}" for i in range(data.input_dim)] + ["y"]
    rows = (list(x) + [y] for x, y in zip(data.inputs, data.labels))
    return write_csv(path, header, rows)


def resolve(base: Path, value: str) -> Path:
    """Paths in config files are relative to the config file's directory."""
    p = Path(value)
    return p if p.is_absolute() else base / p
