"""File formats: JSON matrices and pianorolls, flat key=value configs, CSV tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError
from .grid import StructuralGrid


def matrix_to_json(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def matrix_from_json(obj, what: str = "matrix") -> np.ndarray:
    """Accepts ``{"shape": [...], "data": [flat row-major]}`` or a nested list."""
    if isinstance(obj, list):
        try:
            a = np.asarray(obj, dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{what}: ragged nested list") from exc
        return a
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise ParseError(f"{what}: expected an object with 'shape' and 'data'")
    shape = obj["shape"]
    if not isinstance(shape, list) or not all(isinstance(n, int) and n >= 0 for n in shape):
        raise ParseError(f"{what}: shape must be a list of non-negative integers")
    try:
        data = np.asarray(obj["data"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what}: data must be numbers") from exc
    if data.ndim != 1 or data.size != int(np.prod(shape)):
        raise ParseError(f"{what}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape)


def read_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc


def write_json(obj, path=None) -> str:
    text = json.dumps(obj)
    if path is not None:
        Path(path).write_text(text)
    return text


def grid_from_json(obj, what: str = "grid") -> StructuralGrid:
    a = matrix_from_json(obj, what)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ParseError(f"{what}: expected T x L labels, got shape {a.shape}")
    try:
        return StructuralGrid(a)
    except ValueError as exc:
        raise ParseError(f"{what}: {exc}") from exc


def read_pianoroll(path) -> tuple[str, np.ndarray]:
    """``{"piece_id": str, "shape": [tracks, 128, T], "data": [0/1 ...]}`` -> (id, bits)."""
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: pianoroll must be a JSON object")
    roll = matrix_from_json(doc, f"{path}")
    if roll.ndim == 2:
        roll = roll[None]
    if roll.ndim != 3 or roll.shape[1] != 128:
        raise ParseError(f"{path}: pianoroll shape must be tracks x 128 x T, got {list(roll.shape)}")
    if not np.all((roll == 0) | (roll == 1)):
        raise ParseError(f"{path}: pianoroll must be binary")
    piece = doc.get("piece_id", Path(path).stem)
    return str(piece), roll.astype(np.uint8)


def write_pianoroll(roll, path, piece_id: str = "") -> None:
    obj = matrix_to_json(np.asarray(roll, dtype=np.uint8))
    obj["piece_id"] = piece_id
    write_json(obj, path)


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, values are typed when they parse."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{path}:{n}: empty key")
        out[key.replace("-", "_")] = _coerce(value)
    return out


def write_csv(header: Sequence[str], rows: Iterable[Sequence], path=None, stream=None) -> None:
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    if path is not None:
        with open(path, "w", newline="") as fh:
            emit(fh)
    else:
        emit(stream)
