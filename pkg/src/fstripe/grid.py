"""Positional index grids, linear or built from structural labels."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidDataError, ParseError

# steps of the sixteenth-note clock covered by one label at each resolution
RESOLUTION_STEPS = {"sixteenth": 1, "quarter": 4, "measure": 16}


@dataclass(frozen=True)
class StructuralGrid:
    """T x L array of positional labels, one row per timestep."""

    indices: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.float64)
        if idx.ndim != 2 or idx.shape[0] < 1 or idx.shape[1] < 1:
            raise ValueError(f"grid indices must be a non-empty T x L array, got shape {idx.shape}")
        if not np.all(np.isfinite(idx)):
            raise ValueError("grid indices must be finite")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def length(self) -> int:
        return self.indices.shape[0]

    @property
    def levels(self) -> int:
        return self.indices.shape[1]

    def __len__(self):
        return self.length


def linear_grid(T: int) -> StructuralGrid:
    if T < 1:
        raise ValueError(f"linear grid needs T >= 1, got {T}")
    return StructuralGrid(np.arange(T, dtype=np.float64)[:, None], ("time",))


def structural_grid(label_sequences: Sequence[Sequence[float]], level_mask: Sequence[int],
                    names: Sequence[str] | None = None) -> StructuralGrid:
    """Select levels from ``label_sequences``; columns follow the order of ``level_mask``."""
    seqs = [np.asarray(s, dtype=np.float64) for s in label_sequences]
    if not seqs:
        raise ValueError("no label sequences given")
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1 or any(s.ndim != 1 for s in seqs):
        raise ValueError(f"label sequences are ragged: lengths {[len(s) for s in seqs]}")
    mask = list(level_mask)
    if not mask:
        raise ValueError("level mask is empty")
    if len(set(mask)) != len(mask):
        raise ValueError(f"level mask repeats a level: {mask}")
    for lvl in mask:
        if not 0 <= lvl < len(seqs):
            raise ValueError(f"level {lvl} not in [0, {len(seqs)})")
    picked = np.stack([seqs[lvl] for lvl in mask], axis=1)
    level_names = tuple(names[lvl] for lvl in mask) if names is not None else ()
    return StructuralGrid(picked, level_names)


def load_labels(path) -> dict[str, np.ndarray]:
    """Read a label file and upsample every level to the sixteenth-note clock.

    Returns an ordered mapping level name -> label sequence; all sequences
    share one length.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "levels" not in doc:
        raise ParseError(f"{path}: missing 'levels' key")
    clock = doc.get("clock_resolution", "sixteenth")
    if clock != "sixteenth":
        raise ParseError(f"{path}: unsupported clock_resolution {clock!r}")
    levels = doc["levels"]
    if not isinstance(levels, list) or not levels:
        raise ParseError(f"{path}: 'levels' must be a non-empty list")

    out: dict[str, np.ndarray] = {}
    for i, level in enumerate(levels):
        if not isinstance(level, dict):
            raise ParseError(f"{path}: level {i} is not an object")
        missing = {"name", "resolution", "labels"} - level.keys()
        if missing:
            raise ParseError(f"{path}: level {i} lacks {sorted(missing)}")
        name, res, labels = level["name"], level["resolution"], level["labels"]
        if not isinstance(name, str):
            raise ParseError(f"{path}: level {i} name must be a string")
        if res not in RESOLUTION_STEPS:
            raise ParseError(f"{path}: level {name!r} has unknown resolution {res!r}")
        if not isinstance(labels, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in labels):
            raise ParseError(f"{path}: level {name!r} labels must be a list of numbers")
        if name in out:
            raise ParseError(f"{path}: duplicate level name {name!r}")
        out[name] = np.repeat(np.asarray(labels, dtype=np.float64), RESOLUTION_STEPS[res])

    lengths = {k: len(v) for k, v in out.items()}
    if len(set(lengths.values())) != 1:
        raise InvalidDataError(f"{path}: level lengths differ after upsampling: {lengths}")
    return out


def grid_from_labels(labels: dict[str, np.ndarray], levels: Sequence[str]) -> StructuralGrid:
    names = list(labels)
    mask = []
    for lvl in levels:
        if lvl not in labels:
            raise ValueError(f"unknown level {lvl!r}; have {names}")
        mask.append(names.index(lvl))
    return structural_grid([labels[n] for n in names], mask, names)
