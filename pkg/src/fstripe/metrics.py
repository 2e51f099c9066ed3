"""Pianoroll evaluation metrics: SSMD, chroma similarity, grooving similarity, note density distance.

Pianorolls are binary arrays of shape tracks x 128 x T at sixteenth-note
resolution (a single 128 x T lane grid is also accepted). Every metric first
zero-pads the time axis to a whole number of 4/4 measures, so appending
silence up to the next bar line never changes a score. All scores are
percentages in [0, 100].
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

N_PITCH = 128
QUARTER = 4
HALF_MEASURE = 8
MEASURE = 16


def as_roll(roll) -> np.ndarray:
    r = np.asarray(roll)
    if r.ndim == 2:
        r = r[None]
    if r.ndim != 3 or r.shape[1] != N_PITCH:
        raise ValueError(f"pianoroll must be tracks x {N_PITCH} x T, got shape {r.shape}")
    if not np.all((r == 0) | (r == 1)):
        raise ValueError("pianoroll must be binary")
    return r.astype(bool)


def pad_time(roll: np.ndarray, multiple: int = MEASURE) -> np.ndarray:
    T = roll.shape[-1]
    extra = (-T) % multiple
    if extra == 0:
        return roll
    pad = [(0, 0)] * (roll.ndim - 1) + [(0, extra)]
    return np.pad(roll, pad)


def merge_tracks(roll, tracks: Sequence[int] | None = None) -> np.ndarray:
    r = as_roll(roll)
    if tracks is not None:
        r = r[list(tracks)]
    return r.any(axis=0)


def onsets(roll, tracks: Sequence[int] | None = None) -> np.ndarray:
    """128 x T onset grid: a 1 whose predecessor in the same lane is 0 (step 0 counts)."""
    lanes = merge_tracks(roll, tracks)
    prev = np.zeros_like(lanes)
    prev[:, 1:] = lanes[:, :-1]
    return (lanes & ~prev).astype(np.uint8)


def chroma(roll, tracks: Sequence[int] | None = None) -> np.ndarray:
    """H x 12 onset counts per pitch class in each half-measure."""
    on = pad_time(onsets(roll, tracks), MEASURE).astype(np.int64)
    H = on.shape[1] // HALF_MEASURE
    per_half = on.reshape(N_PITCH, H, HALF_MEASURE).sum(axis=2)  # 128 x H
    pc = np.zeros((12, H), dtype=np.int64)
    np.add.at(pc, np.arange(N_PITCH) % 12, per_half)
    return pc.T


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-pair cosines of count vectors broadcast against each other; zero vectors score 0.

    Counts are integers, so dot / sqrt(|a|^2 |b|^2) is exactly 1 for equal rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = np.sum(a * b, axis=-1)
    norm2 = np.sum(a * a, axis=-1) * np.sum(b * b, axis=-1)
    safe = np.where(norm2 > 0, norm2, 1.0)
    return np.where(norm2 > 0, np.minimum(dot / np.sqrt(safe), 1.0), 0.0)


def self_similarity(chroma_seq: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of half-measure chroma vectors; zero vectors score 0."""
    c = np.asarray(chroma_seq)
    return _cosine(c[:, None, :], c[None, :, :])


def _pair(target, prediction, tracks):
    ct, cp = chroma(target, tracks), chroma(prediction, tracks)
    if ct.shape != cp.shape:
        raise ValueError(f"target and prediction cover {ct.shape[0]} and {cp.shape[0]} half-measures")
    return ct, cp


def ssmd(target, prediction, tracks: Sequence[int] | None = None) -> float:
    ct, cp = _pair(target, prediction, tracks)
    return float(100.0 * np.mean(np.abs(self_similarity(ct) - self_similarity(cp))))


def chroma_similarity(target, prediction, tracks: Sequence[int] | None = None) -> float:
    """Mean cosine of matching half-measure chroma vectors; two silent half-measures score 1."""
    ct, cp = _pair(target, prediction, tracks)
    both_silent = ~ct.any(axis=1) & ~cp.any(axis=1)
    cos = np.where(both_silent, 1.0, _cosine(ct, cp))
    return float(100.0 * np.mean(cos))


def grooving_pattern(roll, tracks: Sequence[int] | None = None) -> np.ndarray:
    on = pad_time(onsets(roll, tracks), MEASURE)
    return on.reshape(N_PITCH, -1, QUARTER).any(axis=(0, 2)).astype(np.uint8)


def grooving_similarity(target, prediction, tracks: Sequence[int] | None = None) -> float:
    gt, gp = grooving_pattern(target, tracks), grooving_pattern(prediction, tracks)
    if gt.shape != gp.shape:
        raise ValueError("target and prediction differ in length")
    return float(100.0 * np.mean(gt == gp))


def note_density(roll, tracks: Sequence[int] | None = None) -> np.ndarray:
    return pad_time(merge_tracks(roll, tracks), MEASURE).sum(axis=0)


def note_density_distance(target, prediction, tracks: Sequence[int] | None = None) -> float:
    """Mean per-step |n_target - n_pred| / max(n_target, 1), capped at 1 per step.

    Steps where both rolls are silent are skipped; two silent rolls score 0.
    """
    nt, np_ = note_density(target, tracks), note_density(prediction, tracks)
    if nt.shape != np_.shape:
        raise ValueError("target and prediction differ in length")
    sounding = (nt > 0) | (np_ > 0)
    if not np.any(sounding):
        return 0.0
    d = np.abs(nt - np_)[sounding] / np.maximum(nt[sounding], 1)
    return float(100.0 * np.mean(np.minimum(d, 1.0)))


def evaluate(target, prediction, tracks: Sequence[int] | None = None) -> dict[str, float]:
    return {"CS": chroma_similarity(target, prediction, tracks),
            "SSMD": ssmd(target, prediction, tracks),
            "GS": grooving_similarity(target, prediction, tracks),
            "NDD": note_density_distance(target, prediction, tracks)}
