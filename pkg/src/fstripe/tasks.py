"""Synthetic harmonization datasets for desk-scale training runs."""
from __future__ import annotations

import numpy as np

from .features import subseed
from .net import IN_DIM, N_PITCH, Sample

# pitch classes of six diatonic triads in C major: C F G Am Dm Em
CHORDS = ((0, 4, 7), (5, 9, 0), (7, 11, 2), (9, 0, 4), (2, 5, 9), (4, 7, 11))
MELODY_OCTAVE = 60
BRIDGE_OCTAVE = 72
PIANO_OCTAVE = 48
STEPS_PER_PHRASE = 64


def copy_task(n: int, T: int, seed: int = 0, density: float = 0.2, pitches: int = 12) -> list[Sample]:
    """Targets repeat the input tracks and leave the accompaniment silent.

    Notes fall in the ``pitches`` lanes starting at each track's octave, so a
    narrow model can represent the identity map.
    """
    rng = np.random.default_rng(subseed(seed, 21))
    lanes = np.r_[MELODY_OCTAVE:MELODY_OCTAVE + pitches, N_PITCH + BRIDGE_OCTAVE:N_PITCH + BRIDGE_OCTAVE + pitches]
    out = []
    for _ in range(n):
        x = np.zeros((T, IN_DIM))
        x[:, lanes] = rng.random((T, lanes.size)) < density
        y = np.concatenate([x, np.zeros((T, N_PITCH))], axis=1)
        out.append(Sample(x, y, {}))
    return out


def chord_piece(T: int, rng: np.random.Generator, segment_steps=(4, 8), melody_rate: float = 1.0,
                bridge_rate: float = 0.25) -> Sample:
    """One piece whose accompaniment is the held triad of the current chord segment.

    Melody and bridge play scattered chord tones, so the chord is only
    identifiable by pooling notes from the same segment. Labels: ``chord``
    is the ordinal index of the chord segment, ``melody`` the melody pitch
    (0 when silent), ``phrase`` the index of each 4-measure block.
    """
    x = np.zeros((T, IN_DIM))
    y = np.zeros((T, 3 * N_PITCH))
    chord_label = np.zeros(T)
    melody_label = np.zeros(T)
    t, seg, prev = 0, 0, -1
    while t < T:
        length = int(rng.choice(segment_steps))
        chord = int(rng.choice([c for c in range(len(CHORDS)) if c != prev]))
        tones = CHORDS[chord]
        end = min(T, t + length)
        for step in range(t, end):
            if rng.random() < melody_rate:
                p = MELODY_OCTAVE + tones[rng.integers(3)]
                x[step, p] = 1
                melody_label[step] = p
            if rng.random() < bridge_rate:
                x[step, N_PITCH + BRIDGE_OCTAVE + tones[rng.integers(3)]] = 1
            for pc in tones:
                y[step, 2 * N_PITCH + PIANO_OCTAVE + pc] = 1
        chord_label[t:end] = seg
        t, seg, prev = end, seg + 1, chord
    y[:, :IN_DIM] = x
    phrase = np.arange(T) // STEPS_PER_PHRASE
    return Sample(x, y, {"melody": melody_label, "chord": chord_label, "phrase": phrase.astype(np.float64)})


def chord_task(n: int, T: int, seed: int = 0, **kwargs) -> list[Sample]:
    rng = np.random.default_rng(subseed(seed, 22))
    return [chord_piece(T, rng, **kwargs) for _ in range(n)]
