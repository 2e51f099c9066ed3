import numpy as np
import pytest

from fstripe import metrics as M

from oracles import cs_loop, gs_loop, ndd_loop, ssmd_loop


def roll_from_lane(lane, pitch=60):
    r = np.zeros((1, 128, len(lane)), dtype=np.uint8)
    r[0, pitch] = lane
    return r


def random_roll(rng, T=64, tracks=2, density=0.03):
    return (rng.random((tracks, 128, T)) < density).astype(np.uint8)


def test_onsets_examples():
    assert M.onsets(roll_from_lane([1, 1, 1]))[60].tolist() == [1, 0, 0]
    assert M.onsets(roll_from_lane([0, 1, 0, 1]))[60].tolist() == [0, 1, 0, 1]
    assert not np.any(M.onsets(np.zeros((2, 128, 5), dtype=np.uint8)))


def test_onsets_merge_tracks_before_edges():
    r = np.zeros((2, 128, 4), dtype=np.uint8)
    r[0, 60, :2] = 1
    r[1, 60, 2:] = 1  # continuation in another track is not a new onset
    assert M.onsets(r)[60].tolist() == [1, 0, 0, 0]
    assert M.onsets(r, tracks=[1])[60].tolist() == [0, 0, 1, 0]


def test_chroma_examples():
    r = np.zeros((1, 128, 16), dtype=np.uint8)
    r[0, 60, 0] = 1
    assert M.chroma(r)[0, 0] == 1
    r[0, 72, 0] = 1
    assert M.chroma(r)[0, 0] == 2
    assert not np.any(M.chroma(np.zeros((1, 128, 16))))
    assert M.chroma(np.zeros((1, 128, 20))).shape == (4, 12)


def test_extremes():
    # target: every half-measure has the same chroma (SSM all ones); prediction: orthogonal chromas
    t = np.zeros((1, 128, 16), dtype=np.uint8)
    t[0, 60, [0, 8]] = 1
    p = np.zeros((1, 128, 16), dtype=np.uint8)
    p[0, 61, 0] = 1
    p[0, 62, 8] = 1
    assert M.ssmd(t, t) == 0.0
    assert M.ssmd(t, np.zeros_like(t)) == 100.0
    assert M.chroma_similarity(t, p) == 0.0
    assert M.chroma_similarity(t, t) == 100.0


def test_grooving_examples():
    def groove(pattern):
        r = np.zeros((1, 128, 16), dtype=np.uint8)
        for q, on in enumerate(pattern):
            r[0, 60, 4 * q] = on
        return r
    assert M.grooving_similarity(groove([1, 0, 1, 0]), groove([1, 1, 1, 0])) == 75.0
    assert M.grooving_similarity(groove([1, 0, 1, 0]), groove([0, 1, 0, 1])) == 0.0


def test_ndd_examples():
    t = np.zeros((1, 128, 16), dtype=np.uint8)
    p = np.zeros_like(t)
    t[0, [60, 64], 0] = 1
    t[0, [60, 64, 67, 71], 1] = 1
    p[0, 60, 0] = 1
    p[0, [60, 64, 67, 71], 1] = 1
    assert M.note_density_distance(t, p) == 25.0
    assert M.note_density_distance(t[..., :2], p[..., :2]) == 25.0
    assert M.note_density_distance(t, np.zeros_like(t)) == 100.0
    assert M.note_density_distance(t, t) == 0.0
    assert M.note_density_distance(p * 0, p * 0) == 0.0


def test_ndd_is_asymmetric():
    t = np.zeros((1, 128, 16), dtype=np.uint8)
    p = np.zeros_like(t)
    t[0, 60, :] = 1
    p[0, 60:64, :] = 1
    assert M.note_density_distance(t, p) != M.note_density_distance(p, t)


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_loops(seed):
    rng = np.random.default_rng(seed)
    t, p = random_roll(rng, T=60), random_roll(rng, T=60)
    assert abs(M.ssmd(t, p) - ssmd_loop(t, p)) < 1e-10
    assert abs(M.chroma_similarity(t, p) - cs_loop(t, p)) < 1e-10
    assert abs(M.grooving_similarity(t, p) - gs_loop(t, p)) < 1e-10
    assert abs(M.note_density_distance(t, p) - ndd_loop(t, p)) < 1e-10


def test_symmetry():
    rng = np.random.default_rng(9)
    a, b = random_roll(rng), random_roll(rng)
    for f in (M.ssmd, M.chroma_similarity, M.grooving_similarity):
        assert np.isclose(f(a, b), f(b, a))


def test_track_selection():
    rng = np.random.default_rng(10)
    a = random_roll(rng, tracks=3)
    b = a.copy()
    b[2] = 0
    assert M.evaluate(a, b, tracks=[0, 1]) == {"CS": 100.0, "SSMD": 0.0, "GS": 100.0, "NDD": 0.0}


def test_input_validation():
    with pytest.raises(ValueError):
        M.ssmd(np.zeros((1, 127, 16)), np.zeros((1, 127, 16)))
    with pytest.raises(ValueError):
        M.ssmd(np.full((1, 128, 16), 2), np.zeros((1, 128, 16)))
    with pytest.raises(ValueError):
        M.ssmd(np.zeros((1, 128, 16)), np.zeros((1, 128, 32)))
