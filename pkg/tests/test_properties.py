"""Property-based checks of the structural invariants."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fstripe import metrics as M
from fstripe.attention import assemble_pe_qk, exact_rpe_logits, feature_map, linear_attention
from fstripe.features import (FourierParams, closed_form_pd, positional_product, rff_features,
                              sample_gaussian, sff_features)
from fstripe.grid import StructuralGrid, linear_grid, structural_grid
from fstripe.net import binarize, clip_gradients, curriculum_length

from oracles import quadratic_linear_attention

seeds = st.integers(0, 2**32 - 1)
finite = st.floats(-1e3, 1e3, allow_nan=False)


def fourier(seed, n_freq, levels):
    rng = np.random.default_rng(seed)
    return FourierParams(rng.uniform(0, 0.5, (n_freq, levels)), rng.uniform(0, 2 * np.pi, n_freq),
                         rng.uniform(0, 2 * np.pi, n_freq), rng.uniform(0, 2, n_freq))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40))
def test_linear_grid_round_trip(T):
    assert np.array_equal(structural_grid([np.arange(T)], [0]).indices, linear_grid(T).indices)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 4), st.integers(1, 12), st.randoms())
def test_mask_permutation_equivariance(seed, L, T, rnd):
    labels = np.random.default_rng(seed).integers(0, 5, (L, T))
    mask = list(range(L))
    perm = mask[:]
    rnd.shuffle(perm)
    assert np.array_equal(structural_grid(labels, perm).indices, structural_grid(labels, mask).indices[:, perm])


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 8))
def test_equal_labels_equal_feature_rows(seed, L, n_freq):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 3, (10, L)).astype(float)
    idx[7] = idx[2]
    g = StructuralGrid(idx)
    p = fourier(seed, n_freq, L)
    Z = sample_gaussian(seed, 2 * n_freq, 5)
    for feats in (rff_features(g, p, "Q").matrix, sff_features(g, p, "K", Z).matrix):
        assert np.array_equal(feats[2], feats[7])
    pd = closed_form_pd(g, g, p)
    assert np.array_equal(pd[2], pd[7])


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 32), st.integers(1, 16))
def test_toeplitz_on_linear_grid(seed, T, n_freq):
    pd = closed_form_pd(linear_grid(T), linear_grid(T), fourier(seed, n_freq, 1))
    for k in range(-T + 1, T):
        assert np.var(np.diagonal(pd, k)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 16))
def test_closed_form_bound_and_rff_exactness(seed, L, n_freq):
    rng = np.random.default_rng(seed)
    gq, gk = StructuralGrid(rng.uniform(-5, 5, (6, L))), StructuralGrid(rng.uniform(-5, 5, (5, L)))
    p = fourier(seed, n_freq, L)
    pd = closed_form_pd(gq, gk, p)
    assert np.all(np.abs(pd) <= np.sum(p.gains ** 2) / n_freq + 1e-12)
    assert np.max(np.abs(positional_product(rff_features(gq, p, "Q"), rff_features(gk, p, "K")) - pd)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 16), st.integers(1, 6), st.integers(1, 4))
def test_decomposition_exactness(seed, T, D, n_freq):
    rng = np.random.default_rng(seed)
    g = StructuralGrid(rng.integers(0, 8, (T, 2)))
    ps = [fourier(seed + d, n_freq, 2) for d in range(D)]
    Q, K = rng.standard_normal((T, D)), rng.standard_normal((T, D))
    q_hat, k_hat = assemble_pe_qk(Q, K, [rff_features(g, p, "Q") for p in ps], [rff_features(g, p, "K") for p in ps])
    ref = exact_rpe_logits(Q, K, [closed_form_pd(g, g, p) for p in ps])
    assert np.max(np.abs(q_hat @ k_hat.T - ref)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 40), st.booleans(), st.integers(1, 17))
def test_linear_attention_oracle(seed, T, causal, chunk):
    rng = np.random.default_rng(seed)
    pq, pk = rng.random((T, 5)) + 1e-3, rng.random((T, 5)) + 1e-3
    V = rng.standard_normal((T, 2))
    out = linear_attention(pq, pk, V, causal=causal, chunk=chunk)
    assert np.max(np.abs(out - quadratic_linear_attention(pq, pk, V, causal))) < 1e-10


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), st.sampled_from(["elu", "prf"]), seeds)
def test_feature_map_positive(X, kind, seed):
    assert np.all(feature_map(X, kind, seed=seed) > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(4, 512))
def test_curriculum_monotone(epochs, T):
    lengths = [curriculum_length(e, epochs, T) for e in range(epochs)]
    assert all(1 <= a <= b <= T for a, b in zip(lengths, lengths[1:] + [T]))


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(1e-3, 10))
def test_clip_bound(seed, threshold):
    rng = np.random.default_rng(seed)
    grads = {"a": rng.standard_normal(7) * 5, "b": rng.standard_normal((3, 2)) * 5}
    clip_gradients(grads, threshold)
    assert np.sqrt(sum(np.sum(g * g) for g in grads.values())) <= threshold + 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(0, 1)), st.integers(0, 5))
def test_merge_only_adds_bits(p, gap):
    plain = binarize(p, "threshold", 0.5)
    merged = binarize(p, "merge", 0.5, gap)
    assert np.all(merged >= plain)
    assert np.array_equal(binarize(p, "merge", 0.5, 0), plain)


rolls = st.builds(lambda seed, T, d: (np.random.default_rng(seed).random((2, 128, T)) < d).astype(np.uint8),
                  seeds, st.integers(1, 48), st.floats(0.0, 0.2))


@settings(max_examples=40, deadline=None)
@given(rolls, seeds)
def test_metric_ranges_identity_symmetry(a, seed):
    b = (np.random.default_rng(seed).random(a.shape) < 0.05).astype(np.uint8)
    assert M.evaluate(a, a) == {"CS": 100.0, "SSMD": 0.0, "GS": 100.0, "NDD": 0.0}
    scores = M.evaluate(a, b)
    assert all(0.0 <= v <= 100.0 for v in scores.values())
    assert np.isclose(M.ssmd(a, b), M.ssmd(b, a))
    assert np.isclose(M.chroma_similarity(a, b), M.chroma_similarity(b, a))
    assert M.grooving_similarity(a, b) == M.grooving_similarity(b, a)


@settings(max_examples=40, deadline=None)
@given(rolls, seeds, st.integers(0, 40))
def test_metric_padding_invariance(a, seed, extra):
    b = (np.random.default_rng(seed).random(a.shape) < 0.05).astype(np.uint8)
    T = a.shape[-1]
    # padding inside the last measure never changes any score
    to_bar = (-T) % 16
    pad = lambda r, n: np.pad(r, ((0, 0), (0, 0), (0, n)))
    before, after = M.evaluate(a, b), M.evaluate(pad(a, to_bar), pad(b, to_bar))
    assert all(np.isclose(before[k], after[k]) for k in before)
    # note density ignores silence of any length
    assert np.isclose(M.note_density_distance(a, b), M.note_density_distance(pad(a, extra), pad(b, extra)))
