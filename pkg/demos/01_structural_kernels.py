"""Positional kernels on linear and structural grids.

Walks through what a positional kernel looks like when the index is time
versus when it is a chord label, checks that the deterministic (RFF)
features reproduce the closed-form kernel exactly, and shows the stochastic
(SFF) estimate closing in on it as the number of realizations R grows.

    python3 demos/01_structural_kernels.py
"""
import numpy as np

from fstripe import bench
from fstripe.features import FourierParams, closed_form_pd, positional_product, rff_features
from fstripe.grid import linear_grid, structural_grid

np.set_printoptions(precision=2, suppress=True, linewidth=110)

# A 12-step excerpt: chords change every 4 steps, then the first chord returns.
chords = [0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0]
time_grid = linear_grid(12)
chord_grid = structural_grid([chords], [0])
params = FourierParams.init(n_freq=4, levels=1, seed=0)

print("Kernel over time: each diagonal is constant, so it only knows how far apart two steps are.")
k_time = closed_form_pd(time_grid, time_grid, params)
print(k_time[:6, :6])

print("\nKernel over chord labels: steps under the same chord are indistinguishable,")
print("and the returning chord at steps 8-11 looks exactly like steps 0-3.")
k_chord = closed_form_pd(chord_grid, chord_grid, params)
print(k_chord[[0, 3, 4, 8]][:, [0, 3, 4, 8]])
assert np.array_equal(k_chord[0], k_chord[8])

print("\nThe RFF feature product reproduces the closed form to rounding error:")
for name, g in (("time", time_grid), ("chord", chord_grid)):
    est = positional_product(rff_features(g, params, "Q"), rff_features(g, params, "K"))
    print(f"  {name:5s}  max |difference| = {np.max(np.abs(est - closed_form_pd(g, g, params))):.1e}")

print("\nThe SFF estimate is noisy. Its error shrinks like 1/sqrt(R):")
two_level = structural_grid([np.arange(64), np.arange(64) // 16], [0, 1])
rows = bench.approx_error([16, 64, 256, 1024], seeds=20, grid=two_level,
                          params=FourierParams.init(8, 2, seed=1))
print("     R   mean rel. error   std")
for R, mean, std in rows:
    print(f"  {R:5d}   {mean:14.3f}   {std:.3f}")
