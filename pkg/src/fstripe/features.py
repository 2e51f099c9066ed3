"""Sinusoidal positional features and the kernels they realize.

Two constructions are provided. The random Fourier feature (RFF) matrices
are deterministic, and their product equals a cosine kernel of label
differences exactly. Stochastic Fourier features (SFF) mix the same
sinusoids through a Gaussian matrix and only approach that kernel as the
number of realizations grows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import StructuralGrid

TWO_PI = 2.0 * np.pi
SFF_PRODUCT_SCALE = 2.0


def subseed(seed: int, *path: int) -> np.random.SeedSequence:
    """Seed sequence for one (head, dimension, ...) slot of a parameter tree."""
    return np.random.SeedSequence([int(seed), *map(int, path)])


@dataclass
class FourierParams:
    """Frequencies (N_f x L), phases per side, and gains of one attention dimension."""

    frequencies: np.ndarray
    phases_q: np.ndarray
    phases_k: np.ndarray
    gains: np.ndarray
    R: int = 1
    seed: int = 0

    def __post_init__(self):
        self.frequencies = np.atleast_2d(np.asarray(self.frequencies, dtype=np.float64))
        self.phases_q = np.asarray(self.phases_q, dtype=np.float64).reshape(-1)
        self.phases_k = np.asarray(self.phases_k, dtype=np.float64).reshape(-1)
        self.gains = np.asarray(self.gains, dtype=np.float64).reshape(-1)
        n_f = self.frequencies.shape[0]
        if n_f < 1:
            raise ValueError("need at least one frequency")
        for name in ("phases_q", "phases_k", "gains"):
            if getattr(self, name).shape != (n_f,):
                raise ValueError(f"{name} must have {n_f} entries, got {getattr(self, name).shape}")
        if np.any(self.gains < 0):
            raise ValueError("gains must be non-negative")
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")

    @property
    def n_freq(self) -> int:
        return self.frequencies.shape[0]

    @property
    def levels(self) -> int:
        return self.frequencies.shape[1]

    def phases(self, side: str) -> np.ndarray:
        side = side.upper()
        if side == "Q":
            return self.phases_q
        if side == "K":
            return self.phases_k
        raise ValueError(f"side must be 'Q' or 'K', got {side!r}")

    def expanded_gains(self) -> np.ndarray:
        # one copy for the cos column and one for the sin column
        return np.repeat(self.gains, 2)

    @classmethod
    def init(cls, n_freq: int, levels: int, seed: int, R: int = 1, max_freq: float = 0.5):
        """Random initialization: f in (0, max_freq], phases in [0, 2pi), unit gains."""
        if n_freq < 1 or levels < 1:
            raise ValueError("n_freq and levels must be >= 1")
        rng = np.random.default_rng(subseed(seed))
        f = max_freq * (1.0 - rng.random((n_freq, levels)))
        return cls(f, rng.uniform(0, TWO_PI, n_freq), rng.uniform(0, TWO_PI, n_freq),
                   np.ones(n_freq), R=R, seed=seed)


@dataclass
class PositionalFeatures:
    matrix: np.ndarray
    kind: str  # "rff" or "sff"
    R: int | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("rff", "sff"):
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @property
    def shape(self):
        return self.matrix.shape


def _check_grid(grid: StructuralGrid, f: np.ndarray):
    if grid.levels != f.shape[1]:
        raise ValueError(f"grid has {grid.levels} levels but frequencies have {f.shape[1]} columns")


def sinusoid_matrix(grid: StructuralGrid, f, theta) -> np.ndarray:
    """T x 2N_f matrix; columns 2w and 2w+1 hold cos and sin of 2pi f[w]ᵀp_i + theta[w]."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    _check_grid(grid, f)
    if theta.shape[0] != f.shape[0]:
        raise ValueError(f"{f.shape[0]} frequencies but {theta.shape[0]} phases")
    arg = TWO_PI * (grid.indices @ f.T) + theta
    out = np.empty((grid.length, 2 * f.shape[0]))
    out[:, 0::2] = np.cos(arg)
    out[:, 1::2] = np.sin(arg)
    return out


def rff_features(grid: StructuralGrid, params: FourierParams, side: str) -> PositionalFeatures:
    omega = sinusoid_matrix(grid, params.frequencies, params.phases(side))
    return PositionalFeatures(omega * params.expanded_gains() / np.sqrt(params.n_freq), "rff")


def sample_gaussian(seed, rows: int, cols: int) -> np.ndarray:
    """Standard normal ``rows x cols`` matrix; ``seed`` may be an int or a SeedSequence."""
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian matrix needs rows, cols >= 1, got {rows}x{cols}")
    return np.random.default_rng(seed).standard_normal((rows, cols))


def sff_features(grid: StructuralGrid, params: FourierParams, side: str, Z) -> PositionalFeatures:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != 2 * params.n_freq:
        raise ValueError(f"Z must have {2 * params.n_freq} rows, got shape {Z.shape}")
    omega = sinusoid_matrix(grid, params.frequencies, params.phases(side))
    mat = (omega * params.expanded_gains()) @ Z / np.sqrt(2 * params.n_freq)
    return PositionalFeatures(mat, "sff", R=Z.shape[1])


def closed_form_pd(grid_q: StructuralGrid, grid_k: StructuralGrid, params: FourierParams) -> np.ndarray:
    """Cosine kernel of label differences, evaluated entrywise without features."""
    f = params.frequencies
    _check_grid(grid_q, f)
    _check_grid(grid_k, f)
    big_lambda = params.gains ** 2
    big_theta = params.phases_q - params.phases_k
    out = np.zeros((grid_q.length, grid_k.length))
    # one frequency at a time keeps memory at a single T_Q x T_K buffer
    for w in range(params.n_freq):
        diff = (grid_q.indices @ f[w])[:, None] - (grid_k.indices @ f[w])[None, :]
        out += big_lambda[w] * np.cos(TWO_PI * diff + big_theta[w])
    return out / params.n_freq


def positional_product(Pq: PositionalFeatures, Pk: PositionalFeatures) -> np.ndarray:
    if Pq.kind != Pk.kind:
        raise ValueError(f"cannot multiply {Pq.kind} features with {Pk.kind} features")
    if Pq.matrix.shape[1] != Pk.matrix.shape[1]:
        raise ValueError(f"inner dimensions differ: {Pq.matrix.shape[1]} vs {Pk.matrix.shape[1]}")
    prod = Pq.matrix @ Pk.matrix.T
    if Pq.kind == "sff":
        # E[Z Zᵀ] = R I, and the 1/sqrt(2 N_f) scaling of SFF features leaves
        # half the RFF kernel, so 2/R makes this an unbiased kernel estimate.
        prod *= SFF_PRODUCT_SCALE / Pq.matrix.shape[1]
    return prod
