"""Exact and kernelized attention, and the structure-informed PE assembly.

Exact paths (softmax over explicit logits) are quadratic in sequence length
and serve as oracles. The kernelized path never forms a T x T matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError
from .features import (SFF_PRODUCT_SCALE, FourierParams, PositionalFeatures, closed_form_pd, rff_features,
                       sample_gaussian, sff_features, subseed)
from .grid import StructuralGrid

NORMALIZER_EPS = 1e-9
TINY = np.finfo(np.float64).tiny

FEATURE_MAPS = {"elu": "elu", "elu-plus-one": "elu",
                "prf": "prf", "positive-random-features": "prf"}
PE_KINDS = ("none", "sff", "rff")

# salt for the feature-map stream so it never collides with per-dimension Z draws
_MAP_STREAM = 1 << 20


def canonical_feature_map(kind: str) -> str:
    try:
        return FEATURE_MAPS[kind.lower()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown feature map {kind!r}; expected one of {sorted(FEATURE_MAPS)}") from None


def canonical_pe_kind(kind: str) -> str:
    k = str(kind).lower()
    if k not in PE_KINDS:
        raise ValueError(f"unknown PE kind {kind!r}; expected one of {PE_KINDS}")
    return k


@dataclass
class AttentionConfig:
    heads: int = 1
    head_dim: int = 8
    causal: bool = False
    feature_map: str = "elu"
    pe_kind: str = "rff"
    R: int = 64
    n_freq: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("heads and head_dim must be >= 1")
        self.feature_map = canonical_feature_map(self.feature_map)
        self.pe_kind = canonical_pe_kind(self.pe_kind)
        if self.pe_kind == "sff" and self.R < 1:
            raise ValueError("SFF needs R >= 1")
        if self.n_freq < 1:
            raise ValueError("n_freq must be >= 1")


@dataclass
class AttentionInputs:
    """Per-head Q (H x T_Q x D), K (H x T_K x D), V (H x T_K x D_v) and the two grids.

    2-D inputs are treated as a single head.
    """

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    grid_q: StructuralGrid | None = None
    grid_k: StructuralGrid | None = None

    def __post_init__(self):
        self.squeezed = np.ndim(self.Q) == 2
        self.Q, self.K, self.V = (np.asarray(a, dtype=np.float64) for a in (self.Q, self.K, self.V))
        if self.squeezed:
            self.Q, self.K, self.V = self.Q[None], self.K[None], self.V[None]
        if not (self.Q.ndim == self.K.ndim == self.V.ndim == 3):
            raise ValueError("Q, K, V must all be 2-D or all be 3-D")
        H, _, D = self.Q.shape
        if self.K.shape[0] != H or self.V.shape[0] != H:
            raise ValueError("Q, K, V disagree on head count")
        if self.K.shape[2] != D:
            raise ValueError(f"Q has head dim {D}, K has {self.K.shape[2]}")
        if self.K.shape[1] != self.V.shape[1]:
            raise ValueError("K and V must have the same number of rows")
        for name in ("Q", "K", "V"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if self.grid_q is not None and self.grid_q.length != self.Q.shape[1]:
            raise ValueError(f"grid_q has {self.grid_q.length} rows, Q has {self.Q.shape[1]}")
        if self.grid_k is not None and self.grid_k.length != self.K.shape[1]:
            raise ValueError(f"grid_k has {self.grid_k.length} rows, K has {self.K.shape[1]}")


def _causal_mask(tq: int, tk: int) -> np.ndarray:
    return np.arange(tk)[None, :] > np.arange(tq)[:, None]


def softmax_from_logits(logits: np.ndarray, V: np.ndarray, scale: float, causal: bool = False) -> np.ndarray:
    """Row-normalized exp(logits * scale) applied to V; fully masked rows give zeros."""
    a = logits * scale
    if causal:
        a = np.where(_causal_mask(*a.shape), -np.inf, a)
    rowmax = a.max(axis=1, keepdims=True)
    dead = ~np.isfinite(rowmax[:, 0])
    rowmax[dead] = 0.0
    w = np.exp(a - rowmax)
    w /= np.maximum(w.sum(axis=1, keepdims=True), TINY)
    out = w @ V
    out[dead] = 0.0
    return out


def softmax_attention(Q, K, V, P=None, causal: bool = False) -> np.ndarray:
    """Content attention with an optional additive positional matrix, temperature 1/sqrt(D)."""
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"Q and K head dims differ: {Q.shape[1]} vs {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ValueError("K and V must have the same number of rows")
    logits = Q @ K.T
    if P is not None:
        P = np.asarray(P, dtype=np.float64)
        if P.shape != logits.shape:
            raise ValueError(f"P has shape {P.shape}, expected {logits.shape}")
        logits = logits + P
    return softmax_from_logits(logits, V, 1.0 / np.sqrt(Q.shape[1]), causal)


def exact_rpe_logits(Q, K, Pd_stack: Iterable[np.ndarray]) -> np.ndarray:
    """sum_d Q[m, d] P_d[m, n] K[n, d], accumulated one dimension at a time.

    ``Pd_stack`` may be a generator so that only one T_Q x T_K positional
    matrix is alive at once.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    D = Q.shape[1]
    out = np.zeros((Q.shape[0], K.shape[0]))
    count = 0
    for d, Pd in enumerate(Pd_stack):
        if d >= D:
            raise ValueError(f"positional stack has more than D={D} entries")
        Pd = np.asarray(Pd, dtype=np.float64)
        if Pd.shape != out.shape:
            raise ValueError(f"P_{d} has shape {Pd.shape}, expected {out.shape}")
        out += Q[:, d, None] * Pd * K[None, :, d]
        count += 1
    if count != D:
        raise ValueError(f"positional stack has {count} entries, expected D={D}")
    return out


def assemble_pe_qk(Q, K, features_q: Sequence[PositionalFeatures],
                   features_k: Sequence[PositionalFeatures]) -> tuple[np.ndarray, np.ndarray]:
    """Mix content with positional features: block d is diag(Q[:, d]) @ P_d^Q, likewise for K.

    Q̂ K̂ᵀ equals exact_rpe_logits over positional_product(features_q[d], features_k[d]).
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    D = Q.shape[1]
    if len(features_q) != D or len(features_k) != D:
        raise ValueError(f"need {D} feature matrices per side, got {len(features_q)} and {len(features_k)}")
    kinds = {p.kind for p in features_q} | {p.kind for p in features_k}
    if len(kinds) != 1:
        raise ValueError(f"mixed feature kinds {sorted(kinds)}")
    widths = {p.matrix.shape[1] for p in features_q} | {p.matrix.shape[1] for p in features_k}
    if len(widths) != 1:
        raise ValueError(f"feature width differs across dimensions or sides: {sorted(widths)}")
    F = widths.pop()
    c = np.sqrt(SFF_PRODUCT_SCALE / F) if kinds.pop() == "sff" else 1.0
    for p in features_q:
        if p.matrix.shape[0] != Q.shape[0]:
            raise ValueError("query features and Q disagree on length")
    for p in features_k:
        if p.matrix.shape[0] != K.shape[0]:
            raise ValueError("key features and K disagree on length")

    Pq = np.stack([p.matrix for p in features_q], axis=1)  # T_Q x D x F
    Pk = np.stack([p.matrix for p in features_k], axis=1)
    q_hat = (Q[:, :, None] * Pq * c).reshape(Q.shape[0], D * F)
    k_hat = (K[:, :, None] * Pk * c).reshape(K.shape[0], D * F)
    return q_hat, k_hat


def random_projection(seed, n_features: int, dim: int) -> np.ndarray:
    return sample_gaussian(seed, n_features, dim)


def feature_map(X, kind: str = "elu", seed=0, n_features: int | None = None,
                omega: np.ndarray | None = None) -> np.ndarray:
    """Strictly positive feature map applied row-wise.

    ``elu`` is x + 1 for x >= 0 and exp(x) below. ``prf`` is the positive
    random feature map exp(x wᵀ - |x|^2 / 2) / sqrt(D_phi) with Gaussian rows
    w drawn from ``seed`` (or passed as ``omega``). Both are floored at the
    smallest normal double so underflow cannot produce zeros.
    """
    kind = canonical_feature_map(kind)
    X = np.asarray(X, dtype=np.float64)
    if kind == "elu":
        out = np.where(X >= 0, X + 1.0, np.exp(np.minimum(X, 0.0)))
    else:
        if omega is None:
            omega = random_projection(seed, n_features or X.shape[-1], X.shape[-1])
        arg = X @ omega.T - 0.5 * np.sum(X * X, axis=-1, keepdims=True)
        out = np.exp(arg) / np.sqrt(omega.shape[0])
    return np.maximum(out, TINY)


def _normalize(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    bad = ~(np.isfinite(den) & (den > 0))
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise NumericError(f"linear attention normalizer is {den[row]!r} at row {row}", row=row)
    return num / den[:, None]


def linear_attention(phi_q, phi_k, V, causal: bool = False, chunk: int = 64,
                     eps: float = NORMALIZER_EPS) -> np.ndarray:
    """Kernelized attention sum_n phi_q·phi_k v_n / (sum_n phi_q·phi_k + eps).

    The causal form walks the sequence in chunks, carrying the running sums
    of phi_k v_nᵀ and phi_k; extra memory is O(chunk^2 + D_phi D_v).
    """
    phi_q = np.asarray(phi_q, dtype=np.float64)
    phi_k = np.asarray(phi_k, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if phi_q.shape[1] != phi_k.shape[1]:
        raise ValueError(f"feature dims differ: {phi_q.shape[1]} vs {phi_k.shape[1]}")
    if phi_k.shape[0] != V.shape[0]:
        raise ValueError("phi_k and V must have the same number of rows")
    if np.any(phi_q < 0) or np.any(phi_k < 0):
        raise ValueError("feature maps must be non-negative")
    if not causal:
        num = phi_q @ (phi_k.T @ V)
        den = phi_q @ phi_k.sum(axis=0) + eps
        return _normalize(num, den)

    T = phi_q.shape[0]
    if phi_k.shape[0] != T:
        raise ValueError("causal linear attention needs T_Q == T_K")
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    state = np.zeros((phi_k.shape[1], V.shape[1]))
    mass = np.zeros(phi_k.shape[1])
    num = np.empty((T, V.shape[1]))
    den = np.empty(T)
    for s in range(0, T, chunk):
        e = min(s + chunk, T)
        q, k, v = phi_q[s:e], phi_k[s:e], V[s:e]
        local = np.tril(q @ k.T)
        num[s:e] = q @ state + local @ v
        den[s:e] = q @ mass + local.sum(axis=1)
        state += k.T @ v
        mass += k.sum(axis=0)
    return _normalize(num, den + eps)


def init_attention_params(config: AttentionConfig, levels: int) -> list[list[FourierParams]]:
    """Independent FourierParams for every (head, dimension) slot, sub-seeded deterministically."""
    return [[FourierParams.init(config.n_freq, levels, seed=_slot_seed(config.seed, h, d), R=config.R)
             for d in range(config.head_dim)]
            for h in range(config.heads)]


def _slot_seed(seed: int, h: int, d: int) -> int:
    return int(subseed(seed, h, d).generate_state(1)[0])


def positional_features(grid: StructuralGrid, params: FourierParams, side: str, kind: str,
                        seed: int, head: int, dim: int) -> PositionalFeatures:
    if kind == "rff":
        return rff_features(grid, params, side)
    Z = sample_gaussian(subseed(seed, head, dim), 2 * params.n_freq, params.R)
    return sff_features(grid, params, side, Z)


def fstripe_attention(inputs: AttentionInputs, params: Sequence[Sequence[FourierParams]],
                      config: AttentionConfig) -> np.ndarray:
    """Structure-informed linear attention: PE assembly, feature map, kernelized attention."""
    if config.pe_kind not in ("sff", "rff"):
        raise ValueError(f"fstripe_attention needs pe_kind sff or rff, got {config.pe_kind!r}")
    if inputs.grid_q is None or inputs.grid_k is None:
        raise ValueError("fstripe_attention needs grids attached to the inputs")
    H, _, D = inputs.Q.shape
    if len(params) != H or any(len(row) != D for row in params):
        raise ValueError(f"params must be {H} heads x {D} dims")
    outs = []
    for h in range(H):
        fq = [positional_features(inputs.grid_q, params[h][d], "Q", config.pe_kind, config.seed, h, d)
              for d in range(D)]
        fk = [positional_features(inputs.grid_k, params[h][d], "K", config.pe_kind, config.seed, h, d)
              for d in range(D)]
        q_hat, k_hat = assemble_pe_qk(inputs.Q[h], inputs.K[h], fq, fk)
        outs.append(_kernel_head(q_hat, k_hat, inputs.V[h], config, h))
    out = np.stack(outs)
    return out[0] if inputs.squeezed else out


def kernel_attention(inputs: AttentionInputs, config: AttentionConfig) -> np.ndarray:
    """Kernelized attention without positional encoding."""
    outs = [_kernel_head(inputs.Q[h], inputs.K[h], inputs.V[h], config, h)
            for h in range(inputs.Q.shape[0])]
    out = np.stack(outs)
    return out[0] if inputs.squeezed else out


def _kernel_head(q, k, v, config: AttentionConfig, head: int) -> np.ndarray:
    # queries and keys must share one projection
    omega = None
    if config.feature_map == "prf":
        omega = random_projection(subseed(config.seed, _MAP_STREAM, head), q.shape[1], q.shape[1])
    phi_q = feature_map(q, config.feature_map, omega=omega)
    phi_k = feature_map(k, config.feature_map, omega=omega)
    return linear_attention(phi_q, phi_k, v, causal=config.causal)


def exact_rpe_attention(inputs: AttentionInputs, params: Sequence[Sequence[FourierParams]],
                        config: AttentionConfig, return_logits: bool = False):
    """Softmax attention over exact RPE logits built from closed-form positional matrices."""
    if inputs.grid_q is None or inputs.grid_k is None:
        raise ValueError("exact RPE attention needs grids attached to the inputs")
    H, _, D = inputs.Q.shape
    outs, all_logits = [], []
    for h in range(H):
        stack = (closed_form_pd(inputs.grid_q, inputs.grid_k, params[h][d]) for d in range(D))
        logits = exact_rpe_logits(inputs.Q[h], inputs.K[h], stack)
        outs.append(softmax_from_logits(logits, inputs.V[h], 1.0 / np.sqrt(D), config.causal))
        if return_logits:
            all_logits.append(logits)
    out = np.stack(outs)
    if inputs.squeezed:
        out = out[0]
        all_logits = all_logits[:1]
    if return_logits:
        logits = np.stack(all_logits)
        return out, (logits[0] if inputs.squeezed else logits)
    return out
