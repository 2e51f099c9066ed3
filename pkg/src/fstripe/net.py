"""Desk-scale causal transformer encoder with structure-informed linear attention.

The model maps melody + bridge pianoroll frames (T x 256) to per-pitch
probabilities for all three tracks (T x 384), predicting every timestep at
once. Gradients come from :mod:`fstripe.autodiff`.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import NORMALIZER_EPS, _MAP_STREAM, canonical_feature_map, canonical_pe_kind, random_projection
from .errors import DivergenceError, NumericError
from .features import TWO_PI, FourierParams, sample_gaussian, subseed
from .grid import StructuralGrid

N_PITCH = 128
IN_DIM = 2 * N_PITCH
OUT_DIM = 3 * N_PITCH
LN_EPS = 1e-5

CHECKPOINT_MAGIC = b"FSPE"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    pe_kind: str = "rff"
    feature_map: str = "elu"
    structure: tuple[str, ...] = ("time",)
    n_freq: int = 4
    R: int = 16
    causal: bool = True
    dropout: float = 0.0
    chunk: int = 32
    out_bias: float = -3.0
    seed: int = 0

    def __post_init__(self):
        self.pe_kind = canonical_pe_kind(self.pe_kind)
        self.feature_map = canonical_feature_map(self.feature_map)
        self.structure = tuple(self.structure)
        if self.layers < 1 or self.heads < 1:
            raise ValueError("layers and heads must be >= 1")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.dropout != 0.0:
            raise ValueError("dropout is not supported; it must be 0")
        if self.pe_kind != "none" and not self.structure:
            raise ValueError("a positional encoding needs at least one structural level")
        if self.n_freq < 1 or self.R < 1:
            raise ValueError("n_freq and R must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def levels(self) -> int:
        return len(self.structure)

    def layer_seed(self, layer: int) -> int:
        return self.seed + layer


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 5e-4
    warmup_steps: int = 20
    epoch_decay: float = 0.95
    curriculum: bool = True
    clip_norm: float = 1.0
    max_steps: int | None = None
    binarization: str = "threshold"
    threshold: float = 0.5
    merge_gap: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")


class Model:
    """Parameters (name -> array) plus the fixed random draws the config implies."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        self.constants = init_constants(config)

    def copy(self) -> "Model":
        return Model(copy.deepcopy(self.config), {k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(subseed(config.seed, 0xBEEF))
    dm, ff = config.model_dim, config.ff_dim

    def dense(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    p = {"embed.W": dense(IN_DIM, dm), "embed.b": np.zeros(dm)}
    for i in range(config.layers):
        pre = f"layer{i}."
        p[pre + "ln1.g"] = np.ones(dm)
        p[pre + "ln1.b"] = np.zeros(dm)
        for name in ("Wq", "Wk", "Wv", "Wo"):
            p[pre + "attn." + name] = dense(dm, dm)
        p[pre + "attn.bo"] = np.zeros(dm)
        if config.pe_kind != "none":
            H, D, L = config.heads, config.head_dim, config.levels
            freq = np.empty((H, D, config.n_freq, L))
            phase_q = np.empty((H, D, config.n_freq))
            phase_k = np.empty_like(phase_q)
            for h in range(H):
                for d in range(D):
                    fp = FourierParams.init(config.n_freq, L, seed=int(
                        subseed(config.layer_seed(i), h, d, 1).generate_state(1)[0]))
                    freq[h, d], phase_q[h, d], phase_k[h, d] = fp.frequencies, fp.phases_q, fp.phases_k
            p[pre + "pe.freq"] = freq
            p[pre + "pe.phase_q"] = phase_q
            p[pre + "pe.phase_k"] = phase_k
            p[pre + "pe.gain"] = np.ones((H, D, config.n_freq))
        p[pre + "ln2.g"] = np.ones(dm)
        p[pre + "ln2.b"] = np.zeros(dm)
        p[pre + "ff.W1"] = dense(dm, ff)
        p[pre + "ff.b1"] = np.zeros(ff)
        p[pre + "ff.W2"] = dense(ff, dm)
        p[pre + "ff.b2"] = np.zeros(dm)
    p["final_ln.g"] = np.ones(dm)
    p["final_ln.b"] = np.zeros(dm)
    p["out.W"] = dense(dm, OUT_DIM)
    # pianorolls are sparse; start near a low firing rate instead of 0.5
    p["out.b"] = np.full(OUT_DIM, config.out_bias)
    return p


def init_constants(config: ModelConfig) -> dict[str, np.ndarray]:
    """Gaussian mixing matrices (SFF) and projections (positive random features)."""
    H, D = config.heads, config.head_dim
    E = D * _feature_width(config)
    out = {}
    for i in range(config.layers):
        seed = config.layer_seed(i)
        if config.pe_kind == "sff":
            out[f"layer{i}.Z"] = np.stack([
                np.stack([sample_gaussian(subseed(seed, h, d), 2 * config.n_freq, config.R) for d in range(D)])
                for h in range(H)])
        if config.feature_map == "prf":
            out[f"layer{i}.omega"] = np.stack([
                random_projection(subseed(seed, _MAP_STREAM, h), E, E) for h in range(H)])
    return out


def _feature_width(config: ModelConfig) -> int:
    return {"none": 1, "rff": 2 * config.n_freq, "sff": config.R}[config.pe_kind]


# -- forward -----------------------------------------------------------------

def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = ad.square(xc).mean(axis=-1, keepdims=True)
    return xc / ad.sqrt(var + LN_EPS) * g + b


def _positional(grid, freq, phase, gain, config: ModelConfig, Z=None):
    """B x T x H x D x F positional features for one side."""
    B, T, L = grid.shape
    H, D, Nf = config.heads, config.head_dim, config.n_freq
    proj = ad.matmul(grid, freq.reshape(H * D * Nf, L).transpose()).reshape(B, T, H, D, Nf)
    arg = proj * TWO_PI + phase
    scale = gain * (1.0 / np.sqrt(Nf))
    pair = ad.concat([(ad.cos(arg) * scale).reshape(B, T, H, D, Nf, 1),
                      (ad.sin(arg) * scale).reshape(B, T, H, D, Nf, 1)], axis=-1)
    rff = pair.reshape(B, T, H, D, 1, 2 * Nf)
    if Z is None:
        return rff.reshape(B, T, H, D, 2 * Nf)
    # Omega diag(gain) Z / sqrt(2 N_f), times sqrt(2 / R) from the assembly step
    return (ad.matmul(rff, Z) * (1.0 / np.sqrt(config.R))).reshape(B, T, H, D, config.R)


def _feature_map(x, config: ModelConfig, omega=None):
    if config.feature_map == "elu":
        return ad.elu_plus_one(x)
    # x: B x H x T x E, omega: H x E' x E
    arg = ad.matmul(x, omega.transpose(0, 2, 1)[None]) - ad.square(x).sum(axis=-1, keepdims=True) * 0.5
    return ad.exp(arg) * (1.0 / np.sqrt(omega.shape[1])) + np.finfo(np.float64).tiny


def _attention(a, p, pre, grid, model: Model, layer: int):
    config = model.config
    B, T, _ = a.shape
    H, D = config.heads, config.head_dim
    q = (a @ p[pre + "attn.Wq"]).reshape(B, T, H, D)
    k = (a @ p[pre + "attn.Wk"]).reshape(B, T, H, D)
    v = (a @ p[pre + "attn.Wv"]).reshape(B, T, H, D).transpose(0, 2, 1, 3)
    if config.pe_kind == "none":
        q_hat = q.transpose(0, 2, 1, 3)
        k_hat = k.transpose(0, 2, 1, 3)
    else:
        Z = model.constants.get(f"layer{layer}.Z")
        Pq = _positional(grid, p[pre + "pe.freq"], p[pre + "pe.phase_q"], p[pre + "pe.gain"], config, Z)
        Pk = _positional(grid, p[pre + "pe.freq"], p[pre + "pe.phase_k"], p[pre + "pe.gain"], config, Z)
        F = Pq.shape[-1]
        q_hat = (q.reshape(B, T, H, D, 1) * Pq).reshape(B, T, H, D * F).transpose(0, 2, 1, 3)
        k_hat = (k.reshape(B, T, H, D, 1) * Pk).reshape(B, T, H, D * F).transpose(0, 2, 1, 3)
    omega = model.constants.get(f"layer{layer}.omega")
    phi_q = _feature_map(q_hat, config, omega)
    phi_k = _feature_map(k_hat, config, omega)
    if config.causal:
        o = ad.causal_linear_attention(phi_q, phi_k, v, eps=NORMALIZER_EPS, chunk=config.chunk)
    else:
        kv = ad.matmul(phi_k.transpose(0, 1, 3, 2), v)
        den = ad.matmul(phi_q, phi_k.sum(axis=2, keepdims=True).transpose(0, 1, 3, 2)) + NORMALIZER_EPS
        o = ad.matmul(phi_q, kv) / den
    o = o.transpose(0, 2, 1, 3).reshape(B, T, H * D)
    return o @ p[pre + "attn.Wo"] + p[pre + "attn.bo"]


def _prepare(model: Model, x, grid):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != IN_DIM:
        raise ValueError(f"input must be T x {IN_DIM} (or batched), got {x.shape}")
    g = grid.indices if isinstance(grid, StructuralGrid) else np.asarray(grid, dtype=np.float64)
    if g.ndim == 2:
        g = np.broadcast_to(g, (x.shape[0],) + g.shape)
    if g.shape[:2] != x.shape[:2]:
        raise ValueError(f"grid covers {g.shape[1]} steps but input has {x.shape[1]}")
    if model.config.pe_kind != "none" and g.shape[2] != model.config.levels:
        raise ValueError(f"grid has {g.shape[2]} levels, model expects {model.config.levels}")
    return x, np.ascontiguousarray(g), single


def forward_tensor(model: Model, params: dict, x: np.ndarray, grid: np.ndarray):
    """Logits as a tape tensor; ``params`` may hold watched tensors."""
    config = model.config
    p = params
    h = x @ p["embed.W"] + p["embed.b"]
    for i in range(config.layers):
        pre = f"layer{i}."
        h = h + _attention(_layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"]), p, pre, grid, model, i)
        a = _layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = h + ad.relu(a @ p[pre + "ff.W1"] + p[pre + "ff.b1"]) @ p[pre + "ff.W2"] + p[pre + "ff.b2"]
    h = _layer_norm(h, p["final_ln.g"], p["final_ln.b"])
    return h @ p["out.W"] + p["out.b"]


def forward(model: Model, x, grid) -> np.ndarray:
    """Per-pitch probabilities, T x 384 (or B x T x 384 for batched input)."""
    x, g, single = _prepare(model, x, grid)
    params = {k: ad.Tensor(v) for k, v in model.params.items()}
    prob = ad.sigmoid(forward_tensor(model, params, x, g)).data
    return prob[0] if single else prob


def loss(probabilities, target) -> float:
    """Mean per-bit binary cross-entropy."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probabilities.shape != target.shape:
        raise ValueError(f"shape mismatch: {probabilities.shape} vs {target.shape}")
    return float(ad.binary_cross_entropy(probabilities, target).data)


def loss_and_grads(model: Model, x, grid, target) -> tuple[float, dict[str, np.ndarray]]:
    x, g, single = _prepare(model, x, grid)
    target = np.asarray(target, dtype=np.float64)
    if single:
        target = target[None]
    with ad.GradTape() as tape:
        watched = {k: tape.watch(v) for k, v in model.params.items()}
        prob = ad.sigmoid(forward_tensor(model, watched, x, g))
        value = ad.binary_cross_entropy(prob, target)
        grads = tape.backward(value)
    return float(value.data), {k: grads.get(id(t), np.zeros_like(t.data)) for k, t in watched.items()}


# -- gradient verification -----------------------------------------------------

def _sample_indices(name: str, shape: tuple, rng, per_param: int) -> list[tuple]:
    size = int(np.prod(shape))
    n = min(size, per_param)
    flat = rng.choice(size, size=n, replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def grad_check(model: Model, x, grid, epsilon: float = 1e-5, target=None, per_param: int = 2,
               seed: int = 0, return_details: bool = False):
    """Max relative error between tape gradients and central finite differences.

    Checks ``per_param`` sampled entries of every parameter array, which
    includes frequencies, phases and gains in every layer when a positional
    encoding is active.
    """
    if not (1e-6 <= epsilon <= 1e-4):
        raise ValueError(f"epsilon must lie in [1e-6, 1e-4], got {epsilon}")
    x_arr, g_arr, single = _prepare(model, x, grid)
    if target is None:
        target = np.random.default_rng(subseed(seed, 7)).random(x_arr.shape[:2] + (OUT_DIM,)) < 0.1
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 2:
        target = target[None]
    _, grads = loss_and_grads(model, x_arr, g_arr, target)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")

    def objective():
        params = {k: ad.Tensor(v) for k, v in model.params.items()}
        prob = ad.sigmoid(forward_tensor(model, params, x_arr, g_arr))
        return float(ad.binary_cross_entropy(prob, target).data)

    rng = np.random.default_rng(subseed(seed, 11))
    worst, details = 0.0, []
    for name, value in model.params.items():
        for idx in _sample_indices(name, value.shape, rng, per_param):
            orig = value[idx]
            value[idx] = orig + epsilon
            up = objective()
            value[idx] = orig - epsilon
            down = objective()
            value[idx] = orig
            fd = (up - down) / (2 * epsilon)
            an = float(grads[name][idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-5)
            details.append((name, idx, an, fd, rel))
            worst = max(worst, rel)
    return (worst, details) if return_details else worst


# -- training ------------------------------------------------------------------

@dataclass
class Sample:
    x: np.ndarray
    y: np.ndarray
    labels: dict[str, np.ndarray] = field(default_factory=dict)

    def grid(self, structure: Sequence[str]) -> np.ndarray:
        T = self.x.shape[0]
        cols = []
        for name in structure:
            if name == "time":
                cols.append(np.arange(T, dtype=np.float64))
            else:
                cols.append(np.asarray(self.labels[name], dtype=np.float64))
        return np.stack(cols, axis=1) if cols else np.zeros((T, 0))


def curriculum_length(epoch: int, epochs: int, T: int) -> int:
    """Linear ramp from T/4 at epoch 0 to T at the midpoint, then flat."""
    start = max(1, T // 4)
    half = max(1, epochs // 2)
    frac = min(1.0, epoch / half)
    return int(round(start + (T - start) * frac))


def learning_rate_at(step: int, epoch: int, config: TrainConfig) -> float:
    warm = min(1.0, (step + 1) / config.warmup_steps) if config.warmup_steps > 0 else 1.0
    return config.learning_rate * warm * config.epoch_decay ** epoch


def clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> float:
    """Scale ``grads`` in place to global norm <= threshold; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def train(model: Model, dataset: Sequence[Sample], config: TrainConfig):
    """Adam with linear warmup, epoch-wise decay, global-norm clipping and a length curriculum.

    Returns ``(model, log)``; ``log`` holds one dict per epoch with keys
    epoch, lr, loss, grad_norm. The model is updated in place.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    T = min(s.x.shape[0] for s in dataset)
    rng = np.random.default_rng(subseed(config.seed, 3))
    opt = Adam(model.params)
    log: list[dict] = []
    step = 0
    good = {k: v.copy() for k, v in model.params.items()}
    for epoch in range(config.epochs):
        length = curriculum_length(epoch, config.epochs, T) if config.curriculum else T
        order = rng.permutation(len(dataset))
        losses, norms, lr = [], [], 0.0
        for b in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            batch = [dataset[i] for i in order[b:b + config.batch_size]]
            x = np.stack([s.x[:length] for s in batch])
            y = np.stack([s.y[:length] for s in batch])
            g = np.stack([s.grid(model.config.structure)[:length] for s in batch])
            value, grads = loss_and_grads(model, x, g, y)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}",
                                      checkpoint=Model(model.config, good), log=log)
            norms.append(clip_gradients(grads, config.clip_norm))
            lr = learning_rate_at(step, epoch, config)
            opt.step(model.params, grads, lr)
            losses.append(value)
            step += 1
        if not losses:
            break
        good = {k: v.copy() for k, v in model.params.items()}
        log.append({"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)),
                    "grad_norm": float(np.mean(norms))})
    return model, log


def write_log(log: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "loss", "grad_norm"])
        for row in log:
            w.writerow([row["epoch"], repr(row["lr"]), repr(row["loss"]), repr(row["grad_norm"])])


# -- post-processing -----------------------------------------------------------

BINARIZATION = ("threshold", "merge")


def binarize(probabilities, strategy: str = "threshold", threshold: float = 0.5, merge_gap: int = 0,
             axis: int = 0) -> np.ndarray:
    """Threshold probabilities; ``merge`` also fills runs of <= merge_gap zeros between two notes.

    ``axis`` is the time axis; every other index is a pitch lane.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if strategy not in BINARIZATION:
        raise ValueError(f"unknown binarization {strategy!r}; expected one of {BINARIZATION}")
    if merge_gap < 0:
        raise ValueError("merge_gap must be >= 0")
    bits = (np.asarray(probabilities) >= threshold).astype(np.uint8)
    if strategy == "threshold" or merge_gap == 0 or bits.ndim == 0:
        return bits
    lanes = np.moveaxis(bits, axis, -1)
    flat = lanes.reshape(-1, lanes.shape[-1])
    for lane in flat:
        on = np.flatnonzero(lane)
        for a, b in zip(on[:-1], on[1:]):
            if 1 < b - a <= merge_gap + 1:
                lane[a + 1:b] = 1
    return np.moveaxis(flat.reshape(lanes.shape), -1, axis)


def to_pianoroll(frames: np.ndarray, tracks: int = 3) -> np.ndarray:
    """T x (tracks * 128) frames -> tracks x 128 x T."""
    T = frames.shape[0]
    return np.ascontiguousarray(frames.reshape(T, tracks, N_PITCH).transpose(1, 2, 0))


def from_pianoroll(roll: np.ndarray) -> np.ndarray:
    tracks, pitches, T = roll.shape
    return np.ascontiguousarray(roll.transpose(2, 0, 1).reshape(T, tracks * pitches))


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(model: Model, path) -> None:
    """Magic ``FSPE``, u32 version, u32 header length, JSON header, float64 LE parameters."""
    cfg = asdict(model.config)
    cfg["structure"] = list(cfg["structure"])
    header = json.dumps({"config": cfg,
                         "params": [[k, list(v.shape)] for k, v in model.params.items()]}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    from .errors import ParseError

    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not an FSPE checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    offset = 12 + hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    if offset != len(raw):
        raise ParseError(f"{path}: {len(raw) - offset} trailing bytes")
    return Model(ModelConfig(**header["config"]), params)
