"""Experiment harnesses: runtime/memory scaling and SFF approximation error."""
from __future__ import annotations

import contextlib
import statistics
import time
import tracemalloc
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import (AttentionConfig, AttentionInputs, exact_rpe_attention, fstripe_attention,
                        init_attention_params)
from .features import (FourierParams, closed_form_pd, positional_product, sample_gaussian, sff_features,
                       subseed)
from .grid import StructuralGrid, structural_grid

METHODS = ("fstripe", "exact")
BENCH_HEADER = ("method", "T", "wall_ns", "peak_extra_bytes", "status")


@dataclass
class BenchRow:
    method: str
    T: int
    wall_ns: int
    peak_extra_bytes: int
    status: str = "ok"

    def as_tuple(self):
        return (self.method, self.T, self.wall_ns, self.peak_extra_bytes, self.status)


def bench_grid(T: int) -> StructuralGrid:
    """Two-level grid: time plus a chord-like label that changes every 8 steps."""
    t = np.arange(T, dtype=np.float64)
    return structural_grid([t, t // 8], [0, 1])


def bench_inputs(T: int, config: AttentionConfig, seed: int) -> AttentionInputs:
    rng = np.random.default_rng(subseed(seed, T))
    shape = (config.heads, T, config.head_dim)
    g = bench_grid(T)
    return AttentionInputs(rng.standard_normal(shape), rng.standard_normal(shape),
                           rng.standard_normal(shape), g, g)


@contextlib.contextmanager
def single_thread(threads: int | None = 1):
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=threads):
        yield


def _runner(method: str, inputs: AttentionInputs, params, config: AttentionConfig):
    if method == "fstripe":
        return lambda: fstripe_attention(inputs, params, config)
    if method == "exact":
        return lambda: exact_rpe_attention(inputs, params, config)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def measure_peak_bytes(fn) -> int:
    """Peak bytes allocated (as seen by tracemalloc) during ``fn()`` beyond what existed before."""
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    try:
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return max(0, peak - base)


def run_bench(methods: Sequence[str], lengths: Sequence[int], config: AttentionConfig | None = None,
              reps: int = 5, threads: int | None = 1, seed: int = 0) -> list[BenchRow]:
    """Median wall time over ``reps`` runs and peak extra allocation, per method and length."""
    lengths = sorted(set(int(t) for t in lengths))
    if len(lengths) < 2:
        raise ValueError("need at least two distinct lengths")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    config = config or AttentionConfig(heads=1, head_dim=8, causal=True, pe_kind="rff", n_freq=4, seed=seed)
    params = init_attention_params(config, levels=2)
    rows = []
    with single_thread(threads):
        for method in methods:
            for T in lengths:
                inputs = bench_inputs(T, config, seed)
                fn = _runner(method, inputs, params, config)
                try:
                    fn()  # warm-up
                    times = []
                    for _ in range(reps):
                        t0 = time.perf_counter_ns()
                        fn()
                        times.append(time.perf_counter_ns() - t0)
                    peak = measure_peak_bytes(fn)
                    rows.append(BenchRow(method, T, max(1, int(statistics.median(times))), peak))
                except MemoryError:
                    rows.append(BenchRow(method, T, 0, 0, "oom"))
                except Exception as exc:  # recorded, the caller decides the exit code
                    rows.append(BenchRow(method, T, 0, 0, f"error: {type(exc).__name__}: {exc}"))
    return rows


def scaling_ratios(rows: Sequence[BenchRow], method: str, t_small: int, t_large: int) -> tuple[float, float]:
    """(time ratio, memory ratio) between two lengths for one method."""
    by_t = {r.T: r for r in rows if r.method == method and r.status == "ok"}
    a, b = by_t[t_small], by_t[t_large]
    return b.wall_ns / a.wall_ns, b.peak_extra_bytes / max(1, a.peak_extra_bytes)


APPROX_HEADER = ("R", "mean_err", "std_err")


def sff_relative_error(grid_q: StructuralGrid, grid_k: StructuralGrid, params: FourierParams, R: int,
                       seed: int) -> float:
    """Relative Frobenius error of one SFF kernel estimate against the closed form."""
    exact = closed_form_pd(grid_q, grid_k, params)
    Z = sample_gaussian(subseed(seed, R), 2 * params.n_freq, R)
    est = positional_product(sff_features(grid_q, params, "Q", Z), sff_features(grid_k, params, "K", Z))
    return float(np.linalg.norm(est - exact) / np.linalg.norm(exact))


def approx_error(R_list: Sequence[int], seeds: int, grid: StructuralGrid, params: FourierParams,
                 base_seed: int = 0) -> list[tuple[int, float, float]]:
    """Mean and std over seeds of the SFF relative error, for each R."""
    if not R_list:
        raise ValueError("R list is empty")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    rows = []
    for R in R_list:
        if R < 1:
            raise ValueError(f"R must be >= 1, got {R}")
        errs = [sff_relative_error(grid, grid, params, R, base_seed + s) for s in range(seeds)]
        rows.append((int(R), float(np.mean(errs)), float(np.std(errs))))
    return rows
