"""Exact relative-position attention versus F-StrIPE's linear form.

Both start from the same structural kernel. The exact version materializes
a T x T logit matrix per head; F-StrIPE folds the positional features into
the queries and keys and runs kernelized attention with a running prefix
sum, so doubling T roughly doubles the cost instead of quadrupling it.

    python3 demos/02_linear_attention_scaling.py
"""
import numpy as np

from fstripe import bench
from fstripe.attention import (AttentionConfig, AttentionInputs, assemble_pe_qk, exact_rpe_logits,
                               fstripe_attention, init_attention_params, positional_features)
from fstripe.features import closed_form_pd

T, D = 48, 4
g = bench.bench_grid(T)  # time plus a label that changes every 8 steps
rng = np.random.default_rng(0)
Q, K, V = (rng.standard_normal((T, D)) for _ in range(3))
config = AttentionConfig(head_dim=D, causal=True, pe_kind="rff", n_freq=4)
params = init_attention_params(config, levels=2)

# the logits F-StrIPE works with are exactly the relative-position logits
fq = [positional_features(g, params[0][d], "Q", "rff", 0, 0, d) for d in range(D)]
fk = [positional_features(g, params[0][d], "K", "rff", 0, 0, d) for d in range(D)]
q_hat, k_hat = assemble_pe_qk(Q, K, fq, fk)
exact = exact_rpe_logits(Q, K, [closed_form_pd(g, g, params[0][d]) for d in range(D)])
print(f"Q̂ K̂ᵀ vs exact RPE logits: max |difference| = {np.max(np.abs(q_hat @ k_hat.T - exact)):.1e}")
print(f"Q̂ is {q_hat.shape[0]} x {q_hat.shape[1]}: D * 2N_f columns, independent of T.")

out = fstripe_attention(AttentionInputs(Q, K, V, g, g), params, config)
print(f"Causal F-StrIPE output: {out.shape}, first row equals v_0: {np.allclose(out[0], V[0])}")

print("\nSingle-threaded scaling, median of 3 runs (the acceptance suite uses T = 512 and 4096):")
rows = bench.run_bench(["fstripe", "exact"], [256, 1024], reps=3)
print(f"  {'method':8s} {'T':>5s} {'ms':>9s} {'peak KiB':>10s}")
for r in rows:
    print(f"  {r.method:8s} {r.T:5d} {r.wall_ns / 1e6:9.2f} {r.peak_extra_bytes / 1024:10.0f}")
for method in ("fstripe", "exact"):
    t, m = bench.scaling_ratios(rows, method, 256, 1024)
    print(f"  {method}: 4x longer input -> {t:.1f}x time, {m:.1f}x memory")
