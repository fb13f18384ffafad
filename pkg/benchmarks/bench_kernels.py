"""Compiled vs numpy kernel timings.

    python benchmarks/bench_kernels.py [--repeat 50] [--dtype float32]

Reports the best-of-N wall time per kernel for each available backend, then
one forward+backward+Adam step of the reduced synthetic-task model.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from llama_affinity import kernels
from llama_affinity import tensor as T
from llama_affinity.data import make_batches, synth_generate
from llama_affinity.model import ModelConfig, forward, init_params
from llama_affinity.training import AdamState, TrainConfig, adam_step, sparse_categorical_cross_entropy


def kernel_cases(dtype):
    rng = np.random.default_rng(0)
    # attention-score rows: batch 32, 4 heads, 122x122
    scores = rng.normal(size=(32 * 4 * 122, 122)).astype(dtype)
    hidden = rng.normal(size=(32 * 122, 64)).astype(dtype)
    gain = np.ones(64, dtype=dtype)
    heads = rng.normal(size=(32 * 4, 122, 16)).astype(dtype)
    ang = np.outer(np.arange(122), 1e5 ** (-np.arange(8) / 8))
    cos, sin = np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)
    y = kernels.softmax_forward(scores)
    _, inv = kernels.rms_norm_forward(hidden, gain, 1e-6)
    return {
        "softmax_forward": lambda k: k.softmax_forward(scores),
        "softmax_backward": lambda k: k.softmax_backward(y, scores),
        "log_softmax_forward": lambda k: k.log_softmax_forward(scores),
        "rms_norm_forward": lambda k: k.rms_norm_forward(hidden, gain, 1e-6),
        "rms_norm_backward": lambda k: k.rms_norm_backward(hidden, gain, inv, hidden),
        "silu_forward": lambda k: k.silu_forward(hidden),
        "silu_backward": lambda k: k.silu_backward(hidden, hidden),
        "rope_forward": lambda k: k.rope_forward(heads, cos, sin),
    }


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def train_step_time(repeat):
    mc = ModelConfig(num_layers=2, hidden_dim=64, num_query_heads=4, num_key_value_heads=4, intermediate_dim=32)
    tc = TrainConfig()
    ds = synth_generate(32, "WGQG", 120, 0.0, T.make_rng(0))
    batch = next(iter(make_batches(ds, 32)))
    params = init_params(mc, T.make_rng(0))
    state = AdamState.zeros(params)
    names = {id(p): k for k, p in params.items()}
    drop = T.make_rng(1)

    def step():
        out = forward(params, batch.input_ids, batch.attention_mask, mc, rng=drop, training=True)
        loss = sparse_categorical_cross_entropy(out.logits, batch.labels)
        grads = {names[id(p)]: g for p, g in T.backward(loss).items() if id(p) in names}
        adam_step(params, grads, state, tc)

    return best(step, repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = ap.parse_args(argv)

    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the numpy backend only")
    cases = kernel_cases(np.dtype(args.dtype))

    print(f"{'kernel':<22}" + "".join(f"{b + ' (ms)':>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = [best(lambda: fn(kernels.get_backend(b)), args.repeat) * 1e3 for b in backends]
        speed = f"{times[0] / times[-1]:>9.2f}x" if len(times) > 1 else ""
        print(f"{name:<22}" + "".join(f"{t:>14.3f}" for t in times) + speed)

    previous = kernels.BACKEND
    step_times = []
    for b in backends:
        kernels.set_backend(b)
        step_times.append(train_step_time(max(3, args.repeat // 10)) * 1e3)
    kernels.set_backend(previous)
    speed = f"{step_times[0] / step_times[-1]:>9.2f}x" if len(step_times) > 1 else ""
    print(f"{'train step (B=32)':<22}" + "".join(f"{t:>14.1f}" for t in step_times) + speed)


if __name__ == "__main__":
    main()
