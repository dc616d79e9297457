"""Compare the numpy and numba kernel backends.

Times each hot kernel on training-sized arrays, then one full
optimization step of a small model, under both backends. Run as

    python benchmarks/bench_kernels.py [--repeats N] [--rows R] [--cols C]

Numba timings exclude JIT compilation (one warmup call per kernel).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ctxattn import data, kernels, training
from ctxattn.model import Model, ModelConfig
from ctxattn.tensor import Rng


def _inputs(rows: int, cols: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, cols))
    g = rng.standard_normal((rows, cols))
    gain = rng.standard_normal(cols)
    bias = rng.standard_normal(cols)
    labels = rng.integers(0, cols, size=rows)
    idx = rng.integers(0, rows, size=rows)
    probs = np.abs(x) + 1e-3
    probs /= probs.sum(axis=1, keepdims=True)
    return {
        "x": x, "g": g, "gain": gain, "bias": bias,
        "labels": labels, "idx": idx, "probs": probs,
    }


def _calls(ins):
    """Kernel name -> zero-argument callable, built fresh per backend."""
    x, g = ins["x"], ins["g"]
    state = {
        "m": np.zeros_like(x), "v": np.zeros_like(x), "p": ins["x"].copy(),
    }
    ln = kernels.layernorm_fwd(x, ins["gain"], ins["bias"], 1e-12)
    return {
        "softmax_fwd": lambda: kernels.softmax_fwd(x),
        "softmax_bwd": lambda: kernels.softmax_bwd(ins["probs"], g),
        "tanh_fwd": lambda: kernels.tanh_fwd(x),
        "tanh_bwd": lambda: kernels.tanh_bwd(np.tanh(x), g),
        "sigmoid_fwd": lambda: kernels.sigmoid_fwd(x),
        "sigmoid_bwd": lambda: kernels.sigmoid_bwd(ins["probs"], g),
        "gelu_fwd": lambda: kernels.gelu_fwd(x),
        "gelu_bwd": lambda: kernels.gelu_bwd(x, g),
        "layernorm_fwd": lambda: kernels.layernorm_fwd(
            x, ins["gain"], ins["bias"], 1e-12
        ),
        "layernorm_bwd": lambda: kernels.layernorm_bwd(
            g, ln[1], ln[2], ins["gain"]
        ),
        "ce_fwd": lambda: kernels.ce_fwd(x, ins["labels"]),
        "adam_update": lambda: kernels.adam_update(
            state["p"], g, state["m"], state["v"],
            1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001,
        ),
        "scatter_add_rows": lambda: kernels.scatter_add_rows(
            np.zeros_like(x), ins["idx"], g
        ),
    }


def _time(fn, repeats: int) -> float:
    fn()  # warmup; compiles numba dispatchers on first use
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def _train_step_timer(seed: int = 9):
    spec = data.task_spec("tabsa")
    examples = data.generate_synthetic(spec, 24, Rng(seed).child("gen"))
    vocab = data.Vocab.build((e.text for e in examples))
    cvocab = data.task_context_vocab(spec)
    instances = data.expand_examples(examples, spec, vocab, 32, False)[:16]
    config = ModelConfig(
        variant="qacg", num_layers=2, num_heads=2, hidden=32, ffn_dim=64,
        vocab_size=len(vocab), max_len=32, num_classes=3,
        num_contexts=cvocab.size, dropout=0.0, seed=seed,
    )
    model = Model.create(config, cvocab, vocab)
    opt = training.Adam(model.params, 1e-3)

    def step():
        loss = training.batch_loss(model, instances, mode="train", rng=None)
        loss.backward()
        opt.step()
        opt.zero_grad()

    return step


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--rows", type=int, default=512)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--step-repeats", type=int, default=3)
    args = ap.parse_args()

    initial = kernels.get_backend()
    backends = ["numpy"]
    if kernels.HAVE_NUMBA:
        backends.append("numba")
    else:
        print("numba not importable; timing the numpy backend only\n")

    ins = _inputs(args.rows, args.cols)
    results: dict[str, dict[str, float]] = {}
    for backend in backends:
        kernels.set_backend(backend)
        for name, fn in _calls(ins).items():
            results.setdefault(name, {})[backend] = _time(fn, args.repeats)

    width = max(len(n) for n in results) + 2
    header = f"{'kernel':<{width}}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(f"array kernels on ({args.rows}, {args.cols}) float64, "
          f"mean of {args.repeats} runs")
    print(header)
    print("-" * len(header))
    for name in sorted(results):
        row = f"{name:<{width}}"
        for b in backends:
            row += f"{results[name][b]:>12.4f}"
        if len(backends) == 2:
            ratio = results[name]["numpy"] / max(results[name]["numba"], 1e-12)
            row += f"{ratio:>9.2f}x"
        print(row)

    print(f"\nfull training step (16 instances, 2x2x32 qacg model), "
          f"mean of {args.step_repeats} runs")
    for backend in backends:
        kernels.set_backend(backend)
        step = _train_step_timer()
        ms = _time(step, args.step_repeats)
        print(f"  {backend:<8} {ms:>10.1f} ms")

    kernels.set_backend(initial)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
