"""Compare the compiled and numpy kernel backends.

Reports per-call times of each kernel at training-sized shapes, and the
wall time of a few training steps of a 64/128 translation model under each
backend (run in a subprocess so the backend is chosen at import).

    python benchmarks/bench_kernels.py [--repeat 200] [--steps 20]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from nmtfusion.numerics import kernels

STEP_SCRIPT = """
import time, numpy as np
from nmtfusion.numerics import kernels
from nmtfusion.corpus import ParallelDataset
from nmtfusion.fusion import FusedTranslator, FusionConfig
from nmtfusion.seq2seq import TranslationModel
from nmtfusion.training import TrainConfig, TranslationObjective, fit
rng = np.random.default_rng(0)
V, n = 60, 32 * {steps}
src = [rng.integers(4, V, size=int(rng.integers(5, 15))) for _ in range(n)]
tgt = [rng.integers(4, V, size=int(rng.integers(5, 15))) for _ in range(n)]
fused = FusedTranslator(TranslationModel(V, V, 64, 128, 2, rng=rng), FusionConfig("baseline"))
cfg = TrainConfig(max_epochs=1, average_last=1, dev_bleu=False)
t0 = time.perf_counter()
fit(TranslationObjective(fused, ParallelDataset(src, tgt)), cfg, seed=1, max_steps={steps})
print(kernels.BACKEND, (time.perf_counter() - t0) / {steps})
"""


def kernel_args(B=32, H=128, V=2000, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(B, 4 * H)), rng.normal(size=(B, H)), rng.normal(size=(B, H)),
            np.ones(B), rng.normal(size=(B, V)), rng)


def bench_kernels(repeat):
    gates, c, h, mask, x, rng = kernel_args()
    dh, dc = rng.normal(size=h.shape), rng.normal(size=c.shape)
    rows = []
    for name in ("numpy", "cython"):
        try:
            k = kernels.get_backend(name)
        except RuntimeError:
            print(f"{name}: not built, skipped")
            continue
        _, _, acts, tc = k.lstm_forward(gates, c, h, mask)
        out = k.log_softmax_forward(x)
        g = rng.normal(size=x.shape)
        calls = {
            "lstm_forward B=32 H=128": lambda: k.lstm_forward(gates, c, h, mask),
            "lstm_backward B=32 H=128": lambda: k.lstm_backward(dh, dc, acts, tc, c, mask),
            "log_softmax_forward 32x2000": lambda: k.log_softmax_forward(x),
            "log_softmax_backward 32x2000": lambda: k.log_softmax_backward(g, out),
        }
        for label, fn in calls.items():
            t = min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat
            rows.append((label, name, t))
    return rows


def bench_training(steps):
    times = {}
    for name, env in (("numpy", {"NMTFUSION_PURE_PYTHON": "1"}), ("default", {})):
        res = subprocess.run(
            [sys.executable, "-c", STEP_SCRIPT.format(steps=steps)],
            env={**os.environ, **env}, capture_output=True, text=True, check=True,
        )
        backend, t = res.stdout.split()
        times[backend] = float(t)
    return times


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args()
    rows = bench_kernels(args.repeat)
    print(f"{'kernel':32s} {'backend':8s} {'usec/call':>10s}")
    for label, name, t in rows:
        print(f"{label:32s} {name:8s} {t * 1e6:10.1f}")
    by = {}
    for label, name, t in rows:
        by.setdefault(label, {})[name] = t
    for label, d in by.items():
        if len(d) == 2:
            print(f"speedup {label}: {d['numpy'] / d['cython']:.2f}x")
    steps = bench_training(args.steps)
    for backend, t in steps.items():
        print(f"training step (64/128 model, batch 32) {backend}: {t * 1e3:.1f} ms")
    if len(steps) == 2:
        print(f"training speedup: {steps['numpy'] / steps['cython']:.2f}x")


if __name__ == "__main__":
    main()
