"""Compare numba-compiled kernels with their plain-Python bodies.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Also times one training step end to end in a subprocess with
MNER_DISABLE_JIT=1 against the default build.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mner import kernels
from mner._jit import JIT_ENABLED, python_version


def lstm_case(T=6, n_in=150, H=100, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(T, n_in))
    w = [rng.uniform(-0.1, 0.1, size=s) for s in
         [(H, n_in), (H, H), (H, H), (H, n_in), (H, H), (H, n_in), (H, H), (H, H)]]
    b = [np.zeros(H) for _ in range(3)]
    return x, w, b


def time_it(fn, repeat):
    fn()  # warm-up / compile
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat * 1e6


def kernel_rows(repeat):
    x, w, b = lstm_case()
    rng = np.random.default_rng(1)
    emit = rng.normal(size=(6, 9))
    trans = rng.normal(size=(11, 11))
    y = rng.integers(9, size=6)

    def lstm(fwd, bwd):
        def run():
            hs, cs, ig, gg, og = fwd(x, *w, *b, True)
            bwd(np.ones_like(hs), x, hs, cs, ig, gg, og, *w, True)
        return run

    rows = []
    cases = [
        ("lstm fwd+bwd (T=6, 150->100)",
         lstm(kernels.lstm_forward, kernels.lstm_backward),
         lstm(python_version(kernels.lstm_forward), python_version(kernels.lstm_backward))),
        ("crf nll+grad (T=6, L=9)",
         lambda: kernels.crf_nll_grad(emit, trans, y),
         lambda: python_version(kernels.crf_nll_grad)(emit, trans, y)),
        ("viterbi (T=6, L=9)",
         lambda: kernels.crf_viterbi(emit, trans),
         lambda: python_version(kernels.crf_viterbi)(emit, trans)),
    ]
    for name, fast, slow in cases:
        t_fast = time_it(fast, repeat)
        t_slow = time_it(slow, max(repeat // 20, 5))
        rows.append((name, t_fast, t_slow))
    return rows


_STEP = """
import time
from mner.synth import SyntheticConfig, generate_synthetic_corpus
from mner.model import MnerModel, TrainConfig
from mner.train import batch_gradients
c = generate_synthetic_corpus(SyntheticConfig(n_sentences=300, d_v=64))
m = MnerModel.initialize(TrainConfig(d_v=64), c.embeddings, c.train)
f = [m.featurize(s) for s in c.train[:100]]
batch_gradients(m, f[:10])
t = time.perf_counter()
for i in range(0, 100, 10):
    batch_gradients(m, f[i:i + 10])
print((time.perf_counter() - t) / 100 * 1e3)
"""


def step_ms(disable):
    env = dict(os.environ, MNER_DISABLE_JIT="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", _STEP], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    if not JIT_ENABLED:
        print("note: MNER_DISABLE_JIT is set, both columns run un-jitted")
    print(f"{'kernel':34s} {'numba us':>10s} {'python us':>11s} {'speedup':>8s}")
    for name, fast, slow in kernel_rows(args.repeat):
        print(f"{name:34s} {fast:10.1f} {slow:11.1f} {slow / fast:7.1f}x")
    if not args.skip_e2e:
        jit, nojit = step_ms(False), step_ms(True)
        print(f"{'train step per sentence (ms)':34s} {jit:10.2f} {nojit:11.2f} {nojit / jit:7.1f}x")


if __name__ == "__main__":
    main()
