"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one training step of the default model under each backend
(the step is run in a subprocess so the backend can be chosen at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ukanformer import kernels
from ukanformer.kan import BSplineGrid

STEP = """
import time, numpy as np
from ukanformer import functional as F
from ukanformer.model import ModelConfig, build
from ukanformer.nn import sgd_step
m = build(ModelConfig(decoder="{decoder}"))
rng = np.random.default_rng(0)
x = rng.standard_normal((8, 3, 32, 32)).astype(np.float32)
y = (rng.random((8, 32, 32)) > 0.5).astype(int)
def step():
    F.cross_entropy(m(x), y).backward()
    sgd_step(m.parameters(), 1e-3)
step()
t = time.perf_counter()
for _ in range({n}):
    step()
print((time.perf_counter() - t) / {n})
"""


def cases(rng):
    x = rng.standard_normal((8, 32, 32, 32)).astype(np.float32)
    w = rng.standard_normal((32, 3, 3)).astype(np.float32)
    k, s, p = 3, 1, 1
    cols = kernels.backends()["python"].im2col(x, k, s, p)
    knots = BSplineGrid().knots
    tok = rng.uniform(-1.2, 1.2, 8 * 64 * 64)
    return {
        "im2col 8x32x32x32 k3": lambda m: m.im2col(x, k, s, p),
        "col2im 8x32x32x32 k3": lambda m: m.col2im(cols, x.shape, k, s, p),
        "depthwise fwd 8x32x32x32": lambda m: m.depthwise_forward(x, w, 1),
        "depthwise bwd 8x32x32x32": lambda m: m.depthwise_backward(x, x, w, 1),
        "bspline basis 32768 pts": lambda m: m.bspline_basis(tok, knots, 3),
    }


def step_time(backend, decoder, n):
    env = dict(os.environ, UKF_KERNELS="python" if backend == "python" else "")
    out = subprocess.run([sys.executable, "-c", STEP.format(decoder=decoder, n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=3)
    args = ap.parse_args()
    backs = kernels.backends()
    if "compiled" not in backs:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t = {b: min(timeit.repeat(lambda: fn(backs[b]), number=1, repeat=args.repeat)) * 1e3
             for b in ("python", "compiled")}
        print(f"{name:<28}{t['python']:>10.2f}{t['compiled']:>13.2f}{t['python'] / t['compiled']:>8.1f}x")
    for decoder in ("gl_trans", "plain_conv"):
        t = {b: step_time(b, decoder, args.steps) * 1e3 for b in ("python", "compiled")}
        name = f"train step ({decoder})"
        print(f"{name:<28}{t['python']:>10.1f}{t['compiled']:>13.1f}{t['python'] / t['compiled']:>8.1f}x")


if __name__ == "__main__":
    main()
