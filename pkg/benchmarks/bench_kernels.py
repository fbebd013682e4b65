"""Time the hot kernels with numba on and off.

Each backend runs in its own interpreter because the switch
(REACTORGP_DISABLE_NUMBA) is read at import time.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from reactorgp import USE_NUMBA, _rnn, surrogate
from reactorgp.reactor import ReactorParams, Recipe, default_controller, run_batch

repeat = int(sys.argv[1])
p = ReactorParams()
recipe = Recipe.sampled(358.0, 1, p)
m = surrogate.init(0)
rng = np.random.default_rng(0)
X = rng.normal(size=(32, m.H + m.F, 7))
Y = rng.normal(size=(32, m.F, 5))


def best(fn):
    fn()  # warm-up (and jit compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


out = {
    "numba": USE_NUMBA,
    "batch_sim": best(lambda: run_batch(recipe, default_controller(recipe), p)),
    "rnn_forward_b32": best(lambda: _rnn.forward(m.theta, X, m.F, m.dims)),
    "rnn_loss_grad_b32": best(lambda: _rnn.loss_and_grad(m.theta, X, Y, m.dims)),
}
print(json.dumps(out))
"""


def run(disabled, repeat):
    env = dict(os.environ, REACTORGP_DISABLE_NUMBA="1" if disabled else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    if not fast["numba"]:
        print("numba unavailable; both columns use the numpy path")
    print(f"{'kernel':22s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>9s}")
    for k in ("batch_sim", "rnn_forward_b32", "rnn_loss_grad_b32"):
        a, b = fast[k] * 1e3, slow[k] * 1e3
        print(f"{k:22s} {a:12.3f} {b:12.3f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
