"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--steps 2000]

Both backends are run on identical inputs; the script also reports the
largest absolute difference between their results.
"""

import argparse
import time

import numpy as np

from lstmiss import _backend
from lstmiss.lstm import random_params
from lstmiss.plant import PhPlantConfig
from lstmiss.signals import MprsClass, gen_mprs, substream


def _best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, float)):
        return abs(float(a) - float(b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))) if np.size(a) else 0.0


def cases(steps):
    rng = substream(0, 7)
    p = random_params(5, 1, 1, 0.3, rng)
    W, U, b = p.packed()
    x0 = np.zeros(5)
    u = gen_mprs(MprsClass(1.0, steps), substream(0, 8))
    y = rng.standard_normal((steps, 1)) * 0.1
    cfg = PhPlantConfig.load()
    par = cfg.param_vector()
    s0 = cfg.equilibrium(0.0).as_array()
    q3 = cfg.q3_of(u[:, 0])
    return {
        "lstm_forward": lambda k: k.lstm_forward(W, U, b, x0, x0, u),
        "lstm_loss_grad": lambda k: k.lstm_loss_grad(W, U, b, p.C, p.by, x0, x0, u, y, 50, 0),
        "ph_solve x1000": lambda k: tuple(k.ph_solve(w, 5e-4, cfg.pK1, cfg.pK2)
                                          for w in np.linspace(-2e-3, 2e-3, 1000)),
        "plant_simulate": lambda k: k.plant_simulate(par, s0, q3, cfg.Ts, cfg.substeps),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args()
    pure = _backend.load("python")
    try:
        fast = _backend.load("cython")
    except ImportError:
        print("compiled extension not built; only the python backend is available")
        fast = None
    print(f"{'kernel':<16} {'python [s]':>11} {'cython [s]':>11} {'speed-up':>9} {'max |diff|':>11}")
    for name, fn in cases(args.steps).items():
        tp, rp = _best_of(lambda: fn(pure), args.repeat)
        if fast is None:
            print(f"{name:<16} {tp:11.4f} {'-':>11} {'-':>9} {'-':>11}")
            continue
        tc, rc = _best_of(lambda: fn(fast), args.repeat)
        print(f"{name:<16} {tp:11.4f} {tc:11.5f} {tp / tc:8.1f}x {_max_diff(rp, rc):11.2e}")


if __name__ == "__main__":
    main()
