"""Compiled kernels versus the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel
is timed on a representative workload (best of N) and the outputs of the
two backends are compared.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from requant import _fallback
from requant.moments import build_context
from requant.scheme import max_scheme

try:
    from requant import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        t.append(time.perf_counter() - t0)
    return min(t), out


def workloads():
    rng = np.random.default_rng(1)
    z = rng.uniform(-6, 6, 20000) + 1j * rng.uniform(-6, 6, 20000)
    yield "wofz (2e4 points)", "wofz", (z,)

    s = max_scheme(4)
    ctx = build_context(s, 0.3)
    xi = np.linspace(1e-3, 4.0, 21 * 32)
    ahat = np.append(ctx.a_hat, np.inf)
    wthr = np.ascontiguousarray(np.append(s.thresholds, np.inf))
    cols = np.array([0.0, 0.7, 1.9])
    yield ("integrand_sums (M=4, N=2, 672 nodes)", "integrand_sums",
           (xi, ahat, ctx.phi, cols, ctx.A_f * s.y, 1 / np.sqrt(2 * ctx.Q_I_sq), ctx.alpha,
            1 - np.sum(ctx.phi ** 2) - ctx.alpha ** 2))

    X = rng.standard_normal((1000, 200))
    k = np.arange(-99, 101)
    phi = np.sinc(0.3 - k)
    yield ("quantize_codes (1000 x 200)", "quantize_codes",
           (X, phi, phi, np.asarray(s.thresholds, float), s.y, 1.0))

    L, T = 8, 64
    u = rng.standard_normal(200000)
    coefs = rng.standard_normal((L, T))
    m = np.arange(150000)
    top = (T + m * 3 // L).astype(np.int64)
    phase = (m * 3 % L).astype(np.int64)
    yield "gather_dot (1.5e5 outputs, 64 taps)", "gather_dot", (u, top, phase, coefs)


END_TO_END = {
    "moment_matrix M=4 lambda=0.05": (
        "from requant.scheme import max_scheme; from requant.moments import build_context, moment_matrix;"
        "moment_matrix(build_context(max_scheme(4), 0.05))"),
    "simulate_joint M=4 1e5 trials": (
        "from requant.scheme import max_scheme; from requant.mc import SimulationConfig, simulate_joint;"
        "simulate_joint(SimulationConfig(max_scheme(4), 0.3))"),
    "run_src M=2 L=8 1e6 outputs": (
        "from requant.scheme import max_scheme; from requant.rateconv import SrcConfig, run_src;"
        "run_src(SrcConfig(L=8, D=1, scheme=max_scheme(2)))"),
}


def end_to_end(backend, stmt):
    """Wall time of ``stmt`` in a fresh interpreter with the given backend."""
    code = f"import time; t = time.perf_counter(); {stmt}; print(time.perf_counter() - t)"
    env = dict(os.environ, REQUANT_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.split()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--no-end-to-end", action="store_true", help="skip the whole-operation timings")
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':40s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} {'rel diff':>10s}")
    for label, name, inputs in workloads():
        tp, op = best_of(lambda: getattr(_fallback, name)(*inputs), args.repeat)
        if _kernels is None:
            print(f"{label:40s} {tp:11.4f} {'-':>13s} {'-':>8s} {'-':>10s}")
            continue
        tc, oc = best_of(lambda: getattr(_kernels, name)(*inputs), args.repeat)
        op = op if isinstance(op, tuple) else (op,)
        oc = oc if isinstance(oc, tuple) else (oc,)
        # relative to the output scale; |w(z)| spans many decades below the real axis
        diff = max(float(np.max(np.abs(np.asarray(a, complex) - np.asarray(b, complex))
                                / np.maximum(np.abs(np.asarray(a, complex)), 1.0)))
                   for a, b in zip(op, oc))
        print(f"{label:40s} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f} {diff:10.2e}")
    if args.no_end_to_end or _kernels is None:
        return
    print()
    print(f"{'operation':40s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s}")
    for label, stmt in END_TO_END.items():
        tp = end_to_end("python", stmt)
        tc = end_to_end("compiled", stmt)
        print(f"{label:40s} {tp:11.3f} {tc:13.3f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
