"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--steps T]

Part 1 times each kernel in-process with both implementations imported side
by side. Part 2 runs the same short experiment in two subprocesses, one
forced onto the fallback via CASEBANDIT_PURE_PYTHON=1, and compares wall
time and the chosen-case / reward / discovery sequences.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from casebandit import _kernels_py as pyk

try:
    from casebandit import _kernels as cyk
except ImportError:
    cyk = None

RUN_SNIPPET = """
import hashlib, time
from casebandit import BACKEND, bandit as bd, engine as en
from casebandit.env import CoverageEnv
env = CoverageEnv(d_q=2, rng_seed=0)
pol = bd.make_policy("NeuralLinLogUCB", env.context_dim, seed=0)
t0 = time.perf_counter()
tr = en.run(env, pol, bd.DiscoveryGate("Exploit", 0.1), T={steps}, seed=0)
dt = time.perf_counter() - t0
decisions = repr([(r.chosen_id, r.reward, r.discovery) for r in tr.records]).encode()
print(BACKEND, dt, hashlib.sha256(decisions).hexdigest()[:16])
"""


def kernel_cases(rng):
    d, n = 16, 32
    B = rng.normal(size=(d, d))
    inv = np.linalg.inv(np.eye(d) + B @ B.T)
    inv = 0.5 * (inv + inv.T)
    z = rng.normal(size=d)
    Z = rng.normal(size=(n, d))
    E = rng.normal(size=(2000, 4))
    q = rng.normal(size=4)
    Zl, r, th = rng.normal(size=(200, 8)), (rng.random(200) < 0.5).astype(float), rng.normal(size=8)
    return {
        "sherman_morrison d=16": lambda k: k.sherman_morrison(inv, z),
        "quad_forms 32x16": lambda k: k.quad_forms(inv, Z),
        "topk_inner 2000x4 k=32": lambda k: k.topk_inner(E, q, 32),
        "logistic_objective 200x8": lambda k: k.logistic_objective(th, Zl, r, 0.1),
    }


def bench_kernels(repeat):
    print(f"{'kernel':<28}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(pyk), number=repeat, repeat=5)) / repeat * 1e6
        if cyk is None:
            print(f"{name:<28}{t_py:>12.2f}{'n/a':>12}{'':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cyk), number=repeat, repeat=5)) / repeat * 1e6
        print(f"{name:<28}{t_py:>12.2f}{t_cy:>12.2f}{t_py / t_cy:>9.2f}x")


def bench_run(steps):
    results = {}
    for label, flag in (("cython", None), ("numpy", "1")):
        env = {k: v for k, v in os.environ.items() if k != "CASEBANDIT_PURE_PYTHON"}
        if flag:
            env["CASEBANDIT_PURE_PYTHON"] = flag
        out = subprocess.run([sys.executable, "-c", RUN_SNIPPET.format(steps=steps)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        results[label] = out
        print(f"full run T={steps}: backend={out[0]:<7} {float(out[1]):7.2f}s  decisions sha256 {out[2]}")
    if results["cython"][0] == "cython":
        same = results["cython"][2] == results["numpy"][2]
        speed = float(results["numpy"][1]) / float(results["cython"][1])
        # score columns can differ in the last bits (summation order), decisions should not
        print(f"end-to-end speedup {speed:.2f}x; identical decisions: {same}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    print()
    bench_run(args.steps)


if __name__ == "__main__":
    main()
