"""Compare the compiled kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at import
time by ``SEMTRIAL_DISABLE_NUMBA``. Compilation cost is excluded by a warm-up
call before timing.

Usage::

    python3 benchmarks/bench_backends.py [--repeat 3] [--B 100]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, sys, time
import numpy as np
from semtrial import averaging_run, fit_sem
from semtrial._backend import backend_name
from semtrial.simulate import SimScenario
from semtrial.streams import rng_for

repeat, B = int(sys.argv[1]), int(sys.argv[2])
cont = SimScenario("A", "alternative", 0.35).generate(rng_for(1, 0))
binary = SimScenario("C", "alternative", 1.0).generate(rng_for(1, 1))
jobs = {
    "sem fit, continuous n=250": lambda: fit_sem(cont),
    "sem fit, binary n=250": lambda: fit_sem(binary),
    f"bootstrap B={B}, continuous": lambda: averaging_run(cont, B, seed=3),
}
out = {"backend": backend_name()}
for name, job in jobs.items():
    job()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        job()
        best = min(best, time.perf_counter() - t)
    out[name] = best
print(json.dumps(out))
"""


def run_backend(disable, repeat, B):
    env = dict(os.environ)
    env.pop("SEMTRIAL_DISABLE_NUMBA", None)
    if disable:
        env["SEMTRIAL_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", _WORKER, str(repeat), str(B)], env=env,
                          stdout=subprocess.PIPE, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--B", type=int, default=100, help="bootstrap resamples (at least 100)")
    args = ap.parse_args(argv)
    fast = run_backend(False, args.repeat, args.B)
    slow = run_backend(True, args.repeat, args.B)
    print(f"{'workload':34s} {fast['backend']:>12s} {slow['backend']:>12s} {'speedup':>9s}")
    for name in fast:
        if name == "backend":
            continue
        print(f"{name:34s} {fast[name]:11.4f}s {slow[name]:11.4f}s {slow[name] / fast[name]:8.1f}x")


if __name__ == "__main__":
    main()
