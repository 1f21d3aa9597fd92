"""Time one small vacuum evolution with the numba kernels and with the pure-numpy fallback.

Each path runs in its own interpreter because the fallback is selected at
import time by NULLHORIZON_DISABLE_JIT. The JIT timing excludes compilation
(a warm-up run happens first).

    python3 benchmarks/bench_jit.py [--nU 64] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, math, sys, time
import numpy as np
from nullhorizon import _accel
from nullhorizon.core import ModelParams
from nullhorizon.evolution import evolve, StepControls
nU, repeat = int(sys.argv[1]), int(sys.argv[2])
P = ModelParams(M=1, D1=0, D2=0, D3=0, v0=10, U0=4 * math.exp(-11.5 / 4), r_min=0.2, r0=0.4)
C = StepControls(nU=nU, U_spacing="uniform", base_dv=2.0 / nU, v_max=12.0,
                 max_dw=1e9, eta=1e9, max_dsigma=1e9, eta_U=0.0, max_dsigma_U=0.0)
evolve(P, StepControls(nU=4, U_spacing="uniform", base_dv=0.5, v_max=12.0))  # warm-up / compile
times = []
for _ in range(repeat):
    t = time.perf_counter()
    S = evolve(P, C)
    times.append(time.perf_counter() - t)
w = np.concatenate([c.x[:, 0] for c in S.columns])
print(json.dumps({"jit": _accel.HAVE_NUMBA, "best_s": min(times), "cells": S.n_cells(),
                  "checksum": float(np.sum(w))}))
"""


def run(disable: bool, nU: int, repeat: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["NULLHORIZON_DISABLE_JIT"] = "1"
    else:
        env.pop("NULLHORIZON_DISABLE_JIT", None)
    out = subprocess.run([sys.executable, "-c", CHILD, str(nU), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nU", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    jit = run(False, a.nU, a.repeat)
    py = run(True, a.nU, a.repeat)
    print(f"cells per run      : {jit['cells']}")
    print(f"numba kernels      : {jit['best_s'] * 1e3:9.2f} ms  (jit active: {jit['jit']})")
    print(f"numpy fallback     : {py['best_s'] * 1e3:9.2f} ms")
    print(f"speed-up           : {py['best_s'] / jit['best_s']:9.1f}x")
    rel = abs(jit["checksum"] - py["checksum"]) / abs(py["checksum"])
    print(f"checksum rel. diff : {rel:.2e}")


if __name__ == "__main__":
    main()
