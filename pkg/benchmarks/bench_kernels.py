"""Compare the compiled and pure-Python propagation kernels.

Run with ``python benchmarks/bench_kernels.py``.  Times one nominal
propagation and one exact gradient for a T = 4 us piecewise field.
"""

import argparse
import time

import numpy as np

from nvreg import _pykernels
from nvreg.dynamics import model_for
from nvreg.hamiltonian import NOMINAL, SystemParams

try:
    from nvreg import _kernels
except ImportError:
    _kernels = None


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(n_slices=1000, grad_slices=100, T=4.0, repeat=3, seed=0):
    model = model_for(SystemParams())
    H0, Hp, Hs = model.operators(NOMINAL)
    gamma = model.gamma
    rho0 = model.initial_state()
    P = model.target_projector()
    rng = np.random.default_rng(seed)

    rows = []
    for label, n in (("evolve", n_slices), ("gradient", grad_slices)):
        up = rng.uniform(0, np.pi, n)
        us = rng.uniform(0, np.pi, n)
        dt = T / n
        nsub = model.substeps(dt, up, us)
        results = {}
        for name, mod in (("cython", _kernels), ("python", _pykernels)):
            if mod is None:
                continue
            if label == "evolve":
                fn = lambda m=mod: m.evolve(rho0, H0, Hp, Hs, gamma, up, us, dt, nsub)
            else:
                fn = lambda m=mod: m.fidelity_gradient(rho0, P, H0, Hp, Hs, gamma, up, us, dt, nsub)[0]
            results[name] = _best_of(fn, repeat if name == "cython" else 1)
        rows.append((label, n, nsub, results))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    for label, n, nsub, res in run(repeat=args.repeat):
        line = f"{label:9s} N={n:5d} nsub={nsub:3d}"
        for name, (t, _) in res.items():
            line += f"  {name}={t * 1e3:9.2f} ms"
        if len(res) == 2:
            line += f"  speedup={res['python'][0] / res['cython'][0]:6.1f}x"
            a, b = res["cython"][1], res["python"][1]
            line += f"  max|diff|={np.max(np.abs(np.asarray(a) - np.asarray(b))):.1e}"
        print(line)


if __name__ == "__main__":
    main()
