"""Time the hot kernels with numba and with the numpy fallback.

Each path runs in its own interpreter because the switch is read at import:

    python benchmarks/bench_kernels.py            # both paths, side by side
    python benchmarks/bench_kernels.py --child    # current environment only
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat=5):
    fn()  # warm-up (includes JIT compilation on the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def child(n=100_000):
    from kingstab import _kernels
    from kingstab.functionals import BoxGrid
    from kingstab.sim import sample_steady_state
    from kingstab.steady_state import build_king

    model = build_king()
    ens = sample_steady_state(model, n, seed=1)
    tables = model.tables
    rng = np.random.default_rng(0)
    E = rng.uniform(model.U_center, model.E0, n)
    L = rng.uniform(0.0, 0.5 * model.L_max, n)
    order, _ = _kernels.shell_mass(ens.r, ens.weight)
    rs = ens.r[order]
    cm = np.cumsum(ens.weight[order])
    grid = BoxGrid.for_model(model)
    r, w = ens.r.copy(), ens.w.copy()
    psi = rng.uniform(0.0, 2.0, n)
    cases = {
        "depth_density": lambda: _kernels.depth_density(psi),
        "profile_eval": lambda: _kernels.profile_eval(ens.r, tables),
        "orbit_roots": lambda: _kernels.orbit_roots(E[:10_000], L[:10_000], tables),
        "drift": lambda: _kernels.drift(r, w, ens.L, 1e-3),
        "shell_mass": lambda: _kernels.shell_mass(ens.r, ens.weight),
        "field_diff_norm": lambda: _kernels.field_diff_norm(rs, cm, tables),
        "cic_deposit": lambda: grid.deposit(ens),
    }
    out = {name: _best(fn) for name, fn in cases.items()}
    json.dump(dict(numba=_kernels.USE_NUMBA, n=n, seconds=out), sys.stdout)


def main():
    results = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, KINGSTAB_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--child"], env=env, check=True,
                              capture_output=True, text=True)
        results[label] = json.loads(proc.stdout)
    print(f"{'kernel':18s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speed-up':>9s}")
    for name, t_nb in results["numba"]["seconds"].items():
        t_np = results["numpy"]["seconds"][name]
        print(f"{name:18s} {1e3 * t_nb:12.3f} {1e3 * t_np:12.3f} {t_np / t_nb:9.1f}")


if __name__ == "__main__":
    if "--child" in sys.argv:
        child()
    else:
        main()
