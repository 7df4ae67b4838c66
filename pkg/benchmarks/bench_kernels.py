"""Micro-benchmark of the per-step wave kernels: compiled extension vs the
pure-numpy fallback, plus a bitwise parity check between them.

    python3 benchmarks/bench_kernels.py                 # kernel comparison
    python3 benchmarks/bench_kernels.py --driver        # full solver, current backend
    WAVEMAPLAB_KERNELS=fallback python3 benchmarks/bench_kernels.py --driver

The kernel mode chains each backend through the same normalized states so the
timed work includes the renormalize/project sequence exactly as the solver
runs it.  The driver mode times run_wavemap end to end (FFT laplacian and
derivative included) under whichever backend the package selected at import,
so running it twice with WAVEMAPLAB_KERNELS=core and =fallback compares the
production configurations.
"""

import argparse
import sys
import time

import numpy as np

from wavemaplab._kernels import _fallback, backend_name


def load_backends():
    backends = {"fallback": _fallback}
    try:
        from wavemaplab._kernels import _core

        backends["core"] = _core
    except ImportError:
        pass
    return backends


def make_fields(n, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = rng.standard_normal((n, 3))
    v -= np.sum(v * u, axis=1, keepdims=True) * u
    lap = rng.standard_normal((n, 3))
    du = rng.standard_normal((n, 3))
    dw = 1e-3 * rng.standard_normal(n)
    return u, v, lap, du, dw


def run_kernel(impl, fields, steps, dt=1e-4, eps=0.25, gamma0=2.8128):
    u, v, lap, du, dw = (f.copy() for f in fields)
    out_u = np.empty_like(u)
    out_v = np.empty_like(v)
    t0 = time.perf_counter()
    for _ in range(steps):
        impl.wave_step(u, v, lap, du, dw, dt, eps, gamma0, out_u, out_v)
        u, out_u = out_u, u
        v, out_v = out_v, v
    elapsed = time.perf_counter() - t0
    return elapsed, u, v


def bench_kernels(sizes, steps, repeats):
    backends = load_backends()
    if "core" not in backends:
        print("compiled extension not available; timing the fallback only")
    print(f"{'N':>6}  {'backend':>8}  {'steps/s':>12}  {'ns/point':>10}  speedup")
    for n in sizes:
        fields = make_fields(n)
        times = {}
        results = {}
        for name, impl in backends.items():
            best = min(run_kernel(impl, fields, steps)[0] for _ in range(repeats))
            times[name] = best
            results[name] = run_kernel(impl, fields, steps)[1:]
        base = times["fallback"]
        for name in sorted(times):
            per_step = times[name] / steps
            speedup = base / times[name]
            print(f"{n:>6}  {name:>8}  {steps / times[name]:>12.0f}  "
                  f"{1e9 * per_step / n:>10.1f}  {speedup:>6.2f}x")
        if len(results) == 2:
            du_max = np.max(np.abs(results["core"][0] - results["fallback"][0]))
            dv_max = np.max(np.abs(results["core"][1] - results["fallback"][1]))
            tag = "bitwise equal" if du_max == 0.0 and dv_max == 0.0 else \
                f"MISMATCH |du|={du_max:.3e} |dv|={dv_max:.3e}"
            print(f"{'':>6}  parity after {steps} chained steps: {tag}")
            if du_max != 0.0 or dv_max != 0.0:
                return 1
    return 0


def bench_driver(steps):
    from wavemaplab.families import geodesic_bump
    from wavemaplab.grid import GridSpec
    from wavemaplab.noise import (
        gaussian_mollifier,
        make_fractional_density,
        make_noise_table,
        mollify,
        rescale,
    )
    from wavemaplab.wavemap import WaveRunConfig, make_state, run_wavemap

    eps = 0.25
    grid = GridSpec(8.0, 512, 1e-3, steps)
    density = rescale(mollify(make_fractional_density(0.75), gaussian_mollifier()), eps)
    cfg = WaveRunConfig(eps=eps, gamma=1.0, grid=grid, density=density,
                        record_energy=False)
    table = make_noise_table(123, grid)
    u0 = geodesic_bump(grid, 1.2)
    state = make_state(u0, np.zeros_like(u0))
    t0 = time.perf_counter()
    run_wavemap(state, cfg, table=table, snapshot_stride=None)
    elapsed = time.perf_counter() - t0
    print(f"backend={backend_name}  N={grid.n_points}  steps={steps}  "
          f"wall={elapsed:.3f}s  steps/s={steps / elapsed:.0f}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 4096])
    parser.add_argument("--steps", type=int, default=2000,
                        help="kernel invocations per timing (driver: solver steps)")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repetitions, best taken")
    parser.add_argument("--driver", action="store_true",
                        help="time run_wavemap end to end with the selected backend")
    args = parser.parse_args(argv)
    if args.driver:
        return bench_driver(args.steps)
    return bench_kernels(args.sizes, args.steps, args.repeats)


if __name__ == "__main__":
    sys.exit(main())
