"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--engine-vehicles 100]

Prints one row per kernel (best-of-N seconds per call for each backend and the
speed-up), then the same for a short end-to-end engine run.
"""
import argparse
import time

import numpy as np

from cv2x_emu import _pykernels, kernels
from cv2x_emu.channel import ChannelModelConfig
from cv2x_emu.engine import Engine
from cv2x_emu.grid import SimParams
from cv2x_emu.mobility import ScenarioSpec, generate_linear_scenario


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    n = 200_000
    a = rng.integers(0, 500, n)
    b = rng.integers(0, 500, n)
    c = rng.integers(0, 10**6, n)
    # one receiver's view of a sensing second: ~40 transmissions per subframe over 1000 subframes
    m = 40_000
    group = np.sort(rng.integers(0, 1000, m))
    starts = rng.integers(0, 4, m)
    rx = 10 ** (rng.uniform(-120, -50, m) / 10)
    win = rng.integers(0, 100, m)
    lens = np.full(m, 2)
    rsrp = rng.uniform(-120, -50, m)
    return {
        "keyed_uniform (200k)": lambda k: k.keyed_uniform(1, 2, a, b, c),
        "keyed_normal (200k)": lambda k: k.keyed_normal(1, 1, a, b, c),
        "sinr_grouped (40k links)": lambda k: k.sinr_grouped(group, rx, starts, 2, 5, 1000, 1e-13, False),
        "blocking_rsrp (40k entries)": lambda k: k.blocking_rsrp(win, starts, lens, rsrp, 100, 5, 2),
    }


def engine_run(n, duration_ms):
    p = SimParams(sim_duration_ms=duration_ms)
    tracks = generate_linear_scenario(ScenarioSpec(n_vehicles=n))
    return lambda: Engine(p, ChannelModelConfig(), tracks).run()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--engine-vehicles", type=int, default=100)
    ap.add_argument("--engine-duration-ms", type=int, default=10_000)
    args = ap.parse_args()
    if "cython" not in kernels.available_backends():
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    from cv2x_emu import _ckernels

    print(f"{'case':32s} {'python s':>10s} {'cython s':>10s} {'speed-up':>9s}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        tp = best_of(lambda: fn(_pykernels), args.repeat)
        tc = best_of(lambda: fn(_ckernels), args.repeat)
        print(f"{name:32s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x")

    run = engine_run(args.engine_vehicles, args.engine_duration_ms)
    walls = {}
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        walls[backend] = best_of(run, max(1, args.repeat // 2))
    label = f"engine {args.engine_vehicles} veh {args.engine_duration_ms / 1000:g} s"
    print(f"{label:32s} {walls['python']:10.3f} {walls['cython']:10.3f} "
          f"{walls['python'] / walls['cython']:8.1f}x")


if __name__ == "__main__":
    main()
