"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--steps 1000000] [--python-steps 20000]

The Python geodesic run is shorter by default and its time is also shown
scaled to ``--steps`` so the two columns are comparable.
"""

import argparse
import math
import time

import numpy as np

from affgeom import _kernels
from affgeom.atlas import builtin_manifold
from affgeom.connection import levi_civita
from affgeom.euler import euler_integral
from affgeom.transport import DEFAULT_MAX_STEP, geodesic_integrate, holonomy, latitude_loop


def timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench(name, steps):
    torus = builtin_manifold("flat_torus_2d")
    sphere = builtin_manifold("round_sphere_2d")
    lc = levi_civita(sphere.metric)
    horizon = steps * DEFAULT_MAX_STEP
    data = np.random.default_rng(0).normal(size=1_000_000)
    with _kernels.use_backend(name):
        return {
            "geodesic": timed(lambda: geodesic_integrate(torus.affine, ("U", [1.0, 2.0]), [0.6, 0.8], horizon)),
            "sphere geodesic": timed(lambda: geodesic_integrate(lc, ("S", [math.pi / 2, 0.0]), [0.0, 1.0], 20.0)),
            "latitude holonomy": timed(lambda: holonomy(lc, latitude_loop(math.pi / 3))),
            "gauss-bonnet 200x400": timed(lambda: euler_integral(sphere)),
            "pairwise sum 1e6": timed(lambda: _kernels.backend().pairwise_sum(data)),
        }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=1_000_000, help="flat-torus geodesic steps (compiled)")
    p.add_argument("--python-steps", type=int, default=20_000, help="flat-torus geodesic steps (python)")
    args = p.parse_args()
    rows = {"python": bench("python", args.python_steps)}
    rows["python"]["geodesic"] *= args.steps / args.python_steps
    if "compiled" in _kernels.available():
        rows["compiled"] = bench("compiled", args.steps)
    else:
        print("compiled kernels not available; showing the python backend only")
    names = list(rows)
    print(f"{'kernel':<24}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for key in rows["python"]:
        line = f"{key:<24}" + "".join(f"{rows[n][key]:>11.3f}s" for n in names)
        if len(names) == 2:
            line += f"{rows['python'][key] / rows['compiled'][key]:>11.1f}x"
        print(line)
    print(f"(geodesic: {args.steps:.0e} steps; python time extrapolated from {args.python_steps} steps)")


if __name__ == "__main__":
    main()
