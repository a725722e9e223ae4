"""Compare the compiled and pure-Python backends of the one-hidden-layer kernel.

    python benchmarks/bench_fused.py [--particles 64] [--points 4000] [--repeat 5]

Prints the fused middle section alone and a full ensemble likelihood+gradient
evaluation (both GEMMs included) for each backend.
"""

import argparse
import time

import numpy as np

from smcda import _core
from smcda.model import NetSpec, _mlp1_loglik_and_grad


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=64)
    ap.add_argument("--points", type=int, default=4000)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--inputs", type=int, default=784)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    J, M, H, C = args.particles, args.points, args.hidden, args.classes
    spec = NetSpec((args.inputs, H, C))
    thetas = 0.1 * rng.normal(size=(J, spec.n_params))
    X = rng.random((M, args.inputs))
    y = rng.integers(0, C, M).astype(np.int64)

    A = rng.normal(size=(M, J * H))
    b1, W2, b2 = rng.normal(size=(J, H)), rng.normal(size=(J, H, C)), rng.normal(size=(J, C))
    c = np.ones(M)

    backends = [("python", _core.python_mlp1_fused)]
    if _core.compiled_mlp1_fused is not None:
        backends.append(("compiled", _core.compiled_mlp1_fused))
    else:
        print("compiled backend not built; showing python only")

    print(f"J={J} M={M} net={spec.layer_sizes} default backend={_core.BACKEND}")
    print(f"{'backend':<10}{'fused (s)':>12}{'full eval (s)':>16}")
    results = {}
    for name, fused in backends:
        t_fused = best_of(lambda: fused(A.copy(), b1, W2, b2, y, c, 0, True), args.repeat)
        t_full = best_of(lambda: _mlp1_loglik_and_grad(spec, thetas, X, y, None, True, fused=fused),
                         args.repeat)
        results[name] = (t_fused, t_full)
        print(f"{name:<10}{t_fused:>12.4f}{t_full:>16.4f}")
    if len(results) == 2:
        (pf, pa), (cf, ca) = results["python"], results["compiled"]
        print(f"speedup: fused {pf / cf:.2f}x, full eval {pa / ca:.2f}x")


if __name__ == "__main__":
    main()
