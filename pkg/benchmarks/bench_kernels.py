"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 200,1000,3000] [--repeat 5]

Each kernel runs once untimed on both paths (JIT compile, cache warm-up), then
the best of ``--repeat`` runs is reported. Outputs are checked for agreement.
"""

import argparse
import timeit

import numpy as np

from adsel import _kernels as K


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench(n, f, k, q, repeat, rng):
    X = rng.standard_normal((n, f))
    Y = (rng.uniform(size=(n, k)) < 0.3).astype(np.float64)
    D = K.sq_distances(X, X, use_numba=False)
    idx = K.knn_indices(D, q, exclude_self=True, use_numba=False)

    cases = {
        "sq_distances": lambda nb: K.sq_distances(X, X, use_numba=nb),
        "knn_indices": lambda nb: K.knn_indices(D, q, exclude_self=True, use_numba=nb),
        "neighbor_counts": lambda nb: K.neighbor_counts(idx, Y, use_numba=nb),
    }
    rows = []
    for name, run in cases.items():
        a, b = run(True), run(False)
        if name == "sq_distances":
            assert np.allclose(a, b, rtol=1e-10, atol=1e-10), name
        else:
            assert np.array_equal(a, b), name
        t_nb = best_of(lambda: run(True), repeat)
        t_np = best_of(lambda: run(False), repeat)
        rows.append((name, n, t_nb, t_np))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200,1000,3000", help="comma-separated sample counts")
    ap.add_argument("--features", type=int, default=20)
    ap.add_argument("--labels", type=int, default=4)
    ap.add_argument("--q", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if K.njit is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16} {'n':>6} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, n_, t_nb, t_np in bench(n, args.features, args.labels, args.q, args.repeat, rng):
            print(f"{name:<16} {n_:>6} {1e3 * t_nb:>10.3f} {1e3 * t_np:>10.3f} {t_np / t_nb:>8.2f}")


if __name__ == "__main__":
    main()
