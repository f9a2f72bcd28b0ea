"""Compiled vs numpy neighbor-mean kernels.

    python3 benchmarks/bench_aggregate.py [--nodes 20000] [--degree 6] [--dim 64]

Graphs are disjoint unions of small random networks, the shape the trainer
feeds the kernels. Reports the best of ``--repeat`` timings per backend and
checks both backends agree bit for bit.
"""

import argparse
import timeit

import numpy as np

from mbgnn import _aggregate_py

try:
    from mbgnn import _aggregate_ext
except ImportError:
    _aggregate_ext = None


def batch_graph(n_nodes, degree, seed=0, net_size=6):
    rng = np.random.default_rng(seed)
    nbrs = [[] for _ in range(n_nodes)]
    for start in range(0, n_nodes, net_size):
        size = min(net_size, n_nodes - start)
        for _ in range(size * degree // 2):
            if size < 2:
                break
            a, b = rng.choice(size, 2, replace=False) + start
            if b not in nbrs[a]:
                nbrs[a].append(int(b))
                nbrs[b].append(int(a))
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(x) for x in nbrs])
    indices = np.array([j for x in nbrs for j in sorted(x)], dtype=np.int64)
    return indptr, indices


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--degree", type=int, default=6)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    indptr, indices = batch_graph(args.nodes, args.degree)
    h = np.random.default_rng(1).standard_normal((args.nodes, args.dim))
    print(f"nodes={args.nodes} edges={indices.size // 2} dim={args.dim}")

    backends = {"numpy": _aggregate_py}
    if _aggregate_ext is not None:
        backends["cython"] = _aggregate_ext
    else:
        print("compiled extension not built; timing numpy only")

    results = {}
    for name, impl in backends.items():
        for fn in ("neighbor_mean", "neighbor_mean_transpose"):
            f = getattr(impl, fn)
            t = min(timeit.repeat(lambda: f(h, indptr, indices), number=10, repeat=args.repeat)) / 10
            results[name, fn] = (t, f(h, indptr, indices))
            print(f"{name:7s} {fn:24s} {t * 1e3:8.3f} ms")

    if "cython" in backends:
        for fn in ("neighbor_mean", "neighbor_mean_transpose"):
            speedup = results["numpy", fn][0] / results["cython", fn][0]
            same = results["numpy", fn][1].tobytes() == results["cython", fn][1].tobytes()
            print(f"{fn}: cython {speedup:.1f}x faster, bit-identical={same}")


if __name__ == "__main__":
    main()
