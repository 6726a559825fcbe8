"""Compare the compiled kernels with the NumPy/SciPy fallback.

    python benchmarks/bench_kernels.py [--nodes 1000 5000] [--repeat 5]

Reports the best-of-``repeat`` wall time per kernel and backend, the speedup,
and the wall time of a few full training epochs with each backend swapped in.
"""
import argparse
import timeit

import numpy as np

from dagad import kernels
from dagad.detector import TrainConfig, train
from dagad.graph import inject_anomalies, make_split, normalized_propagation_matrix, random_graph


def _inputs(n, heads=8, per_head=8, k=64):
    g = random_graph(n, k, 10.0 / n, seed=1)
    indptr, indices = g.closed_csr()
    s = normalized_propagation_matrix(g)
    rng = np.random.default_rng(0)
    z = rng.normal(size=(n, heads, per_head))
    return {
        "graph": g, "indptr": indptr, "indices": indices,
        "s": (s.indptr.astype(np.int64), s.indices.astype(np.int64), s.data),
        "x": rng.normal(size=(n, k)), "z": z,
        "s_self": rng.normal(size=(n, heads)), "s_nb": rng.normal(size=(n, heads)),
        "grad": rng.normal(size=z.shape),
    }


def _cases(d, impl):
    alpha, _ = kernels.gat_attention_forward(d["indptr"], d["indices"], d["s_self"], d["s_nb"],
                                             d["z"], 0.2, impl=impl)
    return {
        "spmm": lambda: kernels.spmm(*d["s"], d["x"], impl=impl),
        "gat_forward": lambda: kernels.gat_attention_forward(
            d["indptr"], d["indices"], d["s_self"], d["s_nb"], d["z"], 0.2, impl=impl),
        "gat_backward": lambda: kernels.gat_attention_backward(
            d["indptr"], d["indices"], d["s_self"], d["s_nb"], d["z"], alpha, d["grad"], 0.2,
            impl=impl),
    }


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(sizes, repeat):
    backends = kernels.backends()
    print(f"{'kernel':<14}{'nodes':>7}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for n in sizes:
        d = _inputs(n)
        times = {b: {k: _best(f, repeat) for k, f in _cases(d, impl).items()}
                 for b, impl in backends.items()}
        for k in times["python"]:
            row = "".join(f"{times[b][k] * 1e3:>10.2f}ms" for b in backends)
            speed = (f"{times['python'][k] / times['compiled'][k]:>9.1f}x"
                     if "compiled" in times else "")
            print(f"{k:<14}{n:>7}{row}{speed}")


def bench_training(n, epochs):
    g = random_graph(n, 50, 10.0 / n, seed=2)
    b = inject_anomalies(g, 5, max(1, n // 100), 0, seed=2)
    b = b.with_split(make_split(b.labels, 0.2, 0))
    saved = kernels._impl
    print(f"\n{epochs} training epochs on {n} nodes")
    try:
        for name, impl in kernels.backends().items():
            kernels._impl = impl
            for kind in ("gcn", "gat"):
                cfg = TrainConfig(encoder_kind=kind, epochs=epochs)
                t = _best(lambda: train(b, cfg), 1)
                print(f"  {name:<9}{kind}: {t:.2f}s")
    finally:
        kernels._impl = saved


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, nargs="+", default=[1000, 5000, 20000])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--epochs", type=int, default=20)
    args = p.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    bench_kernels(args.nodes, args.repeat)
    bench_training(args.nodes[0], args.epochs)


if __name__ == "__main__":
    main()
