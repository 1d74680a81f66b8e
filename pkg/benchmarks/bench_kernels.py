"""Compare the compiled kernels against the NumPy fallback.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``
"""
import argparse
import timeit

import numpy as np

from ocschur import _kernels, mesh_fem


def cases(rng):
    mesh = mesh_fem.build_unit_square_mesh(256)
    conn = np.asarray(mesh.elements, dtype=np.int64)
    ke = rng.standard_normal((4, 4))
    yield "element_triplets (n=256)", lambda k: k.element_triplets(conn, ke)

    n, m = 20000, 60
    basis = np.ascontiguousarray(np.linalg.qr(rng.standard_normal((n, m)))[0].T)
    w0 = rng.standard_normal(n)
    h = np.zeros(m)
    yield f"mgs_orthogonalize ({m} x {n})", lambda k: k.mgs_orthogonalize(basis, m, w0.copy(), h)

    idx = rng.integers(0, 50000, 400000)
    vals = rng.standard_normal(idx.size)
    yield "scatter_add (400k into 50k)", lambda k: k.scatter_add(np.zeros(50000), idx, vals)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled kernels not built; only the fallback is available")
    impls = [("python", _kernels.fallback)]
    if _kernels.compiled is not None:
        impls.append(("cython", _kernels.compiled))
    print(f"{'kernel':34s}" + "".join(f"{name:>12s}" for name, _ in impls) + "   speedup")
    for label, fn in cases(np.random.default_rng(0)):
        times = [min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
                 for _, k in impls]
        speed = f"{times[0] / times[-1]:9.2f}x" if len(times) > 1 else ""
        print(f"{label:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times) + "  " + speed)


if __name__ == "__main__":
    main()
