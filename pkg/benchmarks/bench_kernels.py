"""Time the jet kernels on each available backend.

    python benchmarks/bench_kernels.py [--repeat N] [--json]

Reports the best-of-N wall time for jet_mul and jet_matmul at a few jet
sizes, then one end-to-end identity run, for the compiled extension and the
numpy fallback.  The compiled rows are skipped when the extension is absent.
"""

import argparse
import json
import timeit

import numpy as np

from mixedcurv import catalog, kernels
from mixedcurv.identities import run_identities
from mixedcurv.jets import space

CASES = [(3, 2, 2000), (4, 2, 2000), (4, 3, 500)]  # (variables, order, batch)


def kernel_cases(rng):
    for nvars, order, batch in CASES:
        sp = space(nvars, order)
        idx = (sp.pi, sp.pj, sp.pk)
        a, b = rng.normal(size=(batch, sp.ncoef)), rng.normal(size=(batch, sp.ncoef))
        A = rng.normal(size=(batch // 10, 4, 4, sp.ncoef))
        B = rng.normal(size=(batch // 10, 4, 4, sp.ncoef))
        tag = f"m={nvars} k={order} ncoef={sp.ncoef}"
        yield f"jet_mul {tag} batch={batch}", lambda be, a=a, b=b, idx=idx: be.jet_mul(a, b, *idx)
        yield f"jet_matmul 4x4 {tag} batch={batch // 10}", lambda be, A=A, B=B, idx=idx: be.jet_matmul(A, B, *idx)


def best(fn, repeat: int) -> float:
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args()

    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.insert(0, ("compiled", kernels.compiled_backend))
    rng = np.random.default_rng(0)
    rows = []
    for label, fn in kernel_cases(rng):
        times = {name: best(lambda: fn(be), args.repeat) for name, be in backends}
        rows.append({"case": label, **times})

    previous = kernels.name
    geo = catalog.double_twisted()
    times = {}
    for name, _ in backends:
        kernels.use(name)
        times[name] = best(lambda: run_identities(geo, points=50), max(1, args.repeat // 2))
    kernels.use(previous)
    rows.append({"case": "identities double_twisted, 50 points", **times})

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    names = [n for n, _ in backends]
    print(f"{'case':48s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for r in rows:
        line = f"{r['case']:48s}" + "".join(f"{r[n] * 1e3:10.2f}ms" for n in names)
        if len(names) == 2:
            line += f"{r['python'] / r['compiled']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
