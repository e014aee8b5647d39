"""Compiled versus pure-Python kernels on typical mechanism workloads.

Run with ``python3 benchmarks/bench_kernels.py``. Each line reports the best
of several repeats per backend, the speedup, and the largest difference
between the two outputs.
"""

import argparse
import timeit

import numpy as np

from hetdp_market._kernels import backends


def _flat(out):
    if isinstance(out, dict):
        return np.concatenate([np.ravel(np.asarray(out[k], dtype=float)) for k in sorted(out)])
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(x, dtype=float)) for x in out])
    return np.ravel(np.asarray(out, dtype=float))


def workloads(gen):
    g = np.sort(gen.uniform(0.1, 2.0, size=1000))
    G = np.sort(gen.uniform(0.1, 2.0, size=(200, 50)), axis=1)
    others = np.sort(gen.uniform(0.1, 2.0, size=49))
    gz = np.linspace(0.05, 2.5, 256)
    x = gen.normal(size=1000)
    gp = gen.uniform(0.1, 2.0, size=50)
    return {
        "kkt_batch 200x50": lambda k: k.kkt_batch(G, 1.0, 1.0),
        "capped_path m=1000": lambda k: k.capped_path(g, 1.0, 1.0, 2.0 / 1000),
        "capped_curve 256 reports": lambda k: k.capped_curve(others, gz, 1.0, 1.0, 0.1),
        "project m=1000": lambda k: k.project_capped_simplex(x, 0.01),
        # iteration counts may differ between backends; only the allocation is compared
        "pgd_fixed_eta m=50": lambda k: k.pgd_fixed_eta(gp, 1.0, 5.0, 0.1, np.full(50, 0.02), 1e-9, 100000)[0],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    ks = backends()
    if "cython" not in ks:
        print("compiled extension not built; only the Python backend is available")
    for name, fn in workloads(np.random.default_rng(0)).items():
        times, outs = {}, {}
        for bname, mod in ks.items():
            outs[bname] = _flat(fn(mod))
            number = 3 if bname == "python" else 30
            times[bname] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        line = f"{name:28s} python {times['python'] * 1e3:9.3f} ms"
        if "cython" in times:
            diff = np.nanmax(np.abs(outs["cython"] - outs["python"]))
            line += (f"  cython {times['cython'] * 1e3:9.3f} ms  speedup {times['python'] / times['cython']:7.1f}x"
                     f"  max diff {diff:.1e}")
        print(line)


if __name__ == "__main__":
    main()
