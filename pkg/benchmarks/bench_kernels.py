"""Compare the numba and pure-numpy kernel backends.

Part one times each kernel in isolation (numba timings exclude the first,
compiling call). Part two runs a short allocation + training workload once per
backend in a fresh interpreter, switching with ``OCTSDF_DISABLE_NUMBA``.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5] [--skip-e2e]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from octsdf import kernels

E2E = r"""
import json, time, numpy as np
from octsdf import kernels
from octsdf.decoder import MlpConfig, MlpDecoder
from octsdf.field import FeatureField, FieldLayout
from octsdf.sampler import SamplerConfig, sample_scan
from octsdf.synthetic import make_scene
from octsdf.trainer import LossConfig, OptimConfig, train_batch

sc = make_scene("sphere", 0, n_scans=4)
t0 = time.perf_counter()
f = FeatureField(FieldLayout.centered(np.zeros(3), 0.1, 4, 8))
for p in sc.scans_world:
    f.allocate_for_points(p)
t_alloc = time.perf_counter() - t0
s = sample_scan(sc.origins[0], sc.scans_world[0], SamplerConfig(), np.random.default_rng(0))
dec = MlpDecoder(MlpConfig())
t0 = time.perf_counter()
train_batch(f, dec, s, 50, LossConfig(fd_step=0.05), OptimConfig(), np.random.default_rng(0))
t_train = time.perf_counter() - t0
print(json.dumps({"backend": kernels.BACKEND, "allocate_s": t_alloc, "train_50_iter_s": t_train,
                  "slots": f.n_slots}))
"""


def bench(fn, repeat):
    fn()  # warm-up (compiles numba kernels)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(k, n, rng):
    ijk = rng.integers(0, 1 << 21, size=(n, 3))
    codes = k.morton_encode(ijk[:, 0], ijk[:, 1], ijk[:, 2])
    cap = 1 << int(np.ceil(np.log2(4 * n)))

    def insert():
        keys = np.full(cap, kernels.EMPTY_KEY, dtype=np.uint64)
        vals = np.full(cap, -1, dtype=np.int64)
        k.hash_insert(keys, vals, codes, 0)
        return keys, vals

    keys, vals = insert()
    idx = rng.integers(0, n, size=(n, 32))
    w = rng.random((n, 32))
    rows = rng.normal(size=(n, 8))
    out = np.zeros((n, 8))
    mark = np.zeros(n, dtype=bool)
    return {
        "morton_encode": lambda: k.morton_encode(ijk[:, 0], ijk[:, 1], ijk[:, 2]),
        "morton_decode": lambda: k.morton_decode(codes),
        "hash_insert": insert,
        "hash_lookup": lambda: k.hash_lookup(keys, vals, codes),
        "scatter_weighted": lambda: k.scatter_weighted(out, mark, idx, w, rows),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, default=200_000, help="items per kernel call")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true", help="only time the isolated kernels")
    args = ap.parse_args()

    backends = ["numpy"]
    try:
        kernels.get_backend("numba")
        backends.insert(0, "numba")
    except ImportError:
        print("numba is not installed; timing the numpy backend only")

    results = {}
    for name in backends:
        k = kernels.get_backend(name)
        cases = kernel_cases(k, args.n, np.random.default_rng(0))
        results[name] = {case: bench(fn, args.repeat) for case, fn in cases.items()}

    print(f"kernel timings, n = {args.n}, best of {args.repeat} (ms)")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for case in results[backends[0]]:
        line = f"{case:<18}" + "".join(f"{1e3 * results[b][case]:>12.2f}" for b in backends)
        if len(backends) > 1:
            line += f"{results['numpy'][case] / results['numba'][case]:>11.1f}x"
        print(line)

    if args.skip_e2e:
        return
    print("\nend to end (fresh interpreter per backend; numba allocate includes loading the jitted kernels)")
    for name in backends:
        env = dict(os.environ, OCTSDF_DISABLE_NUMBA="1" if name == "numpy" else "0")
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        r = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"{r['backend']:<8} allocate {r['allocate_s']:.2f} s ({r['slots']} slots), "
              f"50 training iterations {r['train_50_iter_s']:.2f} s")


if __name__ == "__main__":
    main()
