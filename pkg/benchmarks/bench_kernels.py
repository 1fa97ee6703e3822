"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from evmarket import kernels
from evmarket.cssg import random_instance


def cases():
    rng = np.random.default_rng(0)
    insts = [random_instance(rng, 8, 3) for _ in range(50)]

    def solve_all(k):
        for inst in insts:
            assign = np.full(len(inst.ev_ids), -1, dtype=np.int64)
            k.cssg_solve(inst.cost, np.ascontiguousarray(inst.prices), inst.locations,
                         np.asarray(inst.station_ids, dtype=np.int64), inst.free_slots,
                         inst.slots, inst.committed, float(inst.wait_weight),
                         float(inst.params.k_ch_hours), assign, 7, 36)

    W1, b1 = rng.normal(size=(128, 4)), rng.normal(size=128)
    W2, b2 = rng.normal(size=(21, 128)), rng.normal(size=21)
    X = rng.uniform(size=(32, 4))
    acts = rng.integers(0, 21, 32)
    tg = rng.normal(size=32)

    def forward(k):
        k.mlp_forward(W1, b1, W2, b2, X)

    def grad(k):
        k.mlp_grad_step(W1.copy(), b1.copy(), W2.copy(), b2.copy(), X, acts, tg, 1e-6)

    return {"cssg_solve x50 (8 EVs, 3 stations)": solve_all,
            "mlp_forward batch 32": forward,
            "mlp_grad_step batch 32": grad}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':40s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, fn in cases().items():
        times = {}
        for b, mod in backends.items():
            number = 20
            times[b] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:40s} " + " ".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
              + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
