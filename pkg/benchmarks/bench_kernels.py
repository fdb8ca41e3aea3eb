"""Compare the numba and pure-numpy kernel paths on scene-sized inputs.

    python3 benchmarks/bench_kernels.py [--size 2048] [--members 20] [--repeat 5]

Both paths are imported from the same module, so one process times both; the
numba functions are called once before timing to exclude compilation.
"""
import argparse
import timeit

import numpy as np

from landslide_ensemble import _kernels as K


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=2048, help="scene side length in pixels")
    ap.add_argument("--members", type=int, default=20, help="ensemble members for the pairwise sum")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is unavailable or disabled; nothing to compare")

    rng = np.random.default_rng(0)
    n = args.size
    pred, label, valid, other = (rng.random((4, n, n)) < 0.3).astype(np.uint8)
    x = rng.normal(size=(n, n)).astype(np.float32)
    stack = rng.random((args.members, n, n))
    cases = {
        "confusion_counts": ((K._confusion_counts_nb, K._confusion_counts_np), (pred, label, valid)),
        "diff_codes": ((K._diff_codes_nb, K._diff_codes_np), (label, pred, other, valid)),
        "masked_moments": ((K._masked_moments_nb, K._masked_moments_np), (x, valid)),
        "pairwise_sum": ((K._pairwise_sum_nb, K._pairwise_sum_np), (stack.reshape(args.members, -1),)),
    }
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, ((nb, npy), a) in cases.items():
        nb(*a)  # compile
        t_nb = min(timeit.repeat(lambda: nb(*a), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: npy(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18} {t_nb:>10.2f} {t_np:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
