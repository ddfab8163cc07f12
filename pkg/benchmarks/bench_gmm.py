"""Benchmark the mixture-fit kernel: compiled path vs pure-numpy fallback.

The expectation-maximization fit runs once per training epoch on the full
vector of per-sample losses, so its latency is on the training hot path.
This script times both implementations on representative workloads and
reports the speedup.  Run it from the repository root:

    python3 benchmarks/bench_gmm.py
    python3 benchmarks/bench_gmm.py --sizes 2000 20000 --repeats 20
"""

import argparse
import os
import statistics
import time

import numpy as np

from edmlab.gmm import GmmConfig, fit_em
from edmlab.gmm_kernels import HAVE_NUMBA


def make_losses(n: int, seed: int) -> np.ndarray:
    """Three-band loss vector shaped like a real training epoch."""
    rng = np.random.default_rng(seed)
    parts = [
        rng.normal(0.12, 0.05, size=int(n * 0.4)),
        rng.normal(0.5, 0.08, size=int(n * 0.3)),
        rng.normal(0.85, 0.05, size=n - int(n * 0.4) - int(n * 0.3)),
    ]
    return np.clip(np.concatenate(parts), 0.0, 1.0)


def time_fit(losses: np.ndarray, cfg: GmmConfig, repeats: int) -> list[float]:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fit_em(losses, cfg)
        samples.append(time.perf_counter() - start)
    return samples


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[500, 2000, 10000],
                        help="dataset sizes to benchmark")
    parser.add_argument("--psi", type=int, default=20,
                        help="mixture components")
    parser.add_argument("--repeats", type=int, default=10,
                        help="timed repetitions per configuration")
    args = parser.parse_args()

    cfg = GmmConfig(num_components=args.psi)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available\n")

    print(f"psi={args.psi}, repeats={args.repeats} "
          f"(median over repeats, first compiled call excluded)\n")
    print(f"{'n':>8} {'numpy (ms)':>12} {'compiled (ms)':>14} {'speedup':>9}")
    for n in args.sizes:
        losses = make_losses(n, seed=n)

        os.environ["EDM_NO_NUMBA"] = "1"
        numpy_times = time_fit(losses, cfg, args.repeats)
        numpy_ms = statistics.median(numpy_times) * 1e3

        if HAVE_NUMBA:
            os.environ.pop("EDM_NO_NUMBA", None)
            fit_em(losses, cfg)  # trigger compilation outside the timing
            compiled_times = time_fit(losses, cfg, args.repeats)
            compiled_ms = statistics.median(compiled_times) * 1e3
            print(f"{n:>8} {numpy_ms:>12.3f} {compiled_ms:>14.3f} "
                  f"{numpy_ms / compiled_ms:>8.1f}x")
        else:
            print(f"{n:>8} {numpy_ms:>12.3f} {'-':>14} {'-':>9}")

    os.environ.pop("EDM_NO_NUMBA", None)


if __name__ == "__main__":
    main()
