"""Benchmark the compiled kernel backend against the pure-Python fallback.

Micro-kernels are timed in-process against both backend modules directly;
the end-to-end training-step benchmark re-executes this script in a
subprocess with SGNN_KERNELS pinned, because the backend is chosen once at
import time.

Usage:
    python3 benchmarks/kernel_bench.py            # full comparison table
    python3 benchmarks/kernel_bench.py --quick    # fewer repetitions
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from array import array


def _time(fn, repeats: int) -> float:
    """Best-of-N wall time in seconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _rand_buf(n: int, seed: int) -> array:
    from sgnn.numerics import RngStream

    return RngStream(seed).normals(n)


def bench_kernels(repeats: int) -> list[tuple[str, float, float]]:
    from sgnn._kernels import _reference

    try:
        from sgnn._kernels import _native
    except ImportError:
        print("native backend unavailable; build the extension first", file=sys.stderr)
        raise SystemExit(1)

    out_rows = []

    cases = []
    for n, k, m in ((30, 30, 64), (64, 64, 64), (128, 128, 128)):
        a, b = _rand_buf(n * k, 1), _rand_buf(k * m, 2)
        out = array("d", bytes(8 * n * m))
        cases.append(
            (f"matmul {n}x{k} @ {k}x{m}", lambda impl, a=a, b=b, out=out, n=n, k=k, m=m: impl.mm(a, b, out, n, k, m))
        )

    x = _rand_buf(30 * 200, 3)
    zout = array("d", bytes(8 * len(x)))
    cases.append(
        ("zscore_rows 30x200", lambda impl: impl.zscore_rows(x, zout, 30, 200))
    )

    nbuf = array("d", bytes(8 * 100_000))
    cases.append(
        (
            "fill_normal 100k",
            lambda impl: impl.fill_normal(array("Q", [1, 2, 3, 4]), nbuf, 100_000),
        )
    )

    big = _rand_buf(30 * 30, 4)
    eout = array("d", bytes(8 * len(big)))
    cases.append(
        ("logistic 30x30", lambda impl: impl.logistic(big, eout, len(big)))
    )

    for name, fn in cases:
        t_native = _time(lambda: fn(_native), repeats)
        t_python = _time(lambda: fn(_reference), max(1, repeats // 4))
        out_rows.append((name, t_native, t_python))
    return out_rows


def bench_train_step() -> float:
    """One forward+backward on a harness-sized sample, current backend."""
    from sgnn.model import ModelDims, init_params
    from sgnn.numerics import RngStream
    from sgnn.synth import default_harness_config, generate
    from sgnn.graphs import connectivity_graph
    from sgnn.training import LossConfig, backward, sample_loss

    cfg = default_harness_config(seed=0, train_blocks=1, val_blocks=1, test_blocks=1)
    trials, _ = generate(cfg)
    graph = connectivity_graph(trials[: cfg.block_size], cfg.block_size, 0, "train")
    params = init_params(cfg.num_parcels, cfg.num_classes, ModelDims(), RngStream(5))
    loss_cfg = LossConfig(class_weights=[1.0] * cfg.num_classes)

    def step():
        loss, cache = sample_loss(params, graph, 0, loss_cfg)
        backward(cache, graph, 0, params, loss_cfg)

    step()  # warm up
    reps = 20
    t0 = time.perf_counter()
    for _ in range(reps):
        step()
    return (time.perf_counter() - t0) / reps


def _train_step_in_subprocess(backend: str) -> float:
    env = dict(os.environ, SGNN_KERNELS=backend)
    result = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--train-step-only"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return float(result.stdout.strip().splitlines()[-1])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="fewer repetitions")
    parser.add_argument(
        "--train-step-only",
        action="store_true",
        help="print one train-step time for the current backend and exit",
    )
    args = parser.parse_args()

    if args.train_step_only:
        print(repr(bench_train_step()))
        return

    repeats = 5 if args.quick else 20
    rows = bench_kernels(repeats)
    print(f"{'kernel':<28} {'native':>12} {'python':>12} {'speedup':>9}")
    for name, t_native, t_python in rows:
        print(
            f"{name:<28} {t_native * 1e6:>10.1f}us {t_python * 1e6:>10.1f}us "
            f"{t_python / t_native:>8.1f}x"
        )

    print("\nend-to-end forward+backward, P=30 harness sample:")
    for backend in ("native", "python"):
        t = _train_step_in_subprocess(backend)
        print(f"  {backend:<8} {t * 1e3:10.2f} ms/sample")


if __name__ == "__main__":
    main()
