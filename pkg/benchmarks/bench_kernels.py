"""Time the compiled and pure-Python simulation kernels on the same streams.

    python benchmarks/bench_kernels.py [--slots 20000] [--horizon 20000] [--repeat 3]

Each case runs both kernels on identical random streams, checks that the
outputs agree exactly, and reports the best-of-``repeat`` wall time.
"""

import argparse
import time

import numpy as np

from erasurenet import _backend, _pysim
from erasurenet.rng import substream
from erasurenet.topology import fig4_topology, insert_feedback_delay_chain, random_topology


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def identical(a, b):
    keys = ("times", "queues", "queue_integral", "delivery_times")
    return all(np.array_equal(a[k], b[k]) for k in keys) and a["buffers"] == b["buffers"] \
        and a["delivered"] == b["delivered"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=20_000)
    ap.add_argument("--horizon", type=float, default=20_000.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _backend.compiled_kernel is None:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")

    fig4 = fig4_topology()
    cases = [
        ("fig4 slotted lam=.45", fig4, "simulate_slotted", (0.45, args.slots)),
        ("fig4 slotted lam=.60", fig4, "simulate_slotted", (0.60, args.slots)),
        ("fig4 async lam=.45", fig4, "simulate_async", (0.45, args.horizon, 1.0)),
        ("fig4+D=5 slotted lam=.45", insert_feedback_delay_chain(fig4, 5), "simulate_slotted",
         (0.45, args.slots)),
        ("random n=8 async lam=.5", random_topology(8, np.random.default_rng(0), density=0.5),
         "simulate_async", (0.5, args.horizon, 1.0)),
    ]
    print(f"{'case':<28} {'python s':>10} {'compiled s':>11} {'speedup':>8}  identical")
    for name, topo, fn, call in cases:
        net = _pysim.compile_net(topo)
        tp, rp = best_time(lambda: getattr(_backend.python_kernel, fn)(net, *call, substream(1)), args.repeat)
        tc, rc = best_time(lambda: getattr(_backend.compiled_kernel, fn)(net, *call, substream(1)), args.repeat)
        print(f"{name:<28} {tp:>10.4f} {tc:>11.4f} {tp / tc:>7.1f}x  {identical(rp, rc)}")


if __name__ == "__main__":
    main()
