"""Time the compiled worst-fit kernel against the pure-Python fallback.

    python benchmarks/bench_kernels.py --sizes 300x50,1000x500,3000x500 --rounds 3

Both kernels get identical inputs; the script checks they return the same
placement before reporting the speedup.
"""

from __future__ import annotations

import argparse
import random
import sys
import time

from edgefailover import kernels
from edgefailover.progressive import pack
from edgefailover.synth import failover_instance


def parse_sizes(raw: str) -> list[tuple[int, int]]:
    out = []
    for part in raw.split(","):
        apps, servers = part.lower().split("x")
        out.append((int(apps), int(servers)))
    return out


def time_kernel(fn, req, starts, rounds: int):
    """Best end-to-end pack time and best time inside the kernel itself."""
    best, best_kernel, result = float("inf"), float("inf"), None
    inside = []

    def timed(*a, **kw):
        t = time.perf_counter()
        out = fn(*a, **kw)
        inside.append(time.perf_counter() - t)
        return out

    for _ in range(rounds):
        inside.clear()
        t0 = time.perf_counter()
        result = pack(
            req.state,
            req.affected_apps,
            req.available_servers,
            req.state.candidates,
            starts,
            progressive=True,
            place_fn=timed,
        )
        best = min(best, time.perf_counter() - t0)
        best_kernel = min(best_kernel, sum(inside))
    return best, best_kernel, result


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="300x50,1000x500,3000x500", help="APPSxSERVERS,...")
    ap.add_argument("--variants", type=int, default=4)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernels.compiled_place_worst_fit is None:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1

    print(f"{'apps':>6} {'servers':>7} {'kernel py ms':>13} {'kernel c ms':>12} {'speedup':>8} {'pack py ms':>11} {'pack c ms':>10}")
    for n_apps, n_servers in parse_sizes(args.sizes):
        req = failover_instance(random.Random(args.seed), n_apps, n_servers, args.variants)
        starts = [len(req.state.candidates(a)) - 1 for a in req.affected_apps]
        py_t, py_k, py_out = time_kernel(kernels.python_place_worst_fit, req, starts, args.rounds)
        c_t, c_k, c_out = time_kernel(kernels.compiled_place_worst_fit, req, starts, args.rounds)
        if py_out != c_out:
            print(f"kernels disagree at {n_apps}x{n_servers}", file=sys.stderr)
            return 2
        print(
            f"{n_apps:6d} {n_servers:7d} {py_k * 1e3:13.2f} {c_k * 1e3:12.3f} {py_k / c_k:7.1f}x"
            f" {py_t * 1e3:11.2f} {c_t * 1e3:10.2f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
