"""Compiled core versus the numpy fallback on the sampler's hot loops.

    python3 benchmarks/bench_core.py [--T 1000] [--channels 7] [--repeat 200]

Prints one line per case with the median call time of each backend, the
speed-up, and the largest relative disagreement between the two.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from ar2mix import _fallback
from ar2mix.kernel import density_grid

try:
    from ar2mix import _core
except ImportError:
    _core = None


def median_time(fn, repeat: int) -> float:
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return float(np.median(times))


def make_case(rng, T: int, n: int, K: int, noise: float):
    freqs = np.arange(1, T // 2) / T
    psi = np.sort(rng.uniform(0.01, 0.49, K))
    L = rng.uniform(0.01, 0.5, K)
    g = density_grid(psi, L, freqs)
    lam = rng.random((n, K))
    lam /= np.sqrt((lam**2).sum(axis=1, keepdims=True))
    d = rng.standard_normal((len(freqs), n)) + 1j * rng.standard_normal((len(freqs), n))
    return g, lam, noise, np.asfortranarray(d.real), np.asfortranarray(d.imag)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--channels", type=int, default=7)
    p.add_argument("--components", default="1,3,4,8,12")
    p.add_argument("--repeat", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="emit one JSON document instead of text")
    args = p.parse_args(argv)
    if _core is None:
        print("compiled core not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1

    rng = np.random.default_rng(args.seed)
    results = []
    for K in (int(k) for k in args.components.split(",")):
        g, lam, noise, dre, dim = make_case(rng, args.T, args.channels, K, 0.05)
        fast = _core.whittle_loglik(g, lam, noise, dre, dim)
        slow = _fallback.whittle_loglik(g, lam, noise, dre, dim)
        t_core = median_time(lambda: _core.whittle_loglik(g, lam, noise, dre, dim), args.repeat)
        t_py = median_time(lambda: _fallback.whittle_loglik(g, lam, noise, dre, dim), args.repeat)
        results.append({"case": f"whittle n={args.channels} K={K}", "core_us": t_core * 1e6,
                        "fallback_us": t_py * 1e6, "rel_diff": abs(fast - slow) / abs(slow)})

    M = args.T // 2 - 1
    w = 2 * np.pi * np.arange(1, M + 1) / args.T
    tables = (np.cos(w), np.sin(w), np.cos(2 * w), np.sin(2 * w))
    out_c, out_p = np.empty(M), np.empty(M)
    _core.density_row(0.1, 0.05, *tables, out_c)
    _fallback.density_row(0.1, 0.05, *tables, out_p)
    t_core = median_time(lambda: _core.density_row(0.1, 0.05, *tables, out_c), args.repeat)
    t_py = median_time(lambda: _fallback.density_row(0.1, 0.05, *tables, out_p), args.repeat)
    results.append({"case": f"density_row M={M}", "core_us": t_core * 1e6, "fallback_us": t_py * 1e6,
                    "rel_diff": float(np.max(np.abs(out_c - out_p) / np.abs(out_p)))})

    if args.json:
        print(json.dumps(results, indent=2))
        return 0
    print(f"{'case':<24} {'core us':>10} {'numpy us':>10} {'speed-up':>9} {'rel diff':>10}")
    for r in results:
        print(f"{r['case']:<24} {r['core_us']:10.1f} {r['fallback_us']:10.1f} "
              f"{r['fallback_us'] / r['core_us']:8.1f}x {r['rel_diff']:10.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
