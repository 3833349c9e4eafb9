#!/usr/bin/env python3
"""Benchmark the numpy and numba kernel backends on this machine.

Times the three hot paths (training-shape forward+backward, the AdamW
update, and the full ancestral sampling loop) and prints a table with
speedups relative to numpy. Numba is transcendental-bound without SVML,
so do not assume it wins; this script is how the default gets justified
on a given box.

Usage: python benchmarks/bench_backends.py [--repeat N]
"""

import argparse
import time

import numpy as np

from erasure_lab import diffusion, nn
from erasure_lab.backends import get_backend


def timeit(fn, repeat):
    fn()  # warm-up (first numba call compiles)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    model = diffusion.init_model(2, 1, [64, 64, 64], 200, 1e-4, 0.05, seed=1)
    net = model.eps_net
    c_scale, c_eps, sigma = model.schedule.coeffs()
    rng = np.random.Generator(np.random.PCG64(0))

    x_train = rng.standard_normal((128, net.n_in))
    dout = rng.standard_normal((128, net.n_out))
    grads = rng.standard_normal(net.parameter_count)
    mask = (rng.random(net.parameter_count) < 0.05).astype(np.uint8)
    z0 = rng.standard_normal((4096, 2))
    noises = rng.standard_normal((201, 4096, 2))
    flags = np.ones((4096, 1))

    backends = {}
    for name in ("numpy", "numba"):
        try:
            backends[name] = get_backend(name)
        except ImportError:
            print(f"{name}: not available, skipping")

    cases = {}
    for name, k in backends.items():

        def fwd_bwd(k=k):
            posts = k.mlp_forward(net.params, net.sizes, net.acts, net.w_off,
                                  net.b_off, x_train)
            k.mlp_backward(net.params, net.sizes, net.acts, net.w_off,
                           net.b_off, posts, dout)

        def adamw(k=k):
            p = net.params.copy()
            m = np.zeros_like(p)
            v = np.zeros_like(p)
            for t in range(1, 51):
                k.adamw_update(p, grads, m, v, t, 1e-3, 0.9, 0.999, 1e-8,
                               1e-4, mask)

        def sampler(k=k):
            k.ddpm_sampler(net.params, net.sizes, net.acts, net.w_off,
                           net.b_off, model.emb, flags, z0.copy(), noises,
                           c_scale, c_eps, sigma)

        cases[name] = {
            "forward+backward (B=128)": timeit(fwd_bwd, args.repeat * 40),
            "adamw x50 (9k params)": timeit(adamw, args.repeat * 4),
            "sampler (B=4096, T=200)": timeit(sampler, args.repeat),
        }

    print(f"{'kernel':28s}" + "".join(f"{n:>14s}" for n in cases)
          + ("      speedup" if len(cases) == 2 else ""))
    for key in next(iter(cases.values())):
        row = f"{key:28s}"
        vals = [cases[n][key] for n in cases]
        for v in vals:
            row += f"{v * 1e3:12.2f}ms"
        if len(vals) == 2:
            row += f"   numpy x{vals[1] / vals[0]:.2f}"
        print(row)


if __name__ == "__main__":
    main()
