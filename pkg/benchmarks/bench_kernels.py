#!/usr/bin/env python3
"""Side-by-side timing of the numba kernels against the numpy fallbacks.

Also checks that both backends agree numerically on every kernel, since
the numpy path is what runs when CCC_NUMBA=0.
"""

import time

import numpy as np

from ccc import kernels
from ccc.rng import RngStream


def _case(n=128, C=10, R=50, k=3, G=5, seed=0):
    rng = RngStream(seed)
    P = np.abs(rng.normal((n, C))) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    A = n * k
    ann_i = rng.gen.integers(0, n, A).astype(np.int64)
    ann_r = rng.gen.integers(0, R, A).astype(np.int64)
    ann_y = rng.gen.integers(0, C, A).astype(np.int64)
    M = np.stack([np.eye(C) + 0.05 * rng.normal((C, C)) for _ in range(R)])
    groups = (np.arange(R) % G).astype(np.int64)
    U = rng.normal((n, C))
    return P, ann_i, ann_r, ann_y, M, groups, U


def _time(fn, *args, iters=200):
    fn(*args)  # warmup / jit compile
    t0 = time.perf_counter()
    for _ in range(iters):
        out = fn(*args)
    return (time.perf_counter() - t0) / iters, out


def main():
    if not kernels._numba_ok:
        print("numba not importable: nothing to compare")
        return
    print(f"active backend: {'numba' if kernels.USING_NUMBA else 'numpy'}")
    print(f"{'kernel':<14} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}  agreement")
    print("-" * 60)

    P, ai, ar, ay, M, groups, U = _case()
    R, G = M.shape[0], groups.max() + 1

    t_np, out_np = _time(kernels.crowd_grads_np, P, ai, ar, ay, M, R)
    t_nb, out_nb = _time(kernels.crowd_grads_nb, P, ai, ar, ay, M, R)
    agree = np.allclose(out_np[1], out_nb[1], rtol=1e-10) and \
        np.allclose(out_np[2], out_nb[2], rtol=1e-10)
    print(f"{'crowd_grads':<14} {1e3 * t_np:>11.3f} {1e3 * t_nb:>11.3f} "
          f"{t_np / t_nb:>7.1f}x  {'ok' if agree else 'FAIL'}")

    t_np, h_np = _time(kernels.hyper_grads_np, P, U, ai, ar, ay, M, groups, G)
    t_nb, h_nb = _time(kernels.hyper_grads_nb, P, U, ai, ar, ay, M, groups, G)
    agree = np.allclose(h_np, h_nb, rtol=1e-10)
    print(f"{'hyper_grads':<14} {1e3 * t_np:>11.3f} {1e3 * t_nb:>11.3f} "
          f"{t_np / t_nb:>7.1f}x  {'ok' if agree else 'FAIL'}")

    # generation-scale label draws and annotator selection
    rng = RngStream(1)
    N = 45_000
    mat = np.full((10, 10), 0.03)
    np.fill_diagonal(mat, 0.73)
    cum = np.cumsum(mat, axis=1)
    truth = rng.gen.integers(0, 10, N).astype(np.int64)
    u = rng.uniform(N)
    t_np, d_np = _time(kernels.draw_labels_np, cum, truth, u, iters=20)
    t_nb, d_nb = _time(kernels.draw_labels_nb, cum, truth, u, iters=20)
    print(f"{'draw_labels':<14} {1e3 * t_np:>11.3f} {1e3 * t_nb:>11.3f} "
          f"{t_np / t_nb:>7.1f}x  {'ok' if np.array_equal(d_np, d_nb) else 'FAIL'}")

    weights = rng.beta(1.5, 3.0, 250)
    Us = rng.uniform((N, 3))
    t_np, s_np = _time(kernels.select_k_np, weights, Us, iters=3)
    t_nb, s_nb = _time(kernels.select_k_nb, weights, Us, iters=3)
    print(f"{'select_k':<14} {1e3 * t_np:>11.3f} {1e3 * t_nb:>11.3f} "
          f"{t_np / t_nb:>7.1f}x  {'ok' if np.array_equal(s_np, s_nb) else 'FAIL'}")


if __name__ == "__main__":
    main()
