"""Time the numba and numpy paths of each hot kernel on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 32] [--steps 40]

Prints one row per kernel with the best-of-N wall time for each backend, the
speedup and the largest absolute difference between the two results.
"""
import argparse
import time

import numpy as np

from motionlang import _accel, kernels


def _best_time(fn, repeat):
    fn()  # warm-up (numba compiles on first call)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng, B, T):
    cases = {}
    for label, H, ln in (("gru m2l enc (H=64)", 64, False), ("gru l2m dec (H=400, LN)", 400, True)):
        xw = rng.normal(size=(T, B, 3 * H))
        U = rng.normal(size=(H, 3 * H)) / np.sqrt(H)
        mask = (np.arange(T)[:, None] < rng.integers(T // 2, T + 1, size=B)[None]).astype(float)
        gain, beta = (np.ones(3 * H), np.zeros(3 * H)) if ln else (None, None)
        out, cache = kernels.gru_forward(xw, U, mask, gain, beta)
        dout = rng.normal(size=out.shape)

        def fwd(xw=xw, U=U, mask=mask, gain=gain, beta=beta):
            return kernels.gru_forward(xw, U, mask, gain, beta)[0]

        def bwd(U=U, mask=mask, dout=dout, xw=xw, gain=gain, beta=beta):
            _, c = kernels.gru_forward(xw, U, mask, gain, beta)
            return kernels.gru_backward(dout, U, mask, c)[0]
        cases[f"{label} forward"] = fwd
        cases[f"{label} fwd+bwd"] = bwd

    K, J = 20, 44
    raw = rng.normal(size=(B * T, K + 2 * K * J + 1))
    target = np.concatenate([rng.normal(size=(B * T, J)), rng.integers(0, 2, size=(B * T, 1))], axis=1)
    cases["mdn surrogate (K=20, J=44)"] = lambda: kernels.mdn_surrogate(raw, target, K, J)[1]

    n = 1_000_000
    g = rng.normal(size=n)

    def nadam():
        p, m, v = np.ones(n), np.zeros(n), np.zeros(n)
        kernels.nadam_update(p, m, v, g, 1e-3, 0.9, 0.999, 1e-8, 1)
        return p
    cases["nadam (1M params)"] = nadam
    return cases


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--steps", type=int, default=40)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = _cases(np.random.default_rng(0), args.batch, args.steps)
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    prev = _accel.backend()
    try:
        for name, fn in cases.items():
            _accel.set_backend("numba")
            t_nb, r_nb = _best_time(fn, args.repeat), fn()
            _accel.set_backend("numpy")
            t_np, r_np = _best_time(fn, args.repeat), fn()
            diff = float(np.max(np.abs(np.asarray(r_nb) - np.asarray(r_np))))
            print(f"{name:34s} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:7.2f}x {diff:11.2e}")
    finally:
        _accel.set_backend(prev)


if __name__ == "__main__":
    main()
