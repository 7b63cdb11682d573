"""Time the numba and pure-numpy flavours of each hot kernel side by side.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes follow a 60 s video at 20 fps with the JOINTS3D+CNNISA network:
the joint LSTM sees 60 segments of up to 60 frames each, the holistic LSTM
one 60-step sequence of width 400.
"""
import argparse
import time

import numpy as np

from ugsv import kernels
from ugsv._accel import HAVE_NUMBA


def _lstm_case(rng, S, B, I, H):
    W = rng.normal(0, 0.1, (I + H, 4 * H))
    b = np.zeros(4 * H)
    X = rng.normal(size=(S, B, I))
    mask = np.ones((S, B))
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))
    return W, b, X, mask, h0, c0


def cases(rng):
    out = {}
    for label, shape in (("lstm_J", (60, 60, 90, 90)), ("lstm_H", (60, 1, 400, 400))):
        W, b, X, mask, h0, c0 = _lstm_case(rng, *shape)
        out[f"{label} forward"] = ("lstm_forward", (W, b, X, mask, h0, c0))
        Hs, Cs, G, TC = kernels.lstm_forward_numpy(W, b, X, mask, h0, c0)
        dHs = rng.normal(size=Hs.shape)
        out[f"{label} backward"] = ("lstm_backward", (W, X, Hs, h0, G, TC, Cs, c0, mask, dHs,
                                                      np.zeros_like(h0), np.zeros_like(c0)))
    coords = rng.uniform(-1.5, 1.5, (60, 15, 3))
    out["joint entropy"] = ("joint_entropy", (coords, np.full(3, -1.0), np.full(3, 2.0 / 3), 3))
    out["nearest centroid"] = ("nearest", (rng.normal(size=(1440, 16)), rng.normal(size=(400, 16))))
    return out


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compilation
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    if not HAVE_NUMBA:
        print("numba not installed; only the numpy column is meaningful")
    print(f"{'kernel':<20s} {'numpy ms':>10s} {'numba ms':>10s} {'speed-up':>9s}")
    for name, (base, call) in cases(rng).items():
        t_np = best_time(getattr(kernels, f"{base}_numpy"), call, args.repeat)
        fn_nb = getattr(kernels, f"{base}_numba")
        t_nb = best_time(fn_nb, call, args.repeat) if fn_nb is not None else float("nan")
        print(f"{name:<20s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
