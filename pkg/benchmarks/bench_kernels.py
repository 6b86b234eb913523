"""Compare the compiled and pure-python kernel backends.

Times im2col/col2im at several geometries plus one full training step, and
checks that both backends produce bit-identical results while timing them.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--train-steps N]
"""

import argparse
import time

import numpy as np

from i2idiff.nn import backend


def time_call(fn, repeats: int) -> float:
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats: int) -> list[dict]:
    cases = [
        ("conv3x3 64x32x32", (8, 64, 32, 32), (3, 3, 1, 1, 1, 1)),
        ("conv3x3 128x16x16", (8, 128, 16, 16), (3, 3, 1, 1, 1, 1)),
        ("conv3x3 stride2", (8, 64, 32, 32), (3, 3, 2, 2, 1, 1)),
        ("conv5x5 dilated", (4, 32, 32, 32), (5, 5, 1, 1, 2, 2)),
    ]
    rng = np.random.default_rng(0)
    rows = []
    for label, shape, (kh, kw, sy, sx, dy, dx) in cases:
        x = rng.standard_normal(shape).astype(np.float32)
        pybk = backend.get_backend("python")
        cols = pybk.im2col(x, kh, kw, sy, sx, dy, dx)
        row = {"case": label}
        for direction, args in (("im2col", (x, kh, kw, sy, sx, dy, dx)),
                                ("col2im", (cols, shape[1], shape[2],
                                            shape[3], kh, kw, sy, sx, dy,
                                            dx))):
            results = {}
            for name in ("python", "compiled"):
                try:
                    bk = backend.get_backend(name)
                except ImportError:
                    row[f"{direction}_{name}_ms"] = None
                    continue
                fn = getattr(bk, direction)
                results[name] = fn(*args)
                row[f"{direction}_{name}_ms"] = 1e3 * time_call(
                    lambda: fn(*args), repeats)
            if len(results) == 2:
                assert np.array_equal(results["python"],
                                      results["compiled"]), \
                    f"backend mismatch on {label} {direction}"
        rows.append(row)
    return rows


def bench_train_step(steps: int) -> dict:
    from i2idiff.denoiser import ArchitectureConfig
    from i2idiff.pipeline.data import make_color_modes_dataset
    from i2idiff.pipeline.training import (TrainConfig, TrainState,
                                           make_batch, train_step)

    arch = ArchitectureConfig(base_channels=32, channel_multipliers=(1, 2),
                              blocks_per_level=1,
                              variant="global_self_attention",
                              attention_resolutions=(8,), heads=4, groups=8,
                              input_size=16)
    cfg = TrainConfig(batch_size=8, total_steps=10_000, learning_rate=1e-4,
                      warmup_steps=100, ema_decay=0.99,
                      schedule=(1e-3, 0.12, 100), seed=0)
    images, _ = make_color_modes_dataset(64, size=16,
                                         rng=np.random.default_rng(1))
    state = TrainState(cfg, arch)
    train_step(state, make_batch(state, images))  # warm up
    t0 = time.perf_counter()
    for _ in range(steps):
        train_step(state, make_batch(state, images))
    per_step = (time.perf_counter() - t0) / steps
    return {"backend": backend.BACKEND_NAME, "steps": steps,
            "ms_per_step": 1e3 * per_step}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--train-steps", type=int, default=10,
                    help="training steps to time on the active backend")
    args = ap.parse_args()

    print(f"active backend: {backend.BACKEND_NAME}")
    rows = bench_kernels(args.repeats)
    header = ("case", "im2col py", "im2col c", "col2im py", "col2im c",
              "speedup")
    print(f"\n{header[0]:<22}{header[1]:>11}{header[2]:>10}"
          f"{header[3]:>11}{header[4]:>10}{header[5]:>9}")
    for r in rows:
        im_py = r["im2col_python_ms"]
        im_c = r.get("im2col_compiled_ms")
        col_py = r["col2im_python_ms"]
        col_c = r.get("col2im_compiled_ms")
        if im_c is not None:
            speed = (im_py + col_py) / (im_c + col_c)
            print(f"{r['case']:<22}{im_py:>9.3f}ms{im_c:>8.3f}ms"
                  f"{col_py:>9.3f}ms{col_c:>8.3f}ms{speed:>8.2f}x")
        else:
            print(f"{r['case']:<22}{im_py:>9.3f}ms{'-':>10}"
                  f"{col_py:>9.3f}ms{'-':>10}{'-':>9}")

    t = bench_train_step(args.train_steps)
    print(f"\ntrain step ({t['backend']} backend, {t['steps']} steps): "
          f"{t['ms_per_step']:.1f} ms/step")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
