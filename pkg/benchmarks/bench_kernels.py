"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from fitroom import kernels


def cases(rng):
    x = rng.normal(size=(8, 32, 32))
    w = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    g = rng.normal(size=(16, 32, 32))
    feat = rng.normal(size=(16, 32, 32))
    boxes = np.column_stack([rng.uniform(0, 200, (300, 2)), rng.uniform(5, 60, (300, 2))])
    scores = rng.uniform(size=300)
    theta = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    px, py = 128 + 100 * np.cos(theta), 128 + 90 * np.sin(theta)
    return {
        "conv2d_forward 8->16 @32x32": lambda m: m.conv2d_forward(x, w, b, 1, 1),
        "conv2d_backward_input": lambda m: m.conv2d_backward_input(g, w, x.shape, 1, 1),
        "roi_align 16ch 7x7 s=2": lambda m: m.roi_align(feat, 3.3, 4.1, 20.5, 17.2, 7, 2),
        "nms 300 boxes": lambda m: m.nms(boxes, scores, 0.5),
        "rasterize 40-gon 256x256": lambda m: m.rasterize_polygon(px, py, 256, 256),
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = kernels.available_backends()
    names = sorted(backends)
    print(f"{'kernel':<30}" + "".join(f"{n + ' (ms)':>16}" for n in names) + (f"{'speedup':>10}" if len(names) == 2 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name in names:
            mod = backends[name]
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times[name] = best * 1e3
        row = f"{label:<30}" + "".join(f"{times[n]:>16.3f}" for n in names)
        if len(names) == 2:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
