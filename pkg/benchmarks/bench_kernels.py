"""Compare the compiled and pure-numpy im2col/col2im kernels.

Run with ``python benchmarks/bench_kernels.py``. Reports microseconds per call
for each backend on the shapes the toy recognizer actually uses, plus one
full forward/backward pass of that network.
"""

import argparse
import timeit

import numpy as np

from pmt import _kernels_py, kernels, models, nn

SHAPES = [(3, 32, 32), (16, 16, 16), (32, 8, 8)]


def backends():
    out = {"python": _kernels_py}
    try:
        from pmt import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def bench_kernels(repeat):
    rows = []
    g = np.random.default_rng(0)
    for shape in SHAPES:
        x = g.standard_normal(shape)
        c, h, w = shape
        for name, mod in backends().items():
            cols = mod.im2col(x, 3, 1, 1)
            t1 = min(timeit.repeat(lambda: mod.im2col(x, 3, 1, 1), number=repeat, repeat=3)) / repeat
            t2 = min(timeit.repeat(lambda: mod.col2im(cols, c, h, w, 3, 1, 1), number=repeat, repeat=3)) / repeat
            rows.append((shape, name, t1 * 1e6, t2 * 1e6))
    return rows


def bench_network(repeat):
    """Per-sample forward + backward of the default recognizer, one backend at a time."""
    model = models.build_model(models.recognizer_spec(16), 0)
    x = np.random.default_rng(1).uniform(size=(3, 32, 32))

    def step():
        acts = nn.model_forward_collect(model, x)
        _, g = nn.softmax_cross_entropy(acts[-1], 3)
        nn.model_backward(model, acts, g)

    out = {}
    saved = kernels.im2col, kernels.col2im
    try:
        for name, mod in backends().items():
            kernels.im2col, kernels.col2im = mod.im2col, mod.col2im
            out[name] = min(timeit.repeat(step, number=repeat, repeat=3)) / repeat * 1e3
    finally:
        kernels.im2col, kernels.col2im = saved
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'shape':>14} {'backend':>8} {'im2col us':>10} {'col2im us':>10}")
    for shape, name, a, b in bench_kernels(args.repeat):
        print(f"{str(shape):>14} {name:>8} {a:10.1f} {b:10.1f}")
    for name, ms in bench_network(max(1, args.repeat // 4)).items():
        print(f"network fwd+bwd {name:>8}: {ms:.2f} ms/sample")


if __name__ == "__main__":
    main()
