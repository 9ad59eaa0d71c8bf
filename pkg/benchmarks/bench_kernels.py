"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from spamtomo import _pykernels

try:
    from spamtomo import _ckernels
except ImportError:
    _ckernels = None

ROWS1, ROWS2 = np.arange(4), np.arange(4, 8)


def cases(rng):
    a, b, c, d = rng.normal(size=(4, 4, 4))
    stack = rng.uniform(-1, 1, size=(500, 8, 8))
    return {
        "det 4x4": lambda k: k.det(d),
        "cofactor 4x4": lambda k: k.cofactor(d),
        "nabla": lambda k: k.nabla(a, b, c, d),
        "nabla_block_jacobian": lambda k: k.nabla_block_jacobian(a, b, c, d),
        "nabla_batch (500 x 8x8)": lambda k: k.nabla_batch(stack, ROWS1, ROWS2, ROWS1, ROWS2),
    }


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the fallback only")
    header = f"{'kernel':<26}" + "".join(f"{name:>14}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, call in cases(np.random.default_rng(args.seed)).items():
        times = {name: best_time(lambda k=mod: call(k), args.repeat) for name, mod in backends.items()}
        line = f"{label:<26}" + "".join(f"{t * 1e6:>12.1f}us" for t in times.values())
        if len(times) == 2:
            line += f"{times['python'] / times['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
