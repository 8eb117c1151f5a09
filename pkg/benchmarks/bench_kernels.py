"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per (kernel, backend) with the best-of-N time per call and the
speedup of the compiled backend. Outputs of both backends are checked to agree
before timing.
"""
import argparse
import timeit

import numpy as np

from tro_opt import kernels


def simplex_case(rng):
    return (rng.normal(size=50),)


def brandes_case(rng, n=60, p=0.08):
    adj = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                adj[i].append(j)
                adj[j].append(i)
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in adj])
    indices = np.array([j for a in adj for j in a], dtype=np.int64)
    mask = np.triu(np.ones((n, n), dtype=np.uint8), 1)
    return indptr, indices, mask


def mlp_case(rng, n=32, d=5, h=16):
    theta = rng.normal(scale=0.3, size=d * h + h + h + 1)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.5).astype(float)
    return theta, X, y, h, kernels.ACT_TANH, kernels.LOSS_LOGISTIC


def linear_case(rng, n=32, d=5):
    X = rng.normal(size=(n, d))
    return rng.normal(size=d + 1), X, rng.normal(size=n), 0, kernels.ACT_TANH, kernels.LOSS_SQUARED


CASES = {
    "project_simplex(m=50)": ("project_simplex", simplex_case),
    "brandes(n=60)": ("brandes", brandes_case),
    "loss_grad mlp(32x5, h=16)": ("loss_grad", mlp_case),
    "loss_grad linear(32x5)": ("loss_grad", linear_case),
}


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'backend':9s} {'us/call':>10s} {'speedup':>8s}")
    for label, (fname, make) in CASES.items():
        case = make(rng)
        outs = {name: getattr(mod, fname)(*case) for name, mod in backends.items()}
        if "compiled" in outs and not _agree(outs["python"], outs["compiled"]):
            raise SystemExit(f"{label}: backends disagree")
        times = {}
        for name, mod in backends.items():
            fn = getattr(mod, fname)
            timer = timeit.Timer(lambda fn=fn: fn(*case))
            number, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, number)) / number * 1e6
        for name, us in times.items():
            speed = f"{times['python'] / us:7.1f}x" if name == "compiled" else ""
            print(f"{label:28s} {name:9s} {us:10.1f} {speed:>8s}")


if __name__ == "__main__":
    main()
