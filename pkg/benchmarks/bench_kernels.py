"""Compiled vs pure-Python slot kernels.

    python3 benchmarks/bench_kernels.py [--servers 15] [--devices 15] [--repeat 200]

Times the two kernels on arguments captured from a live environment, then a
full environment slot, on each available backend.
"""
import argparse
import timeit

import numpy as np

from tgoffload import kernels
from tgoffload.config import EnvConfig
from tgoffload.env import HybridAction, MecEnv


def capture(cfg, seed=0):
    """Arguments of one rank_pairs and one resolve_slot call from a real slot."""
    seen = {}
    real = {name: getattr(kernels, name) for name in ("rank_pairs", "resolve_slot")}

    def spy(name):
        def f(*args):
            seen.setdefault(name, tuple(np.copy(a) if isinstance(a, np.ndarray) else a for a in args))
            return real[name](*args)
        return f
    for name in real:
        setattr(kernels, name, spy(name))
    try:
        env = MecEnv(cfg, seed)
        env.reset(0)
        pairs = env.pairs()
        rng = np.random.default_rng(seed)
        acts = [HybridAction(np.eye(3)[rng.integers(3)], rng.uniform(), cfg.power_max_w)
                for _ in range(cfg.n_devices)]
        env.step(acts, pairs)
    finally:
        for name, fn in real.items():
            setattr(kernels, name, fn)
    return seen, acts


def fresh(args):
    return tuple(np.copy(a) if isinstance(a, np.ndarray) else a for a in args)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--servers", type=int, default=15)
    ap.add_argument("--devices", type=int, default=15)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    cfg = EnvConfig(n_servers=args.servers, n_devices=args.devices)
    seen, acts = capture(cfg)
    env = MecEnv(cfg, 0)
    results = {}
    print(f"servers={args.servers} devices={args.devices} repeat={args.repeat}")
    for backend in kernels.available():
        kernels.use_backend(backend)
        row = {}
        for name in ("rank_pairs", "resolve_slot"):
            fn = getattr(kernels, name)
            a = seen[name]
            row[name] = min(timeit.repeat(lambda: fn(*fresh(a)), number=args.repeat, repeat=3)) / args.repeat

        def slot():
            env.reset(0)
            env.step(acts, env.pairs())
        row["env slot"] = min(timeit.repeat(slot, number=max(args.repeat // 10, 1), repeat=3)) / max(args.repeat // 10, 1)
        results[backend] = row
    names = list(next(iter(results.values())))
    print(f"{'':14s}" + "".join(f"{b:>14s}" for b in results) + ("      speedup" if len(results) == 2 else ""))
    for n in names:
        line = f"{n:14s}" + "".join(f"{results[b][n] * 1e6:12.1f}us" for b in results)
        if len(results) == 2:
            line += f"{results['python'][n] / results['compiled'][n]:12.1f}x"
        print(line)
    if len(results) == 1:
        print("compiled extension not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
