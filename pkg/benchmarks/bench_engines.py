"""Throughput comparison of the compiled replica kernel vs the Python twin.

Runs identical seeded workloads through both engines (outputs are checked to
be bit-equal) and reports replicas/s and the speedup. Usage:

    python benchmarks/bench_engines.py [--replicas N]
"""

import argparse
import math
import time

import numpy as np

from superbbm import sim
from superbbm._engine import get_engine
from superbbm.mechanism import BranchingMechanism, JumpMeasure

WORKLOADS = {
    "exit-mass (rho=1.5, quadratic)": dict(
        mechanism=BranchingMechanism(alpha=1.0, beta=1.0),
        rho=1.5, barrier=0.0, x0=1.0, t_max=math.inf, checkpoints=(),
    ),
    "extinction to t=6 (rho=0.5, quadratic)": dict(
        mechanism=BranchingMechanism(alpha=1.0, beta=1.0),
        rho=0.5, barrier=0.0, x0=1.0, t_max=6.0, checkpoints=(),
    ),
    "checkpointed spread (rho=0.5, atom+gamma)": dict(
        mechanism=BranchingMechanism(
            alpha=1.0, beta=0.5,
            pi=JumpMeasure(atoms=((1.0, 1.0),), gamma_components=((0.5, 1, 2.0),))),
        rho=0.5, barrier=0.0, x0=1.0, t_max=5.0, checkpoints=(2.5, 5.0),
    ),
}


def run(engine, args_dict, n, seed):
    bg = np.random.PCG64(np.random.SeedSequence(seed))
    t0 = time.perf_counter()
    out = engine.simulate_chunk(bg, n, **args_dict)
    return time.perf_counter() - t0, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicas", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=12345)
    opts = ap.parse_args()

    try:
        compiled = get_engine("compiled")
    except ImportError:
        print("compiled kernel not built; nothing to compare")
        return
    fallback = get_engine("python")

    print(f"{'workload':44s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, cfg_kw in WORKLOADS.items():
        cfg = sim.SimConfig(particle_event_cap=10**6, **cfg_kw)
        args = sim._kernel_args(cfg)
        t_py, out_py = run(fallback, args, opts.replicas, opts.seed)
        t_c, out_c = run(compiled, args, opts.replicas, opts.seed)
        for a, b in zip(out_py, out_c):
            assert np.array_equal(a, b, equal_nan=True), "engines disagree"
        print(f"{name:44s} {opts.replicas / t_py:>8.0f}/s {opts.replicas / t_c:>8.0f}/s "
              f"{t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
