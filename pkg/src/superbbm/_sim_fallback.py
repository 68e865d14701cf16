"""Pure-Python twin of the compiled replica kernel.

Consumes the random stream in exactly the same order as the compiled kernel:
one Poisson draw per replica in field mode, one standard exponential per
particle creation (when q > 0), one standard normal plus at most one uniform
per advance segment, and two uniforms per branch event. A chunk simulated
here is therefore bit-identical to the compiled result for the same seeded
bit generator; it is selected automatically when the extension is absent and
serves as the reference implementation in the engine-equality tests.
"""

from __future__ import annotations

import math

import numpy as np

ENGINE = "python"


def simulate_chunk(bit_generator, n_replicas, q, rho, barrier, has_barrier,
                   x0, poisson_mean, t_max, checkpoints,
                   alias_prob, alias_idx, alias_n, event_cap):
    rng = np.random.Generator(bit_generator)
    ncp = len(checkpoints)
    bounds = list(checkpoints) + [t_max]
    n_bounds = ncp + 1
    n_slots = len(alias_prob)

    extinct = np.zeros(n_replicas, dtype=np.uint8)
    absorbed = np.zeros(n_replicas, dtype=np.int64)
    capped = np.zeros(n_replicas, dtype=np.uint8)
    init_count = np.zeros(n_replicas, dtype=np.int64)
    final_pop = np.zeros(n_replicas, dtype=np.int64)
    rightmost = np.full((n_replicas, ncp), -np.inf, dtype=np.float64)

    for rep in range(n_replicas):
        if poisson_mean > 0.0:
            n0 = int(rng.poisson(poisson_mean))
        else:
            n0 = 1
        init_count[rep] = n0
        stack = []
        for _ in range(n0):
            tau = rng.standard_exponential() / q if q > 0.0 else math.inf
            stack.append((x0, 0.0, tau, 0))

        events = 0
        n_absorbed = 0
        survivors = 0
        hit_cap = False

        while stack and not hit_cap:
            x, t, tau, j = stack.pop()
            while True:
                events += 1
                if events > event_cap:
                    hit_cap = True
                    break
                dt_bound = bounds[j] - t
                branch = tau < dt_bound
                delta = tau if branch else dt_bound
                if delta > 0.0:
                    z = rng.standard_normal()
                    xe = x - rho * delta + math.sqrt(delta) * z
                    if has_barrier:
                        if xe <= barrier:
                            n_absorbed += 1
                            break
                        u = rng.random()
                        if u < math.exp(-2.0 * (x - barrier) * (xe - barrier) / delta):
                            n_absorbed += 1
                            break
                    x = xe
                if branch:
                    t += delta
                    u1 = rng.random()
                    k = int(u1 * n_slots)
                    if k >= n_slots:
                        k = n_slots - 1
                    u2 = rng.random()
                    n_off = int(alias_n[k]) if u2 < alias_prob[k] else int(alias_n[alias_idx[k]])
                    for _ in range(n_off):
                        tau_c = rng.standard_exponential() / q
                        stack.append((x, t, tau_c, j))
                    break
                t = bounds[j]
                if tau != math.inf:
                    tau -= delta
                if j < ncp:
                    if x > rightmost[rep, j]:
                        rightmost[rep, j] = x
                    j += 1
                    continue
                survivors += 1
                break

        absorbed[rep] = n_absorbed
        capped[rep] = 1 if hit_cap else 0
        extinct[rep] = 1 if (survivors == 0 and not hit_cap) else 0
        final_pop[rep] = survivors

    return extinct, absorbed, capped, init_count, final_pop, rightmost
