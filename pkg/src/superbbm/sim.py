"""Event-driven Monte Carlo of the skeleton BBM with drift -rho and absorption.

Replicas are exact in law: particle lifetimes are exponential(q) clocks split
at checkpoints by memorylessness, spatial advances sample the drifted
Gaussian endpoint, and in-segment absorption is decided by the exact
Brownian-bridge crossing Bernoulli, so no time-discretization bias enters.
Replicas are independent and are simulated in fixed-size chunks, each chunk
on its own deterministically spawned PCG64 stream; results are therefore
bit-reproducible for a given master seed regardless of thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backbone
from ._engine import simulate_chunk
from .errors import NoSurvivorsError
from .mechanism import BranchingMechanism, find_lambda_star

__all__ = [
    "SimConfig",
    "SimOutcome",
    "ReplicaBatch",
    "SpeedEstimate",
    "ExtinctionEstimate",
    "ExitTally",
    "run_replica",
    "run_replicas",
    "estimate_speed",
    "estimate_extinction",
    "sample_exit_mass",
    "build_alias_table",
    "wilson_interval",
]

CHUNK_SIZE = 1024  # replicas per RNG stream; fixed so threading cannot reorder draws


@dataclass(frozen=True)
class SimConfig:
    """One replica family: mechanism, drift, barrier, initial state, horizon.

    initial is "single" (one ancestor at x0) or "poisson" (a Poisson(lambda*)
    number of ancestors at x0, the embedding law of the skeleton inside the
    mass process). barrier=-inf disables absorption. checkpoints are the
    times at which the right-most alive position is recorded.
    """

    mechanism: BranchingMechanism
    rho: float
    barrier: float = 0.0
    initial: str = "single"
    x0: float = 1.0
    t_max: float = math.inf
    checkpoints: tuple = ()
    particle_event_cap: int = 10_000_000
    n_max: int = 4096
    delta_tail: float = 1e-12

    def __post_init__(self):
        if self.initial not in ("single", "poisson"):
            raise ValueError("initial must be 'single' or 'poisson'")
        if not self.x0 >= self.barrier:
            raise ValueError("initial position must not lie below the barrier")
        cps = tuple(float(c) for c in self.checkpoints)
        if any(c < 0 or c > self.t_max for c in cps) or list(cps) != sorted(cps):
            raise ValueError("checkpoints must be sorted within [0, t_max]")
        object.__setattr__(self, "checkpoints", cps)
        if self.particle_event_cap < 1:
            raise ValueError("particle_event_cap must be positive")
        if not math.isfinite(self.t_max) and self.t_max != math.inf:
            raise ValueError("t_max must be finite or +inf")


@dataclass(frozen=True)
class SimOutcome:
    """Per-replica record: extinction flag, right-most positions at the
    checkpoints (None once the population is gone), absorbed count, flags."""

    extinct: bool
    rightmost: tuple
    absorbed_count: int
    capped: bool
    initial_count: int


@dataclass
class ReplicaBatch:
    """Struct-of-arrays view over many replicas (what the estimators consume)."""

    checkpoints: tuple
    extinct: np.ndarray
    absorbed: np.ndarray
    capped: np.ndarray
    initial_count: np.ndarray
    final_population: np.ndarray  # particles alive at t_max
    rightmost: np.ndarray  # (n, n_checkpoints), NaN where nobody was alive

    def outcome(self, i: int) -> SimOutcome:
        rs = tuple(
            (cp, None if math.isnan(r) else float(r))
            for cp, r in zip(self.checkpoints, self.rightmost[i])
        )
        return SimOutcome(
            extinct=bool(self.extinct[i]),
            rightmost=rs,
            absorbed_count=int(self.absorbed[i]),
            capped=bool(self.capped[i]),
            initial_count=int(self.initial_count[i]),
        )


def build_alias_table(law: backbone.OffspringLaw):
    """Walker alias table over the truncated pmf; the tail mass (<= delta_tail)
    is folded into the largest retained count."""
    p = law.pmf.copy()
    p[-1] += law.tail_mass
    p = p / p.sum()
    n = len(p)
    prob = np.zeros(n, dtype=np.float64)
    alias = np.zeros(n, dtype=np.int64)
    scaled = p * n
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] - (1.0 - scaled[s])
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    for i in large:
        prob[i] = 1.0
    for i in small:
        prob[i] = 1.0
    return prob, alias, law.n_values.astype(np.int64)


def _kernel_args(config: SimConfig):
    mech = config.mechanism
    lstar = find_lambda_star(mech)
    law = backbone.offspring_pmf(mech, lstar, n_max=config.n_max,
                                 delta_tail=config.delta_tail)
    prob, alias, nvals = build_alias_table(law)
    has_barrier = math.isfinite(config.barrier)
    poisson_mean = lstar.value if config.initial == "poisson" else 0.0
    if law.q <= 0.0 and (not math.isfinite(config.t_max)):
        raise ValueError("non-branching runs need a finite horizon")
    return dict(
        q=law.q,
        rho=config.rho,
        barrier=config.barrier if has_barrier else -math.inf,
        has_barrier=has_barrier,
        x0=config.x0,
        poisson_mean=poisson_mean,
        t_max=config.t_max,
        checkpoints=np.asarray(config.checkpoints, dtype=np.float64),
        alias_prob=prob,
        alias_idx=alias,
        alias_n=nvals,
        event_cap=int(config.particle_event_cap),
    )


def _chunk_bitgen(master_seed: int, chunk_index: int):
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(chunk_index,))
    return np.random.PCG64(seq)


def run_replicas(config: SimConfig, n_replicas: int, master_seed: int,
                 threads: int = 1) -> ReplicaBatch:
    """Simulate n_replicas independent replicas, chunked and optionally threaded.

    The chunk partition is fixed (CHUNK_SIZE) and each chunk owns a stream
    spawned from (master_seed, chunk_index), so the result is identical for
    any thread count.
    """
    if n_replicas < 1:
        raise ValueError("n_replicas must be positive")
    args = _kernel_args(config)
    n_chunks = (n_replicas + CHUNK_SIZE - 1) // CHUNK_SIZE
    sizes = [min(CHUNK_SIZE, n_replicas - i * CHUNK_SIZE) for i in range(n_chunks)]

    def run_chunk(i):
        bg = _chunk_bitgen(master_seed, i)
        return simulate_chunk(bg, sizes[i], **args)

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, range(n_chunks)))
    else:
        parts = [run_chunk(i) for i in range(n_chunks)]

    extinct = np.concatenate([p[0] for p in parts]).astype(bool)
    absorbed = np.concatenate([p[1] for p in parts])
    capped = np.concatenate([p[2] for p in parts]).astype(bool)
    init_count = np.concatenate([p[3] for p in parts])
    final_pop = np.concatenate([p[4] for p in parts])
    rightmost = np.concatenate([p[5] for p in parts], axis=0)
    rightmost = np.where(np.isneginf(rightmost), np.nan, rightmost)
    return ReplicaBatch(
        checkpoints=config.checkpoints,
        extinct=extinct,
        absorbed=absorbed,
        capped=capped,
        initial_count=init_count,
        final_population=final_pop,
        rightmost=rightmost,
    )


def run_replica(config: SimConfig, seed: int) -> SimOutcome:
    """Single replica; deterministic given (seed, config)."""
    return run_replicas(config, 1, seed).outcome(0)


def wilson_interval(successes: int, n: int, z: float = 1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return (max(center - half, 0.0), min(center + half, 1.0))


@dataclass(frozen=True)
class SpeedEstimate:
    mean_speed: float
    std_error: float
    survival_fraction: float
    n_survivors: int
    capped_fraction: float


def estimate_speed(config: SimConfig, t: float, n_replicas: int, master_seed: int,
                   threads: int = 1, enforce_preconditions: bool = True) -> SpeedEstimate:
    """Conditional-on-survival sample mean of R_t/t.

    Valid in the subcritical-drift regime rho < sqrt(2 alpha); the default
    horizon check t >= 10/(sqrt(2 alpha)-rho) keeps the transient from
    dominating (it can be disabled for short diagnostic runs).
    """
    speed_limit = math.sqrt(2.0 * config.mechanism.alpha)
    if enforce_preconditions:
        if not config.rho < speed_limit:
            raise ValueError("speed estimation requires rho < sqrt(2 alpha)")
        if not t >= 10.0 / (speed_limit - config.rho):
            raise ValueError("horizon too short: need t >= 10/(sqrt(2 alpha) - rho)")
    cfg = SimConfig(
        mechanism=config.mechanism,
        rho=config.rho,
        barrier=config.barrier,
        initial=config.initial,
        x0=config.x0,
        t_max=t,
        checkpoints=tuple(sorted(set(config.checkpoints) | {t})),
        particle_event_cap=config.particle_event_cap,
        n_max=config.n_max,
        delta_tail=config.delta_tail,
    )
    batch = run_replicas(cfg, n_replicas, master_seed, threads)
    idx = cfg.checkpoints.index(t)
    r_t = batch.rightmost[:, idx]
    usable = ~batch.extinct & ~batch.capped & ~np.isnan(r_t)
    n_surv = int(np.count_nonzero(~batch.extinct))
    if not np.any(usable):
        raise NoSurvivorsError("no surviving replicas with a usable right-most value")
    speeds = r_t[usable] / t
    return SpeedEstimate(
        mean_speed=float(np.mean(speeds)),
        std_error=float(np.std(speeds, ddof=1) / math.sqrt(speeds.size)) if speeds.size > 1 else math.inf,
        survival_fraction=n_surv / n_replicas,
        n_survivors=n_surv,
        capped_fraction=float(np.mean(batch.capped)),
    )


@dataclass(frozen=True)
class ExtinctionEstimate:
    p_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    capped_fraction: float
    unreliable: bool


def estimate_extinction(config: SimConfig, n_replicas: int, master_seed: int,
                        threads: int = 1) -> ExtinctionEstimate:
    """Extinction frequency by t_max, with capped replicas counted as survivors
    (conservative direction; the run is flagged unreliable when capped
    replicas exceed 1%). Horizon adequacy is validated by horizon doubling in
    the test suite, not silently here."""
    if not math.isfinite(config.t_max):
        raise ValueError("extinction estimation needs a finite t_max")
    batch = run_replicas(config, n_replicas, master_seed, threads)
    k = int(np.count_nonzero(batch.extinct))
    p = k / n_replicas
    lo, hi = wilson_interval(k, n_replicas)
    capped_frac = float(np.mean(batch.capped))
    return ExtinctionEstimate(
        p_hat=p,
        std_error=math.sqrt(max(p * (1 - p), 1e-300) / n_replicas),
        ci_low=lo,
        ci_high=hi,
        capped_fraction=capped_frac,
        unreliable=capped_frac > 0.01,
    )


@dataclass(frozen=True)
class ExitTally:
    """Absorbed-particle counts per replica; censored marks capped replicas."""

    counts: np.ndarray
    censored: np.ndarray

    def pgf(self, s: float) -> float:
        """Empirical generating function mean(s^count) over uncensored replicas."""
        c = self.counts[~self.censored]
        return float(np.mean(np.power(float(s), c)))

    def survival(self, n: int) -> float:
        """Empirical P(count > n) over uncensored replicas."""
        c = self.counts[~self.censored]
        return float(np.mean(c > n))


def sample_exit_mass(config: SimConfig, n_replicas: int, master_seed: int,
                     threads: int = 1) -> ExitTally:
    """Run replicas to total absorption and tally the absorbed counts.

    Requires drift at or above the critical speed so absorption is certain;
    replicas that exceed the event cap are recorded as censored."""
    speed_limit = math.sqrt(2.0 * config.mechanism.alpha)
    if config.rho < speed_limit - 1e-12:
        raise ValueError("exit-mass sampling requires rho >= sqrt(2 alpha)")
    if not math.isfinite(config.barrier):
        raise ValueError("exit-mass sampling needs a finite barrier")
    cfg = SimConfig(
        mechanism=config.mechanism,
        rho=config.rho,
        barrier=config.barrier,
        initial=config.initial,
        x0=config.x0,
        t_max=math.inf,
        checkpoints=(),
        particle_event_cap=config.particle_event_cap,
        n_max=config.n_max,
        delta_tail=config.delta_tail,
    )
    batch = run_replicas(cfg, n_replicas, master_seed, threads)
    return ExitTally(counts=batch.absorbed.copy(), censored=batch.capped.copy())
