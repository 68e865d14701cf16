"""End-to-end verification suite binding all modules.

Each check verifies one quantitative law at desk scale and reports
pass/fail with the measured value, target and tolerance. Checks are
deterministic given the master seed: per-check seeds are derived by hashing
(check name, master seed), so reordering or filtering the suite does not
change any individual result.

Two checks are expected to fail honestly at desk scale and say so in their
detail text: the absolute speed-law bands (the right-most point lags the
asymptote by ~(3/(2 sqrt(2 alpha))) log t / t, which at t = 20..30 exceeds
the 5-7% bands; the incremental front speed, which cancels the offset, is
verified instead and passes) and the plug-in tail bracket at thresholds
n <= 100 (the 1/(n (log n)^2) law carries log-scale corrections that have
not set in there; the band-plus-trend probes of the same asymptotic pass).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import backbone, exit_analysis, sim, waves
from .mechanism import (
    BranchingMechanism,
    JumpMeasure,
    find_lambda_star,
)

__all__ = ["CheckResult", "VerifyReport", "run_verify_suite", "CHECK_NAMES", "format_g17"]

QUADRATIC = BranchingMechanism(alpha=1.0, beta=1.0)
ATOM = BranchingMechanism(alpha=1.0, beta=0.0, pi=JumpMeasure(atoms=((1.0, 2.0),)))
CRITICAL_HALF = BranchingMechanism(alpha=0.5, beta=0.5)  # sqrt(2 alpha) = 1
RHO_AZ = 5.0 / (2.0 * math.sqrt(3.0))
ROOT2 = math.sqrt(2.0)


def derive_seed(master_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def format_g17(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skip"
    measured: float | None = None
    target: float | None = None
    tolerance: float | None = None
    detail: str = ""
    runtime_s: float = 0.0

    def as_dict(self):
        return {
            "name": self.name,
            "status": self.status,
            "measured": None if self.measured is None else format_g17(float(self.measured)),
            "target": None if self.target is None else format_g17(float(self.target)),
            "tolerance": None if self.tolerance is None else format_g17(float(self.tolerance)),
            "detail": self.detail,
            "runtime_s": format_g17(round(self.runtime_s, 3)),
        }


@dataclass
class VerifyReport:
    master_seed: int
    results: list = field(default_factory=list)

    @property
    def overall(self) -> str:
        return "fail" if any(r.status == "fail" for r in self.results) else "pass"

    def as_json(self) -> str:
        payload = {
            "master_seed": self.master_seed,
            "overall": self.overall,
            "checks": [r.as_dict() for r in self.results],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def as_table(self) -> str:
        lines = [f"{'check':34s} {'status':6s} {'measured':>24s} {'target':>24s}"]
        for r in self.results:
            m = "" if r.measured is None else format_g17(float(r.measured))
            t = "" if r.target is None else format_g17(float(r.target))
            lines.append(f"{r.name:34s} {r.status:6s} {m:>24s} {t:>24s}")
        lines.append(f"overall: {self.overall}")
        return "\n".join(lines)

    def as_csv(self) -> str:
        import csv as _csv
        import io as _io

        buf = _io.StringIO()
        writer = _csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "status", "measured", "target", "tolerance",
                         "runtime_s", "detail"])
        for r in self.results:
            row = r.as_dict()
            writer.writerow([row["name"], row["status"], row["measured"] or "",
                             row["target"] or "", row["tolerance"] or "",
                             row["runtime_s"], row["detail"]])
        writer.writerow(["overall", self.overall, "", "", "", "", ""])
        return buf.getvalue()


def _subchecks(entries):
    """Aggregate (label, ok, text) triples into status plus detail string."""
    ok = all(e[1] for e in entries)
    detail = "; ".join(f"{label}: {'ok' if good else 'FAIL'} ({text})"
                       for label, good, text in entries)
    return ("pass" if ok else "fail"), detail


# -- the checks -----------------------------------------------------------------


def check_mechanism_algebra(seed, threads):
    ls_q = find_lambda_star(QUADRATIC)
    law_q = backbone.offspring_pmf(QUADRATIC, ls_q)
    ls_a = find_lambda_star(ATOM)
    law_a = backbone.offspring_pmf(ATOM, ls_a)
    from scipy.optimize import brentq
    oracle = brentq(lambda l: l - 2.0 + 2.0 * math.exp(-l), 0.5, 5.0,
                    xtol=1e-15, rtol=8.9e-16)
    entries = [
        ("quadratic lambda*", abs(ls_q.value - 1.0) <= 1e-10, format_g17(ls_q.value)),
        ("quadratic q", abs(ls_q.psi_prime_at - 1.0) <= 1e-10, format_g17(ls_q.psi_prime_at)),
        ("quadratic p2", abs(law_q.pmf[0] - 1.0) <= 1e-10, format_g17(float(law_q.pmf[0]))),
        ("atom lambda* vs bisection oracle", abs(ls_a.value - oracle) <= 1e-10 * oracle,
         format_g17(ls_a.value)),
        ("atom pmf normalization", abs(law_a.pmf.sum() + law_a.tail_mass - 1.0) <= 1e-10,
         format_g17(float(law_a.pmf.sum()))),
    ]
    status, detail = _subchecks(entries)
    return CheckResult("01-mechanism-algebra", status,
                       measured=ls_a.value, target=oracle, tolerance=1e-10, detail=detail)


def check_mean_identity(seed, threads):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(25):
        alpha = rng.uniform(0.3, 3.0)
        beta = rng.uniform(0.1, 2.0) if rng.random() < 0.7 else 0.0
        atoms = tuple((rng.uniform(0.2, 3.0), rng.uniform(0.1, 3.0))
                      for _ in range(rng.integers(0, 3)))
        gammas = tuple((rng.uniform(0.1, 2.0), int(rng.integers(0, 3)), rng.uniform(0.5, 3.0))
                       for _ in range(rng.integers(0, 2)))
        pi = JumpMeasure(atoms, gammas)
        if beta == 0.0 and pi.mean() <= alpha:
            beta = 1.0
        mech = BranchingMechanism(alpha=alpha, beta=beta, pi=pi)
        law = backbone.offspring_pmf(mech, find_lambda_star(mech))
        worst = max(worst, abs(backbone.mean_identity_residual(law, alpha)) / alpha)
    status = "pass" if worst <= 1e-8 else "fail"
    return CheckResult("02-mean-identity", status, measured=worst, target=0.0,
                       tolerance=1e-8, detail="max |q(m-1)-alpha|/alpha over 25 mechanisms")


def check_wave_dichotomy(seed, threads):
    ls = find_lambda_star(QUADRATIC)
    entries = []
    for rho in (0.0, 0.5, 1.0, 1.40):
        prof = waves.solve_phi(QUADRATIC, ls, rho=rho)
        ok = isinstance(prof, waves.WaveProfile) and prof.residual_sup <= 1e-6 \
            and bool(np.all(np.diff(prof.values) >= -1e-12))
        entries.append((f"wave at rho={rho}", ok,
                        f"residual {format_g17(getattr(prof, 'residual_sup', math.nan))}"))
    for rho in (ROOT2, 1.5, 2.0):
        out = waves.solve_phi(QUADRATIC, ls, rho=rho)
        entries.append((f"no wave at rho={format_g17(rho)}", isinstance(out, waves.NoWave),
                        type(out).__name__))
    forced = waves.solve_phi(QUADRATIC, ls, rho=1.5, force_shooting=True)
    entries.append(("forced shooting fails to bracket", isinstance(forced, waves.NoWave),
                    getattr(forced, "reason", "wave returned")))
    p1 = waves.solve_phi(QUADRATIC, ls, rho=0.5, step=1e-3, rtol=1e-11)
    p2 = waves.solve_phi(QUADRATIC, ls, rho=0.5, step=5e-4, rtol=1e-12)
    diff = float(np.max(np.abs(p1.values - np.interp(p1.grid, p2.grid, p2.values))))
    entries.append(("two-discretization uniqueness", diff <= 1e-5, format_g17(diff)))
    status, detail = _subchecks(entries)
    return CheckResult("03-wave-dichotomy", status, measured=diff, target=0.0,
                       tolerance=1e-5, detail=detail)


def check_wave_exact_oracle(seed, threads):
    ls = find_lambda_star(QUADRATIC)
    prof = waves.solve_psi_wave(QUADRATIC, ls, rho=RHO_AZ)
    c = ROOT2 - 1.0
    exact = (1.0 + c * np.exp(prof.grid / math.sqrt(3.0))) ** (-2.0)
    sup = float(np.max(np.abs(prof.values - exact)))
    curve = waves.derive_psi_d(prof)
    lam = np.linspace(0.001, 0.999, 500)
    exact_pd = -(2.0 / math.sqrt(3.0)) * (lam - lam**1.5)
    sup_pd = float(np.max(np.abs(curve.psi(lam) - exact_pd)))
    entries = [
        ("wave vs closed form", sup <= 1e-6, format_g17(sup)),
        ("exit mechanism vs closed form", sup_pd <= 1e-5, format_g17(sup_pd)),
    ]
    status, detail = _subchecks(entries)
    return CheckResult("04-wave-exact-oracle", status, measured=sup, target=0.0,
                       tolerance=1e-6, detail=detail)


def check_decay_rate(seed, threads):
    ls = find_lambda_star(QUADRATIC)
    entries = []
    worst = 0.0
    for rho in (0.0, 0.5, 1.0):
        prof = waves.solve_phi(QUADRATIC, ls, rho=rho)
        expected = waves.expected_phi_decay_rate(ls, rho)
        fit = waves.fit_decay_rate(prof)
        rel = abs(fit.rate - expected) / expected
        worst = max(worst, rel)
        entries.append((f"rho={rho}", rel <= 0.02,
                        f"rate {format_g17(fit.rate)} vs {format_g17(expected)}"))
    status, detail = _subchecks(entries)
    return CheckResult("05-decay-rate", status, measured=worst, target=0.0,
                       tolerance=0.02, detail=detail)


def _speed_leg(rho, horizons, target_t, target_speed, band, n_rep, seed, threads):
    """Measure R_t/t at feasible horizons, extrapolate through the
    logarithmic front-lag model, and judge the stated band at target_t."""
    lag = 3.0 / (2.0 * ROOT2)
    cfg = sim.SimConfig(mechanism=QUADRATIC, rho=rho, barrier=0.0, x0=1.0,
                        particle_event_cap=2 * 10**7)
    measured = []
    offsets = []
    for i, t in enumerate(horizons):
        est = sim.estimate_speed(cfg, t, n_rep, master_seed=seed + i, threads=threads,
                                 enforce_preconditions=False)
        measured.append((t, est.mean_speed, est.std_error))
        offsets.append(est.mean_speed * t - (target_speed * t - lag * math.log(t)))
    c_hat = float(np.mean(offsets))
    extrapolated = (target_speed * target_t - lag * math.log(target_t) + c_hat) / target_t
    inside = band[0] <= extrapolated <= band[1]
    t1, m1, s1 = measured[0]
    t2, m2, s2 = measured[-1]
    incr = (m2 * t2 - m1 * t1) / (t2 - t1)
    incr_pred = target_speed - lag * (math.log(t2) - math.log(t1)) / (t2 - t1)
    incr_se = math.hypot(s1 * t1, s2 * t2) / (t2 - t1)
    incr_ok = abs(incr - incr_pred) <= 3 * incr_se + 0.05
    pts = ", ".join(f"R/t({format_g17(t)})={format_g17(m)}" for t, m, _ in measured)
    detail = (f"{pts}; extrapolated R/t at t={format_g17(target_t)} is "
              f"{format_g17(extrapolated)} vs band [{format_g17(band[0])}, "
              f"{format_g17(band[1])}] (front lag ~{format_g17(lag)}*log(t)/t); "
              f"incremental speed {format_g17(incr)} vs {format_g17(incr_pred)} "
              f"({'ok' if incr_ok else 'FAIL'})")
    return inside and incr_ok, extrapolated, detail


def check_speed_law(seed, threads):
    ok0, ex0, d0 = _speed_leg(0.0, (8.0, 10.0, 12.0), 20.0, ROOT2,
                              (0.95 * ROOT2, 1.05 * ROOT2), 300, seed, threads)
    ok1, ex1, d1 = _speed_leg(1.0, (10.0, 14.0, 18.0), 30.0, ROOT2 - 1.0,
                              (0.93 * (ROOT2 - 1.0), 1.07 * (ROOT2 - 1.0)), 500,
                              seed + 1000, threads)
    status = "pass" if (ok0 and ok1) else "fail"
    detail = (f"rho=0 leg: {d0} | rho=1 leg: {d1} | the absolute bands are not "
              f"reachable at these horizons because of the logarithmic front "
              f"lag; the incremental-speed model checks inside each leg "
              f"validate the simulator itself")
    return CheckResult("06-speed-law", status, measured=ex0, target=ROOT2,
                       tolerance=0.05 * ROOT2, detail=detail)


def check_extinction_identity(seed, threads):
    ls = find_lambda_star(QUADRATIC)
    prof = waves.solve_phi(QUADRATIC, ls, rho=0.5)
    entries = []
    worst = 0.0
    for i, x in enumerate((0.5, 1.0, 2.0)):
        pred = 1.0 - float(np.interp(x, prof.grid, prof.values)) / ls.value
        cfg = sim.SimConfig(mechanism=QUADRATIC, rho=0.5, barrier=0.0, x0=x,
                            t_max=10.0, particle_event_cap=2 * 10**7)
        est = sim.estimate_extinction(cfg, 10_000, master_seed=seed + i, threads=threads)
        dev = abs(est.p_hat - pred) / est.std_error
        worst = max(worst, dev)
        entries.append((f"x={x}", dev <= 3.0,
                        f"mc {format_g17(est.p_hat)} vs wave {format_g17(pred)}, "
                        f"{format_g17(dev)} se"))
    status, detail = _subchecks(entries)
    return CheckResult("07-extinction-identity", status, measured=worst, target=0.0,
                       tolerance=3.0, detail=detail)


def check_poisson_embedding(seed, threads):
    from scipy.stats import chisquare, poisson
    ls = find_lambda_star(QUADRATIC)
    cfg = sim.SimConfig(mechanism=QUADRATIC, rho=0.5, barrier=0.0, x0=1.0,
                        initial="poisson", t_max=0.0, particle_event_cap=10**5)
    batch = sim.run_replicas(cfg, 100_000, master_seed=seed, threads=threads)
    counts = np.bincount(batch.initial_count)
    kmax = len(counts) - 1
    expected = np.array([poisson.pmf(k, ls.value) for k in range(kmax + 1)])
    obs = counts.astype(float)
    exp_c = expected * batch.initial_count.size
    while exp_c[-1] < 5:
        exp_c[-2] += exp_c[-1]
        obs[-2] += obs[-1]
        exp_c, obs = exp_c[:-1], obs[:-1]
    _stat, pval = chisquare(obs, exp_c * obs.sum() / exp_c.sum())
    status = "pass" if pval > 0.01 else "fail"
    return CheckResult("08-poisson-embedding", status, measured=float(pval), target=1.0,
                       tolerance=0.01, detail="chi-square p-value of ||Z_0|| vs "
                       "Poisson(lambda*) over 1e5 replicas")


def check_poissonization_identity(seed, threads):
    ls = find_lambda_star(QUADRATIC)
    prof = waves.solve_psi_wave(QUADRATIC, ls, rho=RHO_AZ)
    curve = waves.derive_psi_d(prof)
    f_d = exit_analysis.generator_curve(curve)
    s = np.linspace(0.01, 0.99, 50)
    worst = 0.0
    entries = []
    for z in (0.5, 1.0, 2.0):
        res = exit_analysis.poissonization_residual(curve, f_d, z, s)
        worst = max(worst, res)
        entries.append((f"z={z}", res <= 1e-5, format_g17(res)))
    status, detail = _subchecks(entries)
    return CheckResult("09-poissonization-identity", status, measured=worst, target=0.0,
                       tolerance=1e-5, detail=detail)


def check_tail_asymptotics(seed, threads):
    ls = find_lambda_star(CRITICAL_HALF)
    curve = waves.exit_mechanism_curve(CRITICAL_HALF, ls, rho=1.0)
    f_d = exit_analysis.generator_curve(curve)
    entries = []

    # growth-factor companion: the 2% band needs the log correction
    # z*sqrt(2a)/log(1/s) below 0.02, hence the small depth z = 0.25
    probe_f1 = exit_analysis.tail_ratio(f_d, 0.25, np.array([1e-6]), alpha=0.5)
    f1r = float(probe_f1.f1_ratio[0])
    entries.append(("F1(1-1e-6)/e^{z sqrt(2a)} at z=0.25", abs(f1r - 1.0) <= 0.02,
                    format_g17(f1r)))
    probe_f1_deep = exit_analysis.tail_ratio(f_d, 1.0, np.array([1e-6]), alpha=0.5)
    entries.append(("same ratio at z=1 (log-lag diagnostic, not gated)", True,
                    format_g17(float(probe_f1_deep.f1_ratio[0]))))

    probe = exit_analysis.tail_ratio(f_d, 1.0, np.array([1e-4, 1e-8]), alpha=0.5)
    r4, r8 = (float(v) for v in probe.ratios)
    entries.append(("tail ratio r(1e-8) in [0.5, 2] at z=1", 0.5 <= r8 <= 2.0, format_g17(r8)))
    entries.append(("|r(1e-8)-1| < |r(1e-4)-1|", abs(r8 - 1) < abs(r4 - 1),
                    f"{format_g17(abs(r8 - 1))} vs {format_g17(abs(r4 - 1))}"))

    cfg = sim.SimConfig(mechanism=CRITICAL_HALF, rho=1.0, barrier=0.0, x0=1.0,
                        particle_event_cap=10**6)
    tally = sim.sample_exit_mass(cfg, 200_000, master_seed=seed, threads=threads)
    comp = exit_analysis.empirical_tail(tally, [10, 20, 50, 100], alpha=0.5, x=1.0, z=0.0)
    inside = [(int(n), bool(lo <= p <= hi)) for n, lo, hi, p in
              zip(comp.thresholds, comp.ci_low, comp.ci_high, comp.predicted)]
    bracket_ok = all(b for _, b in inside)
    ratios = comp.empirical * comp.thresholds * np.log(comp.thresholds) ** 2 / \
        (math.sqrt(1.0) * 1.0 * math.exp(1.0))
    trend_ok = bool(abs(ratios[-1] - 1.0) < abs(ratios[0] - 1.0))
    entries.append((
        "plug-in prediction inside Wilson CIs at n<=100", bracket_ok,
        "; ".join(f"n={n} {'in' if b else 'out'}" for n, b in inside)
        + f"; the first-order tail law has log-scale corrections still ~30% here,"
          f" the normalized empirical ratio rises {format_g17(float(ratios[0]))} ->"
          f" {format_g17(float(ratios[-1]))} toward 1 ({'ok' if trend_ok else 'no trend'})"))
    status, detail = _subchecks(entries)
    return CheckResult("10-tail-asymptotics", status, measured=r8, target=1.0,
                       tolerance=1.0, detail=detail)


def check_flow_properties(seed, threads):
    ls = find_lambda_star(QUADRATIC)
    prof = waves.solve_psi_wave(QUADRATIC, ls, rho=RHO_AZ)
    curve = waves.derive_psi_d(prof)
    f_d = exit_analysis.generator_curve(curve)
    s = np.linspace(0.01, 0.99, 25)
    inner = exit_analysis.evolve_gen_fn(f_d, 0.7, s)
    outer = exit_analysis.evolve_gen_fn(f_d, 0.5, inner.F)
    direct = exit_analysis.evolve_gen_fn(f_d, 1.2, s)
    pgf_dev = float(np.max(np.abs(outer.F - direct.F)))
    th = np.linspace(0.05, 0.95, 10)
    u_inner = exit_analysis.evolve_laplace_exponent(curve, 0.7, th)
    u_outer = exit_analysis.evolve_laplace_exponent(curve, 0.5, u_inner)
    u_direct = exit_analysis.evolve_laplace_exponent(curve, 1.2, th)
    u_dev = float(np.max(np.abs(u_outer - u_direct)))
    entries = [
        ("pgf semigroup", pgf_dev <= 1e-7, format_g17(pgf_dev)),
        ("laplace semigroup", u_dev <= 1e-7, format_g17(u_dev)),
    ]
    status, detail = _subchecks(entries)
    return CheckResult("11-flow-properties", status, measured=max(pgf_dev, u_dev),
                       target=0.0, tolerance=1e-7, detail=detail)


def _determinism_fingerprint(seed, threads):
    cfg = sim.SimConfig(mechanism=QUADRATIC, rho=0.5, barrier=0.0, x0=1.0,
                        t_max=4.0, checkpoints=(2.0, 4.0), particle_event_cap=10**6)
    batch = sim.run_replicas(cfg, 2000, master_seed=seed, threads=threads)
    tally = sim.sample_exit_mass(
        sim.SimConfig(mechanism=QUADRATIC, rho=1.5, barrier=0.0, x0=1.0,
                      particle_event_cap=10**6), 2000, master_seed=seed + 1,
        threads=threads)
    payload = {
        "extinct": batch.extinct.astype(int).tolist(),
        "rightmost": [[format_g17(float(v)) for v in row] for row in batch.rightmost[:50]],
        "counts": tally.counts.tolist(),
    }
    return json.dumps(payload, sort_keys=True).encode()


def check_determinism(seed, threads):
    a = _determinism_fingerprint(seed, threads)
    b = _determinism_fingerprint(seed, max(threads, 2))
    status = "pass" if a == b else "fail"
    return CheckResult("12-determinism", status, measured=float(a == b), target=1.0,
                       tolerance=0.0, detail="byte-identical replica fingerprints across "
                       "repeated runs and thread counts")


CHECKS = [
    ("01-mechanism-algebra", check_mechanism_algebra),
    ("02-mean-identity", check_mean_identity),
    ("03-wave-dichotomy", check_wave_dichotomy),
    ("04-wave-exact-oracle", check_wave_exact_oracle),
    ("05-decay-rate", check_decay_rate),
    ("06-speed-law", check_speed_law),
    ("07-extinction-identity", check_extinction_identity),
    ("08-poisson-embedding", check_poisson_embedding),
    ("09-poissonization-identity", check_poissonization_identity),
    ("10-tail-asymptotics", check_tail_asymptotics),
    ("11-flow-properties", check_flow_properties),
    ("12-determinism", check_determinism),
]

CHECK_NAMES = [name for name, _ in CHECKS]


def run_verify_suite(master_seed: int = 20240801, checks=None, threads: int = 2,
                     progress=None) -> VerifyReport:
    """Run the acceptance checks; individual crashes become failed entries."""
    report = VerifyReport(master_seed=master_seed)
    wanted = set(checks) if checks else None
    for name, fn in CHECKS:
        if wanted is not None and name not in wanted:
            report.results.append(CheckResult(name, "skip", detail="filtered out"))
            continue
        t0 = time.time()
        try:
            result = fn(derive_seed(master_seed, name), threads)
        except Exception as exc:  # never abort the suite on one check
            result = CheckResult(name, "fail", detail=f"crashed: {exc!r}")
        result.runtime_s = time.time() - t0
        report.results.append(result)
        if progress is not None:
            progress(result)
    return report
