"""Skeleton branching law: rate, offspring pmf and the joint mass-mark kernel.

The skeleton of a supercritical mechanism branches at rate q = psi'(lambda*)
with generator F(r) = psi(lambda*(1-r))/lambda* and offspring/mark kernel

    p_n(dy) = [beta*lambda*^2 delta_0(dy) 1{n=2}
               + (lambda*)^n y^n/n! exp(-lambda* y) Pi(dy)] / (lambda* q),

supported on n >= 2. For atom/gamma jump measures every p_n and every
component mass is a gamma-function identity, evaluated here in log space so
the pmf stays accurate hundreds of terms deep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import SamplerDegenerateError, TruncationError
from .mechanism import BranchingMechanism, LambdaStar

__all__ = [
    "OffspringLaw",
    "BranchEvent",
    "branch_rate",
    "generator_f",
    "generator_from_pmf",
    "offspring_pmf",
    "sample_branch_event",
    "sample_conditioned_poisson",
    "mean_identity_residual",
    "offspring_log_moment",
]

# component kinds inside OffspringLaw.component_weights, in storage order
_KIND_BETA = 0
_KIND_ATOM = 1
_KIND_GAMMA = 2


@dataclass(frozen=True)
class BranchEvent:
    """One skeleton branch point: offspring count n >= 2 and the immigrated
    mass mark y >= 0 (y == 0 exactly when the event came from the beta term)."""

    n: int
    y: float


@dataclass(frozen=True)
class OffspringLaw:
    """Truncated offspring pmf of the skeleton plus joint-sampling metadata.

    pmf[i] is the probability of n_values[i] offspring; tail_mass is the
    cumulative mass beyond the truncation point. component_weights are the
    normalized masses of (beta term, each atom, each gamma component) used to
    factor the joint (n, y) draw as component -> y -> n | y.
    """

    q: float
    lstar: float
    n_values: np.ndarray
    pmf: np.ndarray
    tail_mass: float
    component_weights: np.ndarray
    component_kinds: tuple
    mechanism: BranchingMechanism

    @property
    def mean(self):
        """Offspring mean with the truncated tail counted at the first
        dropped value (the minimal tail placement, certifiable for the
        super-geometric tails of this law)."""
        n_next = self.n_values[-1] + 1
        return float(np.dot(self.n_values, self.pmf)) + self.tail_mass * n_next

    @property
    def mean_uncorrected(self):
        return float(np.dot(self.n_values, self.pmf))


def branch_rate(mech: BranchingMechanism, lstar: LambdaStar) -> float:
    """Skeleton branch rate q = psi'(lambda*)."""
    return float(mech.psi_prime(lstar.value))


def generator_f(mech: BranchingMechanism, lstar: LambdaStar, r) -> float:
    """Branching generator F(r) = psi(lambda*(1-r))/lambda* on [0, 1]."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < -1e-12) or np.any(r_arr > 1.0 + 1e-12):
        raise ValueError("generator argument r must lie in [0, 1]")
    r_arr = np.clip(r_arr, 0.0, 1.0)
    out = mech.psi(lstar.value * (1.0 - r_arr)) / lstar.value
    return float(out) if np.ndim(r) == 0 else out


def generator_from_pmf(law: OffspringLaw, r) -> float:
    """q*(sum_n p_n r^n - r) evaluated from the truncated pmf (the slow route,
    kept independent of generator_f for consistency checks)."""
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    powers = r_arr[:, None] ** law.n_values[None, :]
    s = powers @ law.pmf
    out = law.q * (s - r_arr)
    return float(out[0]) if np.ndim(r) == 0 else out


def _component_masses(mech: BranchingMechanism, lam: float):
    """Unnormalized masses of the beta / atom / gamma pieces of the kernel.

    Each equals the component's total contribution to sum_{n>=2} p_n times
    lambda* q; the atom and gamma forms are P(Poisson(lam*y) >= 2) integrated
    against the component."""
    masses = [mech.beta * lam * lam]
    kinds = [(_KIND_BETA, None)]
    for x, w in mech.pi.atoms:
        y = lam * x
        masses.append(w * (1.0 - math.exp(-y) * (1.0 + y)))
        kinds.append((_KIND_ATOM, (x, w)))
    for c, k, b in mech.pi.gamma_components:
        fk = math.factorial(k)
        fk1 = math.factorial(k + 1)
        m = c * (fk / b ** (k + 1) - fk / (b + lam) ** (k + 1) - lam * fk1 / (b + lam) ** (k + 2))
        masses.append(m)
        kinds.append((_KIND_GAMMA, (c, k, b)))
    return np.asarray(masses, dtype=float), tuple(kinds)


def offspring_pmf(mech: BranchingMechanism, lstar: LambdaStar, n_max: int = 4096,
                  delta_tail: float = 1e-12) -> OffspringLaw:
    """Tabulate p_n for n = 2.. until the cumulative mass reaches 1 - delta_tail.

    p_n = [beta lam^2 1{n=2} + sum_atoms w (lam x)^n e^(-lam x)/n!
           + sum_gammas c lam^n (n+k)!/(n! (b+lam)^(n+k+1))] / (lam q).
    """
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    if not (0.0 < delta_tail <= 1e-6):
        raise ValueError("delta_tail must lie in (0, 1e-6]")
    lam = lstar.value
    q = lstar.psi_prime_at
    norm = lam * q

    ns = np.arange(2, n_max + 1, dtype=np.int64)
    logn_fact = gammaln(ns + 1.0)
    p = np.zeros_like(ns, dtype=float)
    p[0] += mech.beta * lam * lam
    for x, w in mech.pi.atoms:
        y = lam * x
        p += w * np.exp(ns * math.log(y) - y - logn_fact)
    for c, k, b in mech.pi.gamma_components:
        p += c * np.exp(
            gammaln(ns + k + 1.0) - logn_fact + ns * math.log(lam)
            - (ns + k + 1.0) * math.log(b + lam)
        )
    p /= norm

    cum = np.cumsum(p)
    reached = np.nonzero(cum >= 1.0 - delta_tail)[0]
    if reached.size == 0:
        raise TruncationError(
            f"pmf cumulative mass {cum[-1]:.17g} below 1 - delta_tail at n_max={n_max}",
            achieved_tail=float(1.0 - cum[-1]),
        )
    stop = int(reached[0]) + 1
    pmf = p[:stop].copy()
    tail = max(float(1.0 - cum[stop - 1]), 0.0)

    masses, kinds = _component_masses(mech, lam)
    weights = masses / masses.sum()
    return OffspringLaw(
        q=q,
        lstar=lam,
        n_values=ns[:stop].copy(),
        pmf=pmf,
        tail_mass=tail,
        component_weights=weights,
        component_kinds=kinds,
        mechanism=mech,
    )


def sample_conditioned_poisson(rng, mu: float) -> int:
    """Poisson(mu) conditioned on >= 2, exact.

    Below mean 30 the conditional cdf is inverted directly; above, plain
    Poisson draws are rejected while < 2 (rejection mass < 1e-11 there, so the
    loop is O(1) with the same exactness).
    """
    if mu <= 0:
        raise ValueError("conditioned Poisson needs mu > 0")
    if mu <= 30.0:
        p01 = math.exp(-mu) * (1.0 + mu)
        target = p01 + rng.random() * (1.0 - p01)
        term = math.exp(-mu)
        cdf = term
        n = 0
        while cdf < target and n < 4000:
            n += 1
            term *= mu / n
            cdf += term
        return max(n, 2)
    for _ in range(1000):
        n = int(rng.poisson(mu))
        if n >= 2:
            return n
    raise SamplerDegenerateError("Poisson conditioning failed repeatedly at large mean")


def sample_branch_event(law: OffspringLaw, rng, max_rejections: int = 10**6) -> BranchEvent:
    """Draw (n, y) from the joint branch kernel, factored component -> y -> n|y.

    beta component: (2, 0) outright. Atom x: y = x and n ~ Poisson(lam*x)|>=2.
    Gamma component: y has density proportional to
    P(Poisson(lam*y) >= 2) * c y^k e^(-b y); proposals y ~ Gamma(k+1, rate b)
    are accepted with probability P(Poisson(lam*y) >= 2) <= 1, which is exact,
    then n ~ Poisson(lam*y)|>=2.
    """
    lam = law.lstar
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(law.component_weights), u, side="right"))
    idx = min(idx, len(law.component_kinds) - 1)
    kind, params = law.component_kinds[idx]
    if kind == _KIND_BETA:
        return BranchEvent(n=2, y=0.0)
    if kind == _KIND_ATOM:
        x, _w = params
        return BranchEvent(n=sample_conditioned_poisson(rng, lam * x), y=x)
    c, k, b = params
    for _ in range(max_rejections):
        y = rng.standard_gamma(k + 1) / b
        mu = lam * y
        accept = 1.0 - math.exp(-mu) * (1.0 + mu) if mu < 700 else 1.0
        if rng.random() < accept:
            return BranchEvent(n=sample_conditioned_poisson(rng, mu), y=y)
    raise SamplerDegenerateError(
        f"gamma-component mark sampler exceeded {max_rejections} rejections"
    )


def mean_identity_residual(law: OffspringLaw, alpha: float) -> float:
    """q*(m - 1) - alpha with m the tail-corrected offspring mean.

    At the default truncation (tail mass <= 1e-12) this is round-off; with a
    deliberately coarse truncation the uncorrected residual is approximately
    -q times the truncated tail mean, which mean_uncorrected exposes.
    """
    return law.q * (law.mean - 1.0) - alpha


def offspring_log_moment(law: OffspringLaw, eps: float) -> float:
    """sum_n n (log n)^(2+eps) p_n over the truncated support plus the minimal
    tail placement; finite whenever the mechanism's x(log x) moment is."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    p = 2.0 + eps
    ns = law.n_values.astype(float)
    total = float(np.dot(ns * np.log(ns) ** p, law.pmf))
    n_next = float(law.n_values[-1] + 1)
    return total + law.tail_mass * n_next * math.log(n_next) ** p
