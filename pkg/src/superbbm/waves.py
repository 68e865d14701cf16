"""Monotone wave profiles of the reaction ODEs and the exit mechanism.

Three profiles are produced for a supercritical mechanism with root lambda*:

  phi    half-line wave:  (1/2) v'' - rho v' - psi(v) = 0, v(0)=0, v(inf)=lambda*
  psi    full-line wave:  (1/2) v'' + rho v' - psi(v) = 0, v(-inf)=lambda*, v(inf)=0
  theta  rescaled reflection of psi: theta(x) = 1 - psi(-x)/lambda*

Along any monotone wave the slope is a function of the level, and the
level/slope curve V obeys the first-order reduction

    dV/dlam = 2*rho + 2*psi(lam)/V        (V > 0 on (0, lambda*)),

whose connecting orbit leaves the saddle at lambda* with slope
-r_plus = -( -rho + sqrt(rho^2 + 2 q) ). Integrated downward in lam the orbit
is attracting at both ends, so it is recovered to near machine accuracy where
direct x-space shooting loses the saddle after a handful of e-foldings; the
orbit also *is* the exit mechanism, psi_D = -V. x-space shooting is still
performed for the half-line wave because bracketing (or provably failing to
bracket) the initial slope is the existence/nonexistence witness; the
produced profile is then reconstructed from the orbit and cross-checked
against the bracketed slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import backbone
from .errors import DomainTooShortError, NumericError
from .mechanism import BranchingMechanism, LambdaStar, MechanismCurve, find_lambda_star

__all__ = [
    "WaveProfile",
    "NoWave",
    "DecayFit",
    "VelocityOrbit",
    "solve_orbit",
    "solve_phi",
    "solve_psi_wave",
    "theta_from_psi",
    "derive_psi_d",
    "exit_mechanism_curve",
    "fit_decay_rate",
    "ode_residual",
    "ode_residual_pointwise",
]


@dataclass(frozen=True)
class WaveProfile:
    """Tabulated monotone wave on a uniform grid with boundary metadata."""

    grid: np.ndarray
    values: np.ndarray
    kind: str  # "phi" | "psi" | "theta"
    boundary_low: float   # target limit at the left end of the grid
    boundary_high: float  # target limit at the right end
    slope_at_anchor: float
    residual_sup: float
    lam_star: float
    rho: float


@dataclass(frozen=True)
class NoWave:
    """Witness that no monotone half-line wave exists at this drift."""

    rho: float
    speed_limit: float
    reason: str


@dataclass(frozen=True)
class DecayFit:
    rate: float
    constant: float
    fit_window: tuple
    r_squared: float


class VelocityOrbit:
    """The level/slope curve V(lam) of the connecting orbit, with exact
    derivative identities V' = 2 rho + 2 psi/V and
    V'' = 2 (psi' - (psi/V) V') / V evaluated pointwise."""

    def __init__(self, mech, lstar, rho, sol_a, lam_a_lo, lam_seed, r_plus, c2,
                 sol_b=None, lam_floor=None, v0=0.0, slope0=None):
        self.mech = mech
        self.lam_star = lstar.value
        self.q = lstar.psi_prime_at
        self.rho = rho
        self.r_plus = r_plus
        self._c2 = c2
        self._sol_a = sol_a
        self._lam_a_lo = lam_a_lo
        self._lam_seed = lam_seed
        self._sol_b = sol_b
        self._lam_floor = lam_floor
        self.v0 = v0
        # slope of V at 0+, i.e. the decay rate of the wave at its 0 end
        if slope0 is None and lam_floor is not None:
            slope0 = float(sol_b(math.log(lam_floor))[0])
        self.slope0 = slope0

    def v_scalar(self, lam: float) -> float:
        """Scalar orbit slope; the hot path for profile reconstruction."""
        if lam >= self._lam_seed:
            e = self.lam_star - lam
            val = self.r_plus * e + self._c2 * e * e
        elif lam >= self._lam_a_lo:
            val = float(self._sol_a(lam)[0])
        elif self._sol_b is None:
            val = float(self._sol_a(lam if lam > 0.0 else 0.0)[0])
        elif lam >= self._lam_floor:
            val = lam * float(self._sol_b(math.log(lam))[0])
        else:
            val = lam * self.slope0
        return val if val > 0.0 else 0.0

    def v(self, lam):
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
        out = np.empty_like(lam_arr)
        near_star = lam_arr >= self._lam_seed
        e = self.lam_star - lam_arr[near_star]
        out[near_star] = self.r_plus * e + self._c2 * e * e
        mid = (~near_star) & (lam_arr >= self._lam_a_lo)
        if np.any(mid):
            out[mid] = self._sol_a(lam_arr[mid])[0]
        low = lam_arr < self._lam_a_lo
        if np.any(low):
            if self._sol_b is None:
                # half-line regime: orbit tabulated all the way to 0
                out[low] = self._sol_a(np.maximum(lam_arr[low], 0.0))[0]
            else:
                ll = lam_arr[low]
                ratio = np.empty_like(ll)
                above = ll >= self._lam_floor
                if np.any(above):
                    ratio[above] = self._sol_b(np.log(ll[above]))[0]
                if np.any(~above):
                    ratio[~above] = self.slope0
                out[low] = ll * ratio
        out = np.maximum(out, 0.0)
        return float(out[0]) if np.ndim(lam) == 0 else out

    def v_prime(self, lam):
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
        vv = np.atleast_1d(self.v(lam_arr))
        out = np.empty_like(lam_arr)
        pos = vv > 0
        # 2*rho + 2*(psi/lam)*(lam/V) avoids the 0/0 at the origin
        with np.errstate(divide="ignore", invalid="ignore"):
            pol = self.mech.psi_over_lambda(lam_arr[pos])
            out[pos] = 2.0 * self.rho + 2.0 * pol * lam_arr[pos] / vv[pos]
        zero = ~pos
        if np.any(zero):
            at_star = np.abs(lam_arr[zero] - self.lam_star) < 1e-9 * self.lam_star
            vals = np.where(at_star, -self.r_plus,
                            self.slope0 if self.slope0 is not None else 0.0)
            out[zero] = vals
        return float(out[0]) if np.ndim(lam) == 0 else out

    def v_double_prime(self, lam):
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
        vv = np.atleast_1d(self.v(lam_arr))
        vp = np.atleast_1d(self.v_prime(lam_arr))
        out = np.zeros_like(lam_arr)
        pos = vv > 0
        psi_p = self.mech.psi_prime(lam_arr[pos])
        pol = self.mech.psi_over_lambda(lam_arr[pos])
        out[pos] = 2.0 * (psi_p - pol * lam_arr[pos] / vv[pos] * vp[pos]) / vv[pos]
        return float(out[0]) if np.ndim(lam) == 0 else out


def solve_orbit(mech: BranchingMechanism, lstar: LambdaStar, rho: float,
                rtol: float = 1e-12, seed_eps: float = 1e-5,
                lam_floor_frac: float = 1e-14) -> VelocityOrbit:
    """Integrate the connecting orbit from the saddle at lambda* toward 0.

    The seed sits on the saddle's outgoing manifold with its quadratic
    correction, so the seeding error is O(seed_eps^2). In the half-line
    regime (rho < sqrt(2 alpha)) the orbit reaches lam = 0 with a strictly
    positive slope V(0) (the wave's anchor slope); at and above the critical
    drift it lands on V ~ m_minus * lam, tracked in log-level coordinates
    R = V/lam down to lam_floor_frac * lambda*.
    """
    lam_star = lstar.value
    q = lstar.psi_prime_at
    r_plus = -rho + math.sqrt(rho * rho + 2.0 * q)
    psi2 = float(mech.psi_double_prime(lam_star))
    c2 = -psi2 * r_plus**2 / (2.0 * (r_plus**2 + q))
    e0 = seed_eps * lam_star
    lam_seed = lam_star - e0
    v_seed = r_plus * e0 + c2 * e0 * e0

    half_line = rho < math.sqrt(2.0 * mech.alpha) - 1e-12
    lam_a_lo = 0.0 if half_line else 1e-3 * lam_star

    psi_s = mech.psi_scalar

    def rhs_a(lam, y):
        return (2.0 * rho + 2.0 * psi_s(lam if lam > 0.0 else 0.0) / y[0],)

    sol_a = solve_ivp(rhs_a, (lam_seed, lam_a_lo), (v_seed,), method="DOP853",
                      rtol=rtol, atol=1e-30, dense_output=True)
    if not sol_a.success:
        raise NumericError(f"orbit integration failed: {sol_a.message}")
    if np.any(sol_a.y[0] <= 0):
        if half_line:
            raise NumericError("orbit slope hit zero before reaching level 0")
        raise NumericError("orbit slope hit zero above the tracking floor")

    if half_line:
        v0 = float(sol_a.sol(0.0)[0])
        return VelocityOrbit(mech, lstar, rho, sol_a.sol, lam_a_lo, lam_seed,
                             r_plus, c2, v0=v0, slope0=None)

    # log-level phase: R(u) = V(e^u)/e^u, dR/du = 2 rho - R + 2 (psi/lam)/R
    lam_floor = lam_floor_frac * lam_star
    r_start = float(sol_a.sol(lam_a_lo)[0]) / lam_a_lo

    pol_s = mech.psi_over_lambda_scalar

    def rhs_b(u, y):
        return (2.0 * rho - y[0] + 2.0 * pol_s(math.exp(u)) / y[0],)

    sol_b = solve_ivp(rhs_b, (math.log(lam_a_lo), math.log(lam_floor)), (r_start,),
                      method="DOP853", rtol=rtol, atol=1e-30, dense_output=True)
    if not sol_b.success:
        raise NumericError(f"orbit tail integration failed: {sol_b.message}")
    return VelocityOrbit(mech, lstar, rho, sol_a.sol, lam_a_lo, lam_seed,
                         r_plus, c2, sol_b=sol_b.sol, lam_floor=lam_floor, v0=0.0)


# -- half-line wave: shooting witness + orbit reconstruction --------------------


def _classify_shot(mech, lam_star, rho, slope, x_probe, tol):
    """Integrate the half-line ODE from (0, slope); classify the trajectory.

    Returns "over" if the level exceeds lambda*, "under" if the slope turns
    negative while the level is still below lambda* - tol, "flat" otherwise.
    """
    over_level = lam_star * (1.0 + 1e-9)

    psi_s = mech.psi_scalar

    def rhs(x, y):
        level = y[0]
        if level < 0.0:
            level = 0.0
        elif level > 2.0 * lam_star:
            level = 2.0 * lam_star
        return (y[1], 2.0 * (rho * y[1] + psi_s(level)))

    def ev_over(x, y):
        return y[0] - over_level

    def ev_under(x, y):
        return y[1]

    ev_over.terminal = True
    ev_over.direction = 1
    ev_under.terminal = True
    ev_under.direction = -1
    sol = solve_ivp(rhs, (0.0, x_probe), (0.0, slope), method="RK45",
                    rtol=1e-10, atol=1e-12 * lam_star, events=(ev_over, ev_under))
    if sol.t_events[0].size:
        return "over"
    if sol.t_events[1].size:
        level = sol.y_events[1][0][0]
        return "under" if level < lam_star - tol else "over"
    return "over" if sol.y[0, -1] > lam_star - tol else "under"


def _shooting_bracket(mech, lam_star, rho, x_probe, tol):
    """Find slopes (s_under, s_over) classifying differently, or None."""
    s = max(1.0, math.sqrt(2.0 * mech.alpha)) * lam_star
    s_over = None
    for _ in range(64):
        if _classify_shot(mech, lam_star, rho, s, x_probe, tol) == "over":
            s_over = s
            break
        s *= 2.0
    if s_over is None:
        return None
    s = s_over
    s_under = None
    for _ in range(64):
        s /= 4.0
        if _classify_shot(mech, lam_star, rho, s, x_probe, tol) == "under":
            s_under = s
            break
    if s_under is None:
        return None
    return s_under, s_over


def _bisect_slope(mech, lam_star, rho, bracket, x_probe, tol, iterations=70):
    lo, hi = bracket
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _classify_shot(mech, lam_star, rho, mid, x_probe, tol) == "under":
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 0.5 * (lo + hi)


def _residual_sup(grid, values, rho_signed, reaction):
    h = grid[1] - grid[0]
    v = values
    d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    d1 = (v[2:] - v[:-2]) / (2.0 * h)
    res = 0.5 * d2 - rho_signed * d1 - reaction(v[1:-1])
    return float(np.max(np.abs(res)))


def solve_phi(mech: BranchingMechanism, lstar: LambdaStar | None = None,
              rho: float = 0.0, domain_length: float | None = None,
              tol: float = 1e-8, step: float = 5e-4,
              force_shooting: bool = False, rtol: float = 1e-12,
              max_extensions: int = 10):
    """Half-line wave phi, or NoWave at/above the critical drift.

    Existence is witnessed by bracketed bisection on the initial slope
    (overshoot past lambda* vs the slope turning negative); at or above the
    critical drift every positive slope overshoots, so the bracket search
    fails, which force_shooting exposes without the analytic pre-check. The
    returned profile is reconstructed from the connecting orbit and its
    anchor slope is cross-checked against the bisected one.
    """
    ls = lstar if lstar is not None else find_lambda_star(mech)
    lam_star = ls.value
    speed_limit = math.sqrt(2.0 * mech.alpha)
    x_probe = max(40.0, 4.0 * math.pi / math.sqrt(max(2.0 * mech.alpha - rho * rho, 1e-4)))

    if rho >= speed_limit - 1e-12:
        if not force_shooting:
            return NoWave(rho=rho, speed_limit=speed_limit, reason="analytic threshold")
        if _shooting_bracket(mech, lam_star, rho, x_probe, tol) is None:
            return NoWave(rho=rho, speed_limit=speed_limit, reason="shooting bracket failed")
        raise NumericError("shooting bracketed a wave above the critical drift")

    bracket = _shooting_bracket(mech, lam_star, rho, x_probe, tol)
    if bracket is None:
        raise NumericError("bisection bracket collapse below the critical drift")
    s_shot = _bisect_slope(mech, lam_star, rho, bracket, x_probe, tol)

    orbit = solve_orbit(mech, ls, rho, rtol=rtol)
    if orbit.v0 <= 0:
        raise NumericError("orbit reached level 0 with nonpositive slope below criticality")
    # near the critical drift the anchor slope is exponentially small, so the
    # bisected slope can only be trusted to its absolute bracket resolution
    slope_tol = max(1e-6 * orbit.v0, 1e-11 * lam_star)
    if abs(orbit.v0 - s_shot) > slope_tol:
        raise NumericError(
            f"anchor-slope cross-check failed: orbit {orbit.v0!r} vs shooting {s_shot!r}"
        )

    mu = math.sqrt(rho * rho + 2.0 * ls.psi_prime_at) - rho  # defect decay rate
    length = domain_length if domain_length is not None else math.log(lam_star / (0.05 * tol)) / mu

    def rhs(x, y):
        return (orbit.v_scalar(y[0] if y[0] < lam_star else lam_star),)

    profile_sol = None
    for _ in range(max_extensions + 1):
        sol = solve_ivp(rhs, (0.0, length), (0.0,), method="DOP853",
                        rtol=rtol, atol=1e-14 * lam_star, dense_output=True)
        if not sol.success:
            raise NumericError(f"profile reconstruction failed: {sol.message}")
        profile_sol = sol.sol
        if lam_star - float(profile_sol(length)[0]) <= tol:
            break
        length *= 1.4
    values_end = float(profile_sol(length)[0])
    if lam_star - values_end > tol:
        raise NumericError("domain extension exhausted before the wave reached lambda*")

    n = int(round(length / step)) + 1
    grid = np.linspace(0.0, length, n)
    values = profile_sol(grid)[0]
    values = np.clip(values, 0.0, lam_star)
    values[0] = 0.0
    if np.any(np.diff(values) < -1e-12 * lam_star):
        raise NumericError("reconstructed phi profile is not monotone")
    res = _residual_sup(grid, values, rho, mech.psi)
    return WaveProfile(grid=grid, values=values, kind="phi", boundary_low=0.0,
                       boundary_high=lam_star, slope_at_anchor=orbit.v0,
                       residual_sup=res, lam_star=lam_star, rho=rho)


def solve_psi_wave(mech: BranchingMechanism, lstar: LambdaStar | None = None,
                   rho: float = 0.0, half_length: float | None = None,
                   tol: float = 1e-8, step: float = 5e-4, rtol: float = 1e-12):
    """Full-line wave psi at drift rho >= sqrt(2 alpha), anchored to
    psi(0) = lambda*/2 (the wave is otherwise only defined up to translation).

    Reconstructed by integrating d(level)/dx = -V(level) both ways from the
    anchor; both directions contract toward the orbit, so the boundary
    defects at -L and +L are controlled by L alone.
    """
    ls = lstar if lstar is not None else find_lambda_star(mech)
    lam_star = ls.value
    speed_limit = math.sqrt(2.0 * mech.alpha)
    if rho < speed_limit - 1e-12:
        raise ValueError("full-line wave requires rho >= sqrt(2 alpha)")

    orbit = solve_orbit(mech, ls, rho, rtol=rtol)
    disc = math.sqrt(max(rho * rho - 2.0 * mech.alpha, 0.0))
    m_minus = rho - disc if disc > 0 else rho
    length = half_length
    if length is None:
        left = math.log(lam_star / (0.05 * tol)) / orbit.r_plus
        right = 1.3 * math.log(lam_star / (0.05 * tol)) / m_minus
        length = max(left, right)

    def rhs(x, y):
        level = y[0]
        if level < 0.0:
            level = 0.0
        elif level > lam_star:
            level = lam_star
        return (-orbit.v_scalar(level),)

    half = lam_star / 2.0
    fwd = solve_ivp(rhs, (0.0, length), (half,), method="DOP853",
                    rtol=rtol, atol=1e-18, dense_output=True)
    bwd = solve_ivp(rhs, (0.0, -length), (half,), method="DOP853",
                    rtol=rtol, atol=1e-18, dense_output=True)
    if not (fwd.success and bwd.success):
        raise NumericError("full-line wave reconstruction failed")

    n_half = int(round(length / step))
    grid = np.linspace(-length, length, 2 * n_half + 1)
    values = np.empty_like(grid)
    values[: n_half] = bwd.sol(grid[: n_half])[0]
    values[n_half:] = fwd.sol(grid[n_half:])[0]
    values[n_half] = half
    if np.any(values < -1e-9 * lam_star) or np.any(values > lam_star * (1 + 1e-9)):
        raise NumericError("full-line wave left [0, lambda*]")
    values = np.clip(values, 0.0, lam_star)
    if np.any(np.diff(values) > 1e-12 * lam_star):
        raise NumericError("full-line wave is not monotone nonincreasing")
    if lam_star - values[0] > tol:
        raise NumericError("wave did not reach lambda* at the left boundary")
    res = _residual_sup(grid, values, -rho, mech.psi)
    return WaveProfile(grid=grid, values=values, kind="psi", boundary_low=lam_star,
                       boundary_high=0.0, slope_at_anchor=-orbit.v(half),
                       residual_sup=res, lam_star=lam_star, rho=rho)


def theta_from_psi(psi_profile: WaveProfile) -> WaveProfile:
    """theta(x) = 1 - psi(-x)/lambda*: reflected, rescaled full-line wave with
    limits 1 at -inf and 0 at +inf."""
    if psi_profile.kind != "psi":
        raise ValueError("theta_from_psi expects a psi profile")
    grid = psi_profile.grid
    if not np.allclose(grid, -grid[::-1], atol=1e-12):
        raise ValueError("psi grid must be symmetric about 0")
    lam_star = psi_profile.lam_star
    values = 1.0 - psi_profile.values[::-1] / lam_star
    return WaveProfile(grid=grid.copy(), values=values, kind="theta",
                       boundary_low=1.0, boundary_high=0.0,
                       slope_at_anchor=psi_profile.slope_at_anchor / lam_star,
                       residual_sup=psi_profile.residual_sup / lam_star,
                       lam_star=lam_star, rho=psi_profile.rho)


def derive_psi_d(psi_profile: WaveProfile, stencil_step: int = 1) -> MechanismCurve:
    """Exit mechanism psi_D(lam) = psi'(psi^{-1}(lam)) tabulated from the
    full-line profile by five-point interior differences, with the exact
    endpoint zeros psi_D(0) = psi_D(lambda*) = 0 enforced. Profile values
    below 1e-14 lambda* (beyond level resolution on long domains) are dropped
    before inversion; the remaining tabulation must be strictly monotone."""
    if psi_profile.kind != "psi":
        raise ValueError("derive_psi_d expects a psi profile")
    v = psi_profile.values
    g = psi_profile.grid
    resolvable = np.nonzero(v >= 1e-14 * psi_profile.lam_star)[0]
    if resolvable.size:
        v = v[: resolvable[-1] + 1]
        g = g[: resolvable[-1] + 1]
    if not np.all(np.diff(v) < 0):
        raise ValueError("profile must be strictly monotone for inversion")
    h = (g[1] - g[0]) * stencil_step
    vs = v[::stencil_step]
    if vs.size < 9:
        raise ValueError("profile too short for the interior stencil")
    d = (-vs[4:] + 8.0 * vs[3:-1] - 8.0 * vs[1:-3] + vs[:-4]) / (12.0 * h)
    levels = vs[2:-2]
    lam = levels[::-1]
    vals = d[::-1]
    lam_star = psi_profile.lam_star
    keep = (lam > 0.0) & (lam < lam_star)
    lam, vals = lam[keep], vals[keep]
    # thin the geometric knot pile-up to ~2% relative spacing: enough for full
    # spline accuracy on the sqrt-type behaviour near 0 (error ~ (0.02 lam)^4
    # times the local fourth derivative stays below 1e-10) while keeping the
    # knot count in the hundreds so downstream flows integrate quickly; near
    # lambda* the curve is a smooth saddle quadratic, where crowded knots only
    # feed oscillation into the spline's second derivative
    thr_hi = 1e-4 * lam_star
    kept = np.zeros(lam.size, dtype=bool)
    last = 0.0
    for i, value in enumerate(lam):
        if value - last >= max(1e-7 * lam_star, 0.02 * value) and lam_star - value >= thr_hi:
            kept[i] = True
            last = value
    lam = np.concatenate(([0.0], lam[kept], [lam_star]))
    vals = np.concatenate(([0.0], vals[kept], [0.0]))
    return MechanismCurve(lam, vals, lam_star)


def exit_mechanism_curve(mech: BranchingMechanism, lstar: LambdaStar | None = None,
                         rho: float | None = None, n_table: int = 2001) -> MechanismCurve:
    """Exit mechanism backed by the orbit's exact pointwise identities
    (psi_D = -V with V' and V'' from the reduction), with a tabulation
    attached for inspection. Preferred where the curve is consumed deep into
    the lam -> 0 tail; agrees with derive_psi_d to the differencing error."""
    ls = lstar if lstar is not None else find_lambda_star(mech)
    if rho is None:
        rho = math.sqrt(2.0 * mech.alpha)
    orbit = solve_orbit(mech, ls, rho)
    lam = np.linspace(0.0, ls.value, n_table)
    vals = -orbit.v(lam)
    return MechanismCurve(
        lam, vals, ls.value,
        psi_fn=lambda x: -orbit.v(x),
        d1_fn=lambda x: -orbit.v_prime(x),
        d2_fn=lambda x: -orbit.v_double_prime(x),
        validate=False,
    )


def fit_decay_rate(profile: WaveProfile, window=(1e-6, 1e-3),
                   expected_rate: float | None = None,
                   rate_rtol: float = 0.02) -> DecayFit:
    """Fit defect ~ k * exp(-rate x) on the window where the defect lies in
    [window[0], window[1]]; the defect is lambda* - value for phi, the value
    itself for psi and theta. When expected_rate is supplied (for phi this is
    expected_phi_decay_rate) the fitted rate must match it within rate_rtol."""
    if profile.kind == "phi":
        defect = profile.lam_star - profile.values
    else:
        defect = profile.values.copy()
    mask = (defect >= window[0]) & (defect <= window[1])
    if np.count_nonzero(mask) < 10:
        raise DomainTooShortError("defect never enters the fit window on this domain")
    x = profile.grid[mask]
    y = np.log(defect[mask])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    if r2 < 0.999:
        raise NumericError(f"decay fit rejected: r^2 = {r2:.6f} < 0.999")
    rate = -float(slope)
    if expected_rate is not None and abs(rate - expected_rate) > rate_rtol * abs(expected_rate):
        raise NumericError(
            f"fitted decay rate {rate:.6g} deviates from expected {expected_rate:.6g}"
        )
    return DecayFit(rate=rate, constant=float(math.exp(intercept)),
                    fit_window=(float(x[0]), float(x[-1])), r_squared=r2)


def expected_phi_decay_rate(lstar: LambdaStar, rho: float) -> float:
    """sqrt(rho^2 + 2 psi'(lambda*)) - rho, the defect decay rate of phi."""
    return math.sqrt(rho * rho + 2.0 * lstar.psi_prime_at) - rho


def ode_residual_pointwise(profile: WaveProfile, mech: BranchingMechanism,
                           rho: float | None = None) -> np.ndarray:
    """Centered-difference residual of the defining ODE at interior grid
    points (first and last entries are NaN). The reaction term is -psi(v) for
    phi and psi (with drift sign -rho and +rho respectively) and +F(v) for
    theta, F being the skeleton generator."""
    if profile.grid.size < 5:
        raise ValueError("need at least 5 grid points")
    rho = profile.rho if rho is None else rho
    h = profile.grid[1] - profile.grid[0]
    v = profile.values
    d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    d1 = (v[2:] - v[:-2]) / (2.0 * h)
    inner = np.maximum(v[1:-1], 0.0)  # reaction term only; corrupted values
    if profile.kind == "phi":          # still show up through the differences
        res = 0.5 * d2 - rho * d1 - mech.psi(inner)
    elif profile.kind == "psi":
        res = 0.5 * d2 + rho * d1 - mech.psi(inner)
    elif profile.kind == "theta":
        ls = find_lambda_star(mech)
        f_vals = backbone.generator_f(mech, ls, np.clip(v[1:-1], 0.0, 1.0))
        res = 0.5 * d2 - rho * d1 + f_vals
    else:
        raise ValueError(f"unknown profile kind {profile.kind!r}")
    out = np.full(v.shape, np.nan)
    out[1:-1] = res
    return out


def ode_residual(profile: WaveProfile, mech: BranchingMechanism,
                 rho: float | None = None) -> float:
    """Sup of the centered-difference ODE residual over interior grid points."""
    res = ode_residual_pointwise(profile, mech, rho)
    return float(np.nanmax(np.abs(res)))
