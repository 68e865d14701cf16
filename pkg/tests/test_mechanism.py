import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from superbbm.errors import NoRootError
from superbbm.mechanism import (
    BranchingMechanism,
    JumpMeasure,
    MechanismCurve,
    check_condition_a3,
    check_log_moment,
    csbp_laplace,
    extinction_probability,
    find_lambda_star,
    shift_mechanism,
)

QUADRATIC = BranchingMechanism(alpha=1.0, beta=1.0)
QUADRATIC2 = BranchingMechanism(alpha=2.0, beta=1.0)
ATOM = BranchingMechanism(alpha=1.0, beta=0.0, pi=JumpMeasure(atoms=((1.0, 2.0),)))

# independent root of l - 2 + 2 exp(-l), frozen from brentq at machine tolerance
ATOM_LAMBDA_STAR = 1.59362426004004


def random_mechanisms(seed, count):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        alpha = rng.uniform(0.3, 3.0)
        beta = rng.uniform(0.1, 2.0) if rng.random() < 0.7 else 0.0
        atoms = tuple(
            (rng.uniform(0.2, 3.0), rng.uniform(0.1, 3.0)) for _ in range(rng.integers(0, 3))
        )
        gammas = tuple(
            (rng.uniform(0.1, 2.0), int(rng.integers(0, 3)), rng.uniform(0.5, 3.0))
            for _ in range(rng.integers(0, 2))
        )
        pi = JumpMeasure(atoms, gammas)
        # psi(inf) = inf needs beta > 0 or a jump mean exceeding alpha
        if beta == 0.0 and pi.mean() <= alpha:
            beta = 1.0
        out.append(BranchingMechanism(alpha=alpha, beta=beta, pi=pi))
    return out


class TestEvalPsi:
    def test_quadratic_value(self):
        assert QUADRATIC.psi(2.0) == pytest.approx(2.0, abs=1e-14)

    def test_zero_is_exact_root(self):
        assert ATOM.psi(0.0) == 0.0
        assert QUADRATIC.psi(0.0) == 0.0

    def test_atom_closed_form(self):
        # hand evaluation: -1 + 2*exp(-1)
        assert ATOM.psi(1.0) == pytest.approx(-0.26424111765711533, rel=1e-14)

    def test_gamma_component_matches_quadrature(self):
        mech = BranchingMechanism(alpha=1.0, beta=0.0,
                                  pi=JumpMeasure(gamma_components=((1.5, 1, 2.0),)))
        for lam in (0.3, 1.0, 4.0):
            num, _ = quad(lambda x: (math.exp(-lam * x) - 1 + lam * x) * 1.5 * x * math.exp(-2 * x),
                          0, np.inf, limit=200)
            assert mech.psi(lam) == pytest.approx(-lam + num, rel=1e-9)

    def test_rejects_negative_argument(self):
        with pytest.raises(ValueError):
            QUADRATIC.psi(-0.5)

    def test_psi_over_lambda_stable_at_tiny_argument(self):
        mech = BranchingMechanism(alpha=1.0, beta=0.5,
                                  pi=JumpMeasure(atoms=((1.0, 2.0),),
                                                 gamma_components=((1.0, 0, 1.0),)))
        lam = 1e-12
        assert mech.psi_over_lambda(lam) == pytest.approx(-1.0, rel=1e-9)
        # consistent with the direct ratio where that is still well conditioned
        lam = 1e-3
        assert mech.psi_over_lambda(lam) == pytest.approx(mech.psi(lam) / lam, rel=1e-9)


class TestLambdaStar:
    def test_quadratic(self):
        ls = find_lambda_star(QUADRATIC)
        assert ls.value == pytest.approx(1.0, rel=1e-13)
        assert ls.psi_prime_at == pytest.approx(1.0, rel=1e-12)

    def test_quadratic_alpha2(self):
        assert find_lambda_star(QUADRATIC2).value == pytest.approx(2.0, rel=1e-13)

    def test_atom_against_brentq_oracle(self):
        oracle = brentq(lambda l: l - 2 + 2 * math.exp(-l), 0.5, 5.0, xtol=1e-15, rtol=8.9e-16)
        ls = find_lambda_star(ATOM)
        assert ls.value == pytest.approx(oracle, rel=1e-12)
        assert ls.value == pytest.approx(ATOM_LAMBDA_STAR, rel=1e-12)

    def test_root_residual_invariant(self):
        for mech in random_mechanisms(7, 10):
            ls = find_lambda_star(mech)
            assert abs(mech.psi(ls.value)) <= 1e-10 * max(1.0, ls.psi_prime_at)
            assert ls.psi_prime_at > 0
            for lam in np.linspace(ls.value * 1.01, 2 * ls.value, 7):
                assert mech.psi(lam) > 0

    def test_root_sandwich(self):
        for mech in (QUADRATIC, ATOM):
            ls = find_lambda_star(mech)
            grid_in = np.linspace(ls.value * 1e-3, ls.value * (1 - 1e-6), 100)
            grid_out = np.linspace(ls.value * (1 + 1e-6), 2 * ls.value, 100)
            assert np.all(mech.psi(grid_in) < 0)
            assert np.all(mech.psi(grid_out) > 0)

    def test_malformed_mechanism_raises(self):
        # the doubling cap must fire on an extreme alpha/beta imbalance; the
        # overflow en route is part of the malformed input being exercised
        with np.errstate(over="ignore"), pytest.raises(NoRootError):
            find_lambda_star(BranchingMechanism(alpha=1e300, beta=1e-300), max_doublings=5)


class TestShift:
    def test_quadratic_shift_is_l_plus_l_squared(self):
        ls = find_lambda_star(QUADRATIC)
        shifted = shift_mechanism(QUADRATIC, ls)
        for lam in (0.0, 0.3, 1.7):
            assert shifted.psi(lam) == pytest.approx(lam + lam * lam, abs=1e-12)

    def test_shift_root_property_and_subcriticality(self):
        for mech in (QUADRATIC, ATOM):
            ls = find_lambda_star(mech)
            shifted = shift_mechanism(mech, ls)
            assert abs(shifted.psi(0.0)) <= 1e-10
            assert shifted.psi_prime(0.0) > 0

    def test_atom_shift_value(self):
        ls = find_lambda_star(ATOM)
        shifted = shift_mechanism(ATOM, ls)
        assert shifted.psi(1.0) == pytest.approx(0.7431215401621417, rel=1e-10)


class TestConditionA3:
    def test_quadratic_finite(self):
        verdict = check_condition_a3(QUADRATIC)
        assert verdict.verdict == "finite"
        assert verdict.tail_exponent == pytest.approx(-1.5, abs=0.02)

    def test_atom_only_infinite(self):
        verdict = check_condition_a3(ATOM)
        assert verdict.verdict == "infinite"
        assert verdict.tail_exponent == pytest.approx(-1.0, abs=0.02)

    def test_tiny_beta_finite_with_late_onset(self):
        mech = BranchingMechanism(alpha=1.0, beta=1e-9, pi=JumpMeasure(atoms=((1.0, 2.0),)))
        verdict = check_condition_a3(mech)
        assert verdict.verdict == "finite"
        assert verdict.extended
        assert verdict.cutoff > 1e8


class TestLogMoment:
    def test_empty_measure(self):
        assert check_log_moment(QUADRATIC, 1.0) == 0.0

    def test_atom_at_one(self):
        assert check_log_moment(ATOM, 1.0) == 0.0

    def test_gamma_component_value(self):
        mech = BranchingMechanism(alpha=1.0, beta=0.0,
                                  pi=JumpMeasure(gamma_components=((1.0, 0, 1.0),)))
        # adaptive-quadrature oracle, cross-checked at 30 digits with mpmath
        assert check_log_moment(mech, 0.5) == pytest.approx(0.7019608641617, rel=1e-8)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            check_log_moment(QUADRATIC, 0.0)


def _rk4_flow(mech, t, theta, steps=20000):
    """Fine-grid fixed-step integrator, independent of csbp_laplace's path."""
    h = t / steps
    u = theta
    for _ in range(steps):
        k1 = -mech.psi(u)
        k2 = -mech.psi(max(u + 0.5 * h * k1, 0.0))
        k3 = -mech.psi(max(u + 0.5 * h * k2, 0.0))
        k4 = -mech.psi(max(u + h * k3, 0.0))
        u += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


class TestCsbpLaplace:
    def test_initial_condition(self):
        assert csbp_laplace(QUADRATIC, 0.0, 0.3) == 0.3

    def test_fixed_point(self):
        ls = find_lambda_star(ATOM)
        for t in (0.5, 2.0, 7.0):
            assert csbp_laplace(ATOM, t, ls.value) == pytest.approx(ls.value, rel=1e-8)

    def test_quadratic_logistic_closed_form(self):
        # du/dt = u - u^2 from 0.5 at t=1: logistic value
        assert csbp_laplace(QUADRATIC, 1.0, 0.5) == pytest.approx(0.7310585786300049, rel=1e-8)

    def test_against_fine_grid_oracle(self):
        got = csbp_laplace(ATOM, 1.5, 0.4)
        assert got == pytest.approx(_rk4_flow(ATOM, 1.5, 0.4), rel=1e-8)

    def test_semigroup_property(self):
        for mech in (QUADRATIC, ATOM):
            for theta in (0.2, 0.9):
                once = csbp_laplace(mech, 1.7, csbp_laplace(mech, 0.8, theta))
                assert csbp_laplace(mech, 2.5, theta) == pytest.approx(once, abs=1e-7)


class TestExtinctionProbability:
    def test_values(self):
        ls = find_lambda_star(QUADRATIC)
        assert extinction_probability(ls, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)
        assert extinction_probability(ls, 0.0) == 1.0
        ls_atom = find_lambda_star(ATOM)
        assert extinction_probability(ls_atom, 2.0) == pytest.approx(0.04128531050700124, rel=1e-10)

    def test_rejects_negative_mass(self):
        ls = find_lambda_star(QUADRATIC)
        with pytest.raises(ValueError):
            extinction_probability(ls, -1.0)


@st.composite
def mechanism_strategy(draw):
    alpha = draw(st.floats(0.3, 3.0))
    beta = draw(st.one_of(st.just(0.0), st.floats(0.1, 2.0)))
    n_atoms = draw(st.integers(0, 2))
    atoms = tuple(
        (draw(st.floats(0.2, 3.0)), draw(st.floats(0.1, 3.0))) for _ in range(n_atoms)
    )
    n_gam = draw(st.integers(0, 1))
    gammas = tuple(
        (draw(st.floats(0.1, 2.0)), draw(st.integers(0, 2)), draw(st.floats(0.5, 3.0)))
        for _ in range(n_gam)
    )
    pi = JumpMeasure(atoms, gammas)
    if beta == 0.0 and pi.mean() <= alpha:
        beta = 1.0
    return BranchingMechanism(alpha=alpha, beta=beta, pi=pi)


class TestPsiShapeProperties:
    @settings(max_examples=25, deadline=None)
    @given(mechanism_strategy(), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_midpoint_convexity(self, mech, a, b):
        a, b = sorted((a, b))
        lhs = mech.psi(0.5 * (a + b))
        rhs = 0.5 * (mech.psi(a) + mech.psi(b))
        scale = max(1.0, abs(lhs), abs(rhs))
        assert lhs <= rhs + 1e-12 * scale

    @settings(max_examples=20, deadline=None)
    @given(mechanism_strategy())
    def test_central_difference_matches_analytic_derivative(self, mech):
        rng = np.random.default_rng(0)
        for lam in rng.uniform(0.05, 4.0, size=20):
            h = 1e-6 * max(1.0, lam)
            fd = (mech.psi(lam + h) - mech.psi(lam - h)) / (2 * h)
            d = mech.psi_prime(lam)
            # relative agreement, with the scale floored at 1 so samples near
            # the zero crossing of psi' stay well posed
            assert abs(fd - d) <= 1e-6 * max(1.0, abs(d))

    def test_second_derivative_positive(self):
        for mech in random_mechanisms(3, 8):
            grid = np.linspace(0.0, 4.0, 50)
            assert np.all(mech.psi_double_prime(grid) > 0)

    def test_prime_at_zero_is_minus_alpha(self):
        for mech in random_mechanisms(11, 8):
            assert mech.psi_prime(0.0) == pytest.approx(-mech.alpha, rel=1e-12)


class TestTypeValidation:
    def test_empty_measure_needs_beta(self):
        with pytest.raises(ValueError):
            BranchingMechanism(alpha=1.0, beta=0.0)

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            BranchingMechanism(alpha=0.0, beta=1.0)

    def test_atom_positivity(self):
        with pytest.raises(ValueError):
            JumpMeasure(atoms=((-1.0, 1.0),))
        with pytest.raises(ValueError):
            JumpMeasure(atoms=((1.0, 0.0),))

    def test_x_wedge_x2_closed_form_matches_quadrature(self):
        pi = JumpMeasure(atoms=((0.5, 1.0), (2.0, 3.0)), gamma_components=((1.0, 1, 1.5),))
        num, _ = quad(lambda x: min(x, x * x) * 1.0 * x * math.exp(-1.5 * x), 0, np.inf)
        expected = 1.0 * 0.25 + 3.0 * 2.0 + num
        assert pi.x_wedge_x2() == pytest.approx(expected, rel=1e-9)


class TestMechanismCurve:
    def test_from_table_roundtrip(self):
        lam = np.linspace(0.0, 1.0, 201)
        vals = -(2 / math.sqrt(3)) * (lam - lam**1.5)
        curve = MechanismCurve.from_table(lam, vals, 1.0)
        mid = curve.psi(0.49)
        assert mid == pytest.approx(-(2 / math.sqrt(3)) * (0.49 - 0.49**1.5), abs=1e-7)

    def test_endpoint_validation(self):
        lam = np.linspace(0.0, 1.0, 51)
        with pytest.raises(ValueError):
            MechanismCurve.from_table(lam, lam + 1.0, 1.0)

    def test_out_of_range_rejected(self):
        lam = np.linspace(0.0, 1.0, 51)
        vals = -(lam - lam**1.5)
        curve = MechanismCurve.from_table(lam, vals, 1.0)
        with pytest.raises(ValueError):
            curve.psi(1.5)
