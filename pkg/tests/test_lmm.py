"""Method construction, characteristic polynomials and stepping."""

import json

import numpy as np
import pytest

from ccsnode.errors import (
    DivergedStateError,
    GridMismatchError,
    ImplicitNotSupportedError,
    LengthMismatchError,
    NonFiniteCoefficientError,
    NotMonicError,
)
from ccsnode.lmm import (
    Polynomial,
    StepHistory,
    bootstrap,
    char_polynomials,
    eval_poly,
    lmm_step,
    make_method,
    method_from_json,
    method_to_json,
    poly_derivative,
    rk4_step,
)
from ccsnode.solvers import IvpProblem, ab4_method


class TestMakeMethod:
    def test_basic(self):
        m = make_method("euler", [-1.0, 1.0], [1.0, 0.0])
        assert m.s == 1
        assert m.is_explicit
        np.testing.assert_array_equal(m.a, [-1.0, 1.0])

    def test_implicit_tail_accepted_by_default(self):
        m = make_method("x", [-2.0, 1.0, 1.0], [0.75, 2.0, 0.25])
        assert not m.is_explicit

    def test_require_explicit(self):
        with pytest.raises(ImplicitNotSupportedError):
            make_method("x", [-2.0, 1.0, 1.0], [0.75, 2.0, 0.25],
                        require_explicit=True)

    def test_not_monic(self):
        with pytest.raises(NotMonicError):
            make_method("x", [-1.0, 2.0], [1.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            make_method("x", [-1.0, 1.0], [1.0, 0.0, 0.0])

    def test_too_short(self):
        with pytest.raises(LengthMismatchError):
            make_method("x", [1.0], [0.0])

    def test_non_finite(self):
        with pytest.raises(NonFiniteCoefficientError):
            make_method("x", [-1.0, 1.0], [np.nan, 0.0])

    def test_json_round_trip(self):
        m = make_method("ab2", [0.0, -1.0, 1.0], [-0.5, 1.5, 0.0])
        m2 = method_from_json(method_to_json(m))
        assert m2.name == m.name
        np.testing.assert_array_equal(m2.a, m.a)
        np.testing.assert_array_equal(m2.b, m.b)

    def test_json_from_file(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"name": "e", "a": [-1, 1], "b": [1, 0]}))
        m = method_from_json(str(p))
        assert m.name == "e"


class TestPolynomials:
    def test_char_polynomials_keep_full_a(self):
        m = make_method("x", [-2.0, 1.0, 1.0], [0.75, 2.0, 0.25])
        p, q = char_polynomials(m)
        np.testing.assert_array_equal(p.coeffs, [-2.0, 1.0, 1.0])
        # nonzero implicit tail stays in Q
        np.testing.assert_array_equal(q.coeffs, [0.75, 2.0, 0.25])

    def test_char_polynomials_trim_trailing_zeros(self):
        m = make_method("x", [0.0, -1.0, 1.0], [-0.5, 1.5, 0.0])
        _, q = char_polynomials(m)
        np.testing.assert_array_equal(q.coeffs, [-0.5, 1.5])

    def test_char_polynomials_zero_b(self):
        m = make_method("x", [0.0, -1.0, 1.0], [0.0, 0.0, 0.0])
        _, q = char_polynomials(m)
        np.testing.assert_array_equal(q.coeffs, [0.0])

    def test_eval_poly_matches_numpy(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            coeffs = rng.standard_normal(rng.integers(1, 7))
            p = Polynomial(coeffs)
            for z in [0.3, -1.2, 2.0 + 1.0j]:
                expected = np.polyval(coeffs[::-1], z)
                assert abs(eval_poly(p, z) - expected) < 1e-12 * max(1, abs(expected))

    def test_poly_derivative(self):
        p = Polynomial(np.array([3.0, 2.0, 1.0]))  # 3 + 2z + z^2
        d = poly_derivative(p)
        np.testing.assert_array_equal(d.coeffs, [2.0, 2.0])

    def test_poly_derivative_constant(self):
        d = poly_derivative(Polynomial(np.array([5.0])))
        np.testing.assert_array_equal(d.coeffs, [0.0])


class TestRk4:
    def test_exponential_series(self):
        # one step on x' = x reproduces the degree-4 Taylor polynomial
        h = 0.3
        got = rk4_step(0.0, np.array([1.0]), h, lambda t, x: x)
        expected = 1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24
        assert abs(got[0] - expected) < 1e-15

    def test_k1_reuse_is_exact(self):
        f = lambda t, x: np.sin(x) + t
        x = np.array([0.7, -0.2])
        a = rk4_step(0.1, x, 0.05, f)
        b = rk4_step(0.1, x, 0.05, f, k1=f(0.1, x))
        np.testing.assert_array_equal(a, b)


class TestStepping:
    def test_ab2_step_matches_hand_formula(self):
        # AB2: x_{k+2} = x_{k+1} + h(3/2 f_{k+1} - 1/2 f_k)
        m = make_method("ab2", [0.0, -1.0, 1.0], [-0.5, 1.5, 0.0])
        f = lambda t, x: -2.0 * x
        h = 0.1
        x0, x1 = np.array([1.0]), np.array([0.8])
        hist = StepHistory(states=[x0, x1], f_values=[f(0.0, x0), None],
                           t_latest=h, h=h)
        new, new_hist = lmm_step(m, hist, f)
        expected = x1 + h * (1.5 * f(h, x1) - 0.5 * f(0.0, x0))
        np.testing.assert_allclose(new, expected, rtol=1e-15)
        assert new_hist.f_values[-1] is None
        assert new_hist.t_latest == pytest.approx(2 * h)

    def test_lazy_f_value_costs_one_eval(self):
        m = make_method("ab2", [0.0, -1.0, 1.0], [-0.5, 1.5, 0.0])
        calls = []

        def f(t, x):
            calls.append(t)
            return -x

        hist = StepHistory(states=[np.array([1.0]), np.array([0.9])],
                           f_values=[np.array([-1.0]), None],
                           t_latest=0.1, h=0.1)
        lmm_step(m, hist, f)
        assert len(calls) == 1

    def test_history_length_check(self):
        m = ab4_method()
        hist = StepHistory(states=[np.array([1.0])], f_values=[None],
                           t_latest=0.0, h=0.1)
        with pytest.raises(LengthMismatchError):
            lmm_step(m, hist, lambda t, x: x)

    def test_diverged_state(self):
        m = make_method("ab2", [0.0, -1.0, 1.0], [-0.5, 1.5, 0.0])
        big = np.array([1e308])
        hist = StepHistory(states=[big, big], f_values=[big, None],
                           t_latest=0.1, h=0.1)
        with pytest.raises(DivergedStateError) as exc, \
                np.errstate(over="ignore"):
            lmm_step(m, hist, lambda t, x: x * 10.0)
        assert exc.value.partial_states is not None


class TestBootstrap:
    def test_eval_count(self):
        m = ab4_method()
        calls = []

        def f(t, x):
            calls.append(t)
            return -x

        ivp = IvpProblem(f=f, x0=np.array([1.0]), t0=0.0, t1=1.0)
        hist = bootstrap(m, ivp, 0.1)
        assert len(hist.states) == 4
        # one eval at x_0 plus four per additional starting point
        assert len(calls) == 1 + 4 * (m.s - 1)
        assert all(v is not None for v in hist.f_values)

    def test_starting_values_match_rk4(self):
        m = ab4_method()
        f = lambda t, x: -x
        ivp = IvpProblem(f=f, x0=np.array([1.0]), t0=0.0, t1=1.0)
        hist = bootstrap(m, ivp, 0.1)
        x = np.array([1.0])
        for k in range(1, 4):
            x = rk4_step((k - 1) * 0.1, x, 0.1, f)
            np.testing.assert_allclose(hist.states[k], x, rtol=1e-15)

    def test_bad_step_size(self):
        ivp = IvpProblem(f=lambda t, x: x, x0=np.array([1.0]), t0=0.0, t1=1.0)
        with pytest.raises(GridMismatchError):
            bootstrap(ab4_method(), ivp, -0.1)
