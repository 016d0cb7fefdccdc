"""Integration driver, NFE accounting, divergence handling, Lipschitz."""

import numpy as np
import pytest

from ccsnode.ccs import example_methods
from ccsnode.datasets import toy_exact, toy_ivp
from ccsnode.errors import EmptySamplesError, GridMismatchError
from ccsnode.solvers import (
    IvpProblem,
    SolverConfig,
    ab4_method,
    estimate_lipschitz,
    grid_size,
    integrate,
    nesterov_step,
    trace_to_csv,
)


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="dopri5", h=0.1)

    def test_missing_h(self):
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="euler")

    def test_negative_h(self):
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="rk4", h=-0.1)

    def test_nesterov_needs_exactly_one_of_h_L(self):
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="nesterov", beta=0.5)
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="nesterov", h=0.1, L=20.0, beta=0.5)

    def test_nesterov_derives_counterpart(self):
        cfg = SolverConfig(kind="nesterov", h=0.1, beta=0.5)
        assert cfg.L == pytest.approx(20.0)
        cfg = SolverConfig(kind="nesterov", L=20.0, beta=0.5)
        assert cfg.h == pytest.approx(0.1)

    def test_nesterov_bad_beta(self):
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="nesterov", h=0.1, beta=1.0)

    def test_lmm_needs_method(self):
        with pytest.raises(GridMismatchError):
            SolverConfig(kind="lmm", h=0.1)

    def test_ivp_span(self):
        with pytest.raises(GridMismatchError):
            IvpProblem(f=lambda t, x: x, x0=np.array([1.0]), t0=1.0, t1=0.0)

    def test_grid_size(self):
        assert grid_size(0.0, 1.0, 0.1) == 10
        assert grid_size(0.0, 1.0, 0.0125) == 80
        with pytest.raises(GridMismatchError):
            grid_size(0.0, 1.0, 0.3)


class TestIntegrate:
    def test_euler_first_step(self):
        trace = integrate(SolverConfig(kind="euler", h=0.1), toy_ivp())
        np.testing.assert_allclose(trace.state_values()[1], [0.2, -0.6], atol=1e-15)

    def test_rk4_endpoint_accuracy(self):
        trace = integrate(SolverConfig(kind="rk4", h=0.01), toy_ivp())
        err = np.max(np.abs(trace.state_values()[-1] - toy_exact(1.0)))
        assert err < 1e-8

    def test_ab4_beats_euler(self):
        e1 = integrate(SolverConfig(kind="euler", h=0.01), toy_ivp())
        e4 = integrate(SolverConfig(kind="ab4", h=0.01), toy_ivp())
        exact = toy_exact(1.0)
        err1 = np.max(np.abs(e1.state_values()[-1] - exact))
        err4 = np.max(np.abs(e4.state_values()[-1] - exact))
        assert err4 < err1 / 100

    def test_custom_lmm_kind_runs(self):
        cfg = SolverConfig(kind="lmm", h=0.05, method=example_methods()["ex3"])
        trace = integrate(cfg, toy_ivp())
        assert not trace.diverged
        assert len(trace.states) == 21

    def test_multistep_needs_enough_steps(self):
        with pytest.raises(GridMismatchError):
            integrate(SolverConfig(kind="ab4", h=0.5), toy_ivp())

    def test_nfe_counts(self):
        ivp = toy_ivp()
        n = 10
        assert integrate(SolverConfig(kind="euler", h=0.1), ivp).nfe == n
        assert integrate(SolverConfig(kind="rk4", h=0.1), ivp).nfe == 4 * n
        assert integrate(SolverConfig(kind="nesterov", h=0.1, beta=0.5), ivp).nfe == n
        # s-step methods: bootstrap 1 + 4(s-1), then one per remaining step,
        # and the newest state's value is never evaluated
        assert integrate(SolverConfig(kind="ab4", h=0.1), ivp).nfe == n + 9
        cfg2 = SolverConfig(kind="lmm", h=0.1, method=example_methods()["ex2"])
        assert integrate(cfg2, ivp).nfe == n + 3

    def test_times_match_states(self):
        trace = integrate(SolverConfig(kind="rk4", h=0.2), toy_ivp())
        assert len(trace.times) == len(trace.states) == 6
        np.testing.assert_allclose(trace.times, [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])


class TestDivergence:
    def test_euler_blowup_truncates_and_flags(self):
        ivp = IvpProblem(f=lambda t, x: 1e200 * x, x0=np.array([1.0]),
                         t0=0.0, t1=1.0)
        trace = integrate(SolverConfig(kind="euler", h=0.1), ivp)
        assert trace.diverged
        assert trace.first_bad_index == len(trace.states) - 1
        assert not np.all(np.isfinite(trace.state_values()[-1]))
        assert len(trace.times) == len(trace.states) < 11

    def test_multistep_blowup_reports_like_onestep(self):
        ivp = IvpProblem(f=lambda t, x: 1e200 * x, x0=np.array([1.0]),
                         t0=0.0, t1=1.0)
        trace = integrate(SolverConfig(kind="ab4", h=0.1), ivp)
        assert trace.diverged
        assert trace.first_bad_index == len(trace.states) - 1
        assert len(trace.times) == len(trace.states)

    def test_unstable_method_amplifies_on_toy(self):
        # the spurious root at -2 doubles any perturbation every step
        cfg = SolverConfig(kind="lmm", h=0.01, method=example_methods()["ex1"])
        trace = integrate(cfg, toy_ivp())
        assert np.max(np.abs(trace.state_values()[-1])) > 1e20


class TestNesterov:
    def test_hand_computed_first_step(self):
        ivp = toy_ivp()
        x1, y1 = nesterov_step(ivp.x0, ivp.x0, 0.0, ivp.f, L=20.0, beta=0.5)
        np.testing.assert_allclose(y1, [0.35, -1.8], atol=1e-15)
        np.testing.assert_allclose(x1, [0.275, -1.2], atol=1e-15)

    def test_beta_zero_equals_euler(self):
        ivp = toy_ivp()
        e = integrate(SolverConfig(kind="euler", h=0.1), ivp)
        n = integrate(SolverConfig(kind="nesterov", h=0.1, beta=0.0), ivp)
        np.testing.assert_allclose(n.state_values(), e.state_values(), rtol=1e-14)


class TestLipschitz:
    def test_linear_field_spectral_norm(self):
        a = np.array([[3.0, 0.0], [0.0, -4.0]])
        est = estimate_lipschitz(lambda t, x: a @ x, [(0.0, np.zeros(2))])
        assert est == pytest.approx(4.0, rel=1e-6)

    def test_toy_at_initial_state(self):
        ivp = toy_ivp()
        est = estimate_lipschitz(ivp.f, [(0.0, ivp.x0)])
        # Jacobian [[0, 1], [-48, -14]] has spectral norm just above 50
        assert est == pytest.approx(50.0, abs=0.1)

    def test_empty_samples(self):
        with pytest.raises(EmptySamplesError):
            estimate_lipschitz(lambda t, x: x, [])


class TestCsvExport:
    def test_round_trip(self, tmp_path):
        trace = integrate(SolverConfig(kind="euler", h=0.25), toy_ivp())
        path = tmp_path / "trace.csv"
        trace_to_csv(trace, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x_0,x_1"
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 0], trace.times)
        np.testing.assert_allclose(data[:, 1:], trace.state_values())
