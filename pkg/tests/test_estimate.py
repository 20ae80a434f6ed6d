import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvhawkes.estimate import (
    BlockEstimate,
    EstimationError,
    aggregate,
    cox_bias,
    cox_mle,
    estimate_naive,
    fit_block_mle,
    fit_ch,
    fit_global_mle,
    fit_seasonal,
    studentize,
    variance_hat,
    IntegratedEstimate,
)
from tvhawkes.likelihood import hawkes_loglik_value
from tvhawkes.model import DEFAULT_BOX, ParamBox, EventSequence, HawkesParams, make_partition, model_path, seasonal_curve
from tvhawkes.simulate import SimConfig, realize_path, simulate_hawkes, simulate_parametric


def fake_block(theta, H, n=10, free=(True, True, True), degenerate=False):
    return BlockEstimate(HawkesParams.from_array(theta), np.asarray(H, float), True, n, (False,) * 3,
                         0.0, np.zeros(3), free, degenerate)


class TestBlockMLE:
    def test_poisson_pinned(self):
        e = EventSequence(np.array([0.1, 0.5, 0.9, 1.3, 1.7]), 2.0)
        est = fit_block_mle(e, (0, 2), fixed={"a": 0.0})
        assert est.theta_hat.nu == 2.5
        assert est.theta_hat.a == 0.0

    def test_zero_events(self):
        e = EventSequence(np.array([50.0]), 100.0)
        est = fit_block_mle(e, (0, 10))
        assert est.degenerate and est.n_events == 0
        assert est.theta_hat.nu == DEFAULT_BOX.lo[0]
        assert est.on_boundary[0]

    def test_grid_oracle(self):
        lo, hi = DEFAULT_BOX.lo, DEFAULT_BOX.hi
        grids = [np.geomspace(lo[k], hi[k], 21) for k in range(3)]
        g = np.random.default_rng(7)
        for i in range(50):
            th = (g.uniform(0.3, 1.3), g.uniform(5, 15), g.uniform(20, 40))
            L = float(g.uniform(50, 150))
            e = simulate_parametric(th, L, 100 + i)
            est = fit_block_mle(e, (0, L))
            best = max(hawkes_loglik_value(e.times, L, x, y, z) for x in grids[0] for y in grids[1] for z in grids[2])
            assert best <= est.loglik + 1e-6

    def test_kkt(self):
        for s in range(30):
            e = simulate_parametric((0.8, 11, 30), 216.0, s)
            est = fit_block_mle(e, (0, 216.0))
            assert est.converged
            assert est.kkt_residual() < 1e-8 * max(1.0, abs(est.loglik))
            assert np.array_equal(est.hessian_at_hat, est.hessian_at_hat.T)
            assert DEFAULT_BOX.contains(est.theta)

    def test_fixed_b(self):
        e = simulate_parametric((0.8, 11, 30), 216.0, 3)
        est = fit_block_mle(e, (0, 216.0), fixed={"b": 30.0})
        assert est.theta_hat.b == 30.0 and est.converged

    @pytest.mark.parametrize("n", [1, 3, 7])
    def test_scale_equivariance(self, n):
        e = simulate_parametric((0.8, 11, 30), 216.0, 11)
        box = ParamBox(HawkesParams(0.05 / n, 0.5 / n, 2.0 / n), HawkesParams(5.0, 60.0, 150.0))
        raw = fit_block_mle(e, (0, 216.0), ParamBox(box.lo * n, box.hi * n))
        scaled = fit_block_mle(e, (0, 216.0), box, n_scale=n)
        assert np.allclose(scaled.theta * n, raw.theta, rtol=1e-12, atol=0)
        assert np.allclose(scaled.hessian_at_hat, raw.hessian_at_hat * n * n, rtol=1e-12)
        assert scaled.loglik == pytest.approx(hawkes_loglik_value(e.times, 216.0, *(scaled.theta * n)), rel=1e-12)

    def test_global_equals_single_block(self):
        e = simulate_parametric((0.8, 11, 30), 300.0, 2)
        g = fit_global_mle(e)
        nv = estimate_naive(e, make_partition(100, 100, 300.0))
        assert np.array_equal(nv.theta_bar, g.theta)


class TestAggregate:
    def test_mean_identity(self):
        rp = realize_path(model_path("II", 2160.0), 1)
        e = simulate_hawkes(SimConfig(1, 2160.0), rp)
        est = estimate_naive(e, make_partition(2730, 273, 2160.0))
        thetas = np.array([b.theta for b in est.per_block])
        assert np.allclose(est.theta_bar, thetas.mean(axis=0), rtol=1e-12)
        assert np.allclose(est.C_hat, est.C_hat.T)
        assert np.linalg.eigvalsh(est.C_hat).min() >= 0

    def test_identical_blocks(self):
        H = -np.diag([4.0, 2.0, 1.0])
        blocks = [fake_block((1, 2, 3), H) for _ in range(4)]
        est = aggregate(blocks)
        assert np.array_equal(est.theta_bar, [1, 2, 3])

    def test_single_poisson_variance(self):
        # N = 100 events on a block of length 10 -> nu = 10, C = nu^2 / N = 1
        times = np.linspace(0.05, 9.95, 100)
        box = ParamBox(HawkesParams(0.05, 0.5, 2.0), HawkesParams(50.0, 60.0, 150.0))
        est = fit_block_mle(EventSequence(times, 10.0), (0, 10), box, fixed={"a": 0.0})
        C, diag = variance_hat([est])
        assert C[0, 0] == pytest.approx(1.0, rel=1e-12)
        assert C[1, 1] == 0 and C[2, 2] == 0

    def test_two_identical(self):
        H = np.array([[-3.0, 0.5, 0.1], [0.5, -2.0, 0.2], [0.1, 0.2, -1.0]])
        V = np.linalg.inv(-H)
        C, _ = variance_hat([fake_block((1, 1, 1), H), fake_block((1, 1, 1), H)])
        assert np.allclose(C, V / 2, rtol=1e-12)

    def test_all_degenerate(self):
        with pytest.raises(EstimationError):
            variance_hat([fake_block((1, 1, 1), np.zeros((3, 3)), 0, degenerate=True)])

    def test_regularization_flag_and_abort(self):
        bad = np.diag([-1.0, -1.0, 0.5])
        good = -np.eye(3)
        C, d = variance_hat([fake_block((1, 1, 1), bad)] + [fake_block((1, 1, 1), good)] * 19)
        assert d["n_regularized"] == 1
        assert np.linalg.eigvalsh(C).min() >= 0
        with pytest.raises(EstimationError):
            variance_hat([fake_block((1, 1, 1), bad)] * 3 + [fake_block((1, 1, 1), good)] * 7)

    @given(st.lists(st.floats(0.5, 5), min_size=3, max_size=3))
    def test_psd(self, d):
        C, _ = variance_hat([fake_block((1, 1, 1), -np.diag(d))])
        assert np.all(np.linalg.eigvalsh(C) >= 0)


class TestStudentize:
    def _est(self, theta_bar, C):
        return IntegratedEstimate(np.asarray(theta_bar, float), np.asarray(C, float), [])

    def test_arithmetic(self):
        z = studentize(self._est([2, 1, 1], np.diag([4, 1, 1])), [1, 1, 1])
        assert np.allclose(z, [0.5, 0, 0])

    def test_zero(self):
        assert np.all(studentize(self._est([1, 2, 3], np.eye(3)), [1, 2, 3]) == 0)

    def test_nonpositive(self):
        with pytest.raises(EstimationError):
            studentize(self._est([1, 2, 3], np.diag([1, 0, 1])), [1, 2, 3])


class TestCox:
    def test_explicit(self):
        assert cox_mle(100, 50).theta_hat == 4
        assert cox_mle(0, 10).theta_hat == 0

    def test_bias(self):
        assert cox_bias(1.0, 100) == pytest.approx(0.01)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            cox_mle(3, 0)


class TestCH:
    def test_model_III_recovery(self):
        rp = realize_path(model_path("III"), 5)
        e = simulate_hawkes(SimConfig(5, rp.T), rp)
        fit = fit_ch(e)
        err = fit.summary - rp.integrated_parameter()
        se = np.sqrt(np.diag(fit.cov))
        assert fit.converged
        assert abs(err[0]) < 0.05 and abs(err[1]) < 4 * se[3] + 0.2 and abs(err[2]) < 4 * se[4] + 0.5
        assert np.allclose(fit.params.beta, (-0.84, -0.26, -0.39), atol=4 * se[:3].max() + 0.05)


class TestSeasonal:
    def test_exact(self):
        beta = (-0.84, -0.26, -0.39)
        x = np.linspace(0, 1, 12)
        fit = fit_seasonal(list(zip(x, seasonal_curve(x, beta))))
        assert np.allclose(fit.beta, beta, atol=1e-6)
        assert fit.residual_ss < 1e-20
        assert not fit.degenerate

    def test_constant_is_degenerate(self):
        x = np.linspace(0, 1, 10)
        fit = fit_seasonal(list(zip(x, np.full(10, 0.7))))
        assert fit.degenerate

    def test_too_few(self):
        with pytest.raises(ValueError):
            fit_seasonal([(0, 1), (1, 2), (2, 3)])

    def test_horizon_scaling(self):
        beta = (-1.0, 0.1, -0.2)
        t = np.linspace(0, 18000, 10)
        fit = fit_seasonal(list(zip(t, seasonal_curve(t / 18000, beta))), T=18000)
        assert np.allclose(fit.beta, beta, atol=1e-6)
