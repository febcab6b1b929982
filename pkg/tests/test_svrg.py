import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import planted, random_matrix, unit
from shiftinvert._random import make_rng
from shiftinvert.errors import DivergedError, ShiftError
from shiftinvert.linalg import RowMatrix, ShiftedOperator, apply_shifted, b_norm
from shiftinvert.svrg import (
    AcceleratedConfig,
    RegularizedProblem,
    SvrgConfig,
    accelerated_solve,
    component_gradient,
    default_gamma,
    epochs_for_ratio,
    in_accelerated_regime,
    objective,
    regularized_component_gradient,
    regularized_svrg_epoch,
    solve_constant_progress,
    solve_to_accuracy,
    svrg_epoch,
)


def all_gradients(b, x, rhs):
    return np.array([component_gradient(b, i, x, rhs) for i in range(b.n)])


def error_ratio(b, x, x0, xs):
    return b_norm(b, x - xs) ** 2 / b_norm(b, x0 - xs) ** 2


class TestComponentGradient:
    """Gradients of the non-convex components psi_i."""

    def test_single_row(self):
        b = ShiftedOperator(RowMatrix.from_dense([[1.0, 0.0]]), 2.0)
        np.testing.assert_array_equal(component_gradient(b, 0, np.array([1.0, 0.0]), np.zeros(2)), [1.0, 0.0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_components_sum_to_full_gradient(self, seed):
        rng = make_rng(seed)
        m = random_matrix(12, 5, seed)
        b = ShiftedOperator(m, 1.3 * np.linalg.eigvalsh(m.gram())[-1])
        x, rhs = rng.standard_normal(5), rng.standard_normal(5)
        total = all_gradients(b, x, rhs).sum(axis=0)
        np.testing.assert_allclose(total, apply_shifted(b, x) - rhs, rtol=1e-10, atol=1e-10 * np.abs(total).max())

    def test_finite_differences(self):
        m = random_matrix(8, 6, 3)
        b = ShiftedOperator(m, 40.0)
        rng = make_rng(4)
        rhs = rng.standard_normal(6)
        for i in range(8):
            a = m.dense_row(i)
            p = b.probabilities[i]

            def psi(z):
                return 0.5 * (b.shift * p * (z @ z) - (a @ z) ** 2) - rhs @ z / b.n

            x = rng.standard_normal(6)
            u = unit(rng.standard_normal(6))
            h = 1e-5 * np.linalg.norm(x)
            fd = (psi(x + h * u) - psi(x - h * u)) / (2 * h)
            exact = component_gradient(b, i, x, rhs) @ u
            assert fd == pytest.approx(exact, rel=1e-6, abs=1e-9)

    def test_index_bounds(self):
        b = ShiftedOperator(RowMatrix.from_dense(np.eye(2)), 2.0)
        with pytest.raises(IndexError):
            component_gradient(b, 2, np.zeros(2), np.zeros(2))


class TestSvrgConfig:
    """Parameter derivation and validation."""

    def test_from_theory(self):
        inst = planted(10, 0.1, seed=0)
        lam = 1.05
        b = ShiftedOperator(inst.matrix, lam)
        cfg = SvrgConfig.from_theory(b, 1.0)
        s_bar = 2 * 1.0 * inst.matrix.frob_sq / 0.05
        assert cfg.s_bar == pytest.approx(s_bar, rel=1e-12)
        assert cfg.eta == pytest.approx(1 / (8 * s_bar), rel=1e-12)
        assert cfg.m_max == math.ceil(64 * s_bar / 0.05)
        assert cfg.mu == pytest.approx(0.05)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            SvrgConfig(eta=0.0, m_max=1, s_bar=1.0, mu=1.0)
        with pytest.raises(ValueError):
            SvrgConfig(eta=0.5, m_max=1, s_bar=1.0, mu=1.0)
        with pytest.raises(ValueError):
            SvrgConfig(eta=0.1, m_max=0, s_bar=1.0, mu=1.0)

    def test_shift_below_estimate(self):
        b = ShiftedOperator(RowMatrix.from_dense(np.eye(2)), 0.9)
        with pytest.raises(ShiftError):
            SvrgConfig.from_theory(b, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e2), st.floats(1e-4, 1.0))
    def test_step_condition_always_met(self, frob, mu_frac):
        m = RowMatrix.from_dense([[math.sqrt(frob)]])
        b = ShiftedOperator(m, frob * (1 + mu_frac))
        cfg = SvrgConfig.from_theory(b, frob)
        assert 2 * cfg.eta * cfg.s_bar < 1
        assert cfg.m_max >= 1


class TestEpochArithmetic:
    """Halving-epoch counts."""

    def test_counts(self):
        assert epochs_for_ratio(2**-10) == 10
        assert epochs_for_ratio(1.0) == 0
        assert epochs_for_ratio(0.3) == 2

    def test_invalid(self):
        for bad in (0.0, -1.0, 1.5):
            with pytest.raises(ValueError):
                epochs_for_ratio(bad)

    def test_target_one_returns_start(self):
        b = ShiftedOperator(RowMatrix.from_dense(np.eye(2)), 2.0)
        cfg = SvrgConfig.from_theory(b, 1.0)
        x0 = np.array([0.3, -0.2])
        out = solve_to_accuracy(b, np.ones(2), x0, 1.0, cfg, make_rng(0))
        np.testing.assert_array_equal(out.solution, x0)
        assert out.epochs_run == 0 and out.grad_evals == 0


class TestSvrgEpoch:
    """A single variance-reduced epoch."""

    def test_optimum_is_stationary(self):
        inst = planted(10, 0.2, seed=1, n=30)
        b = ShiftedOperator(inst.matrix, 1.1)
        xs = make_rng(2).standard_normal(10)
        rhs = apply_shifted(b, xs)
        cfg = SvrgConfig.from_theory(b, inst.lam1)
        x = svrg_epoch(b, cfg, xs, rhs, make_rng(3))
        f_gap = objective(b, x, rhs) - objective(b, xs, rhs)
        assert abs(f_gap) <= 1e-10
        np.testing.assert_allclose(x, xs, atol=1e-9)

    def test_single_row_is_gradient_descent(self):
        a = np.array([[1.0, 2.0, -0.5]])
        b = ShiftedOperator(RowMatrix.from_dense(a), 6.0)
        cfg = SvrgConfig(eta=0.02, m_max=7, s_bar=5.0, mu=0.75, final_iterate=True)
        rhs = np.array([1.0, 0.0, 2.0])
        x0 = np.array([0.5, 0.5, 0.5])
        x = x0.copy()
        bmat = 6.0 * np.eye(3) - a.T @ a
        for _ in range(7):
            x = x - 0.02 * (bmat @ x - rhs)
        np.testing.assert_allclose(svrg_epoch(b, cfg, x0, rhs, make_rng(0)), x, rtol=1e-12)

    def test_halves_expected_error(self):
        """d=20, n=100, lambda = 1.01 lambda_1: mean error ratio over 200 seeds stays below 0.6."""
        inst = planted(20, 0.1, seed=1, n=100)
        lam = 1.01 * inst.lam1
        b = ShiftedOperator(inst.matrix, lam)
        cfg = SvrgConfig.from_theory(b, inst.lam1)
        rhs = unit(make_rng(0).standard_normal(20))
        xs = inst.oracle().solve(lam, rhs)
        x0 = np.zeros(20)
        ratios = [error_ratio(b, svrg_epoch(b, cfg, x0, rhs, make_rng(s)), x0, xs) for s in range(200)]
        assert np.mean(ratios) <= 0.6

    def test_divergence_detected(self):
        inst = planted(10, 0.2, seed=1, n=30)
        b = ShiftedOperator(inst.matrix, 0.5)
        cfg = SvrgConfig.from_theory(b, 0.2)
        with pytest.raises(DivergedError) as info:
            solve_to_accuracy(b, unit(np.ones(10)), np.zeros(10), 2**-20, cfg, make_rng(0))
        assert np.all(np.isfinite(info.value.last_iterate))

    def test_reproducible(self):
        inst = planted(10, 0.2, seed=1, n=30)
        b = ShiftedOperator(inst.matrix, 1.1)
        cfg = SvrgConfig.from_theory(b, inst.lam1)
        rhs = np.ones(10)
        x1 = svrg_epoch(b, cfg, np.zeros(10), rhs, make_rng(9))
        x2 = svrg_epoch(b, cfg, np.zeros(10), rhs, make_rng(9))
        np.testing.assert_array_equal(x1, x2)


class TestSolvers:
    """Chained epochs and their accounting."""

    def test_identity_system(self):
        b = ShiftedOperator(RowMatrix.from_dense(np.eye(2)), 2.0)
        cfg = SvrgConfig.from_theory(b, 1.0)
        rhs = np.array([0.7, -1.2])
        out = solve_to_accuracy(b, rhs, np.zeros(2), 1e-12, cfg, make_rng(0))
        np.testing.assert_allclose(out.solution, rhs, atol=1e-5)

    def test_grad_eval_accounting(self):
        inst = planted(8, 0.2, seed=2, n=25)
        b = ShiftedOperator(inst.matrix, 1.2)
        cfg = SvrgConfig(eta=1e-3, m_max=50, s_bar=10.0, mu=0.2, final_iterate=True)
        out = solve_to_accuracy(b, np.ones(8), np.zeros(8), 2**-4, cfg, make_rng(1))
        assert out.epochs_run == 4
        assert out.grad_evals == 4 * (25 + 50)
        one = solve_constant_progress(b, np.ones(8), np.zeros(8), cfg, make_rng(1))
        assert one.epochs_run == 1 and one.grad_evals == 25 + 50

    def test_target_accuracy(self):
        """Target 2^-10 at lambda = 1.5 lambda_1: mean ratio over 100 seeds at most 2^-9."""
        inst = planted(20, 0.1, seed=4, n=100)
        lam = 1.5 * inst.lam1
        b = ShiftedOperator(inst.matrix, lam)
        cfg = SvrgConfig.from_theory(b, inst.lam1)
        rhs = unit(make_rng(5).standard_normal(20))
        xs = inst.oracle().solve(lam, rhs)
        x0 = rhs / (lam - inst.lam1)
        ratios = []
        for s in range(100):
            out = solve_to_accuracy(b, rhs, x0, 2**-10, cfg, make_rng(s))
            assert out.epochs_run == 10
            ratios.append(error_ratio(b, out.solution, x0, xs))
        assert np.mean(ratios) <= 2 * 2**-10


class TestRegularized:
    """The gamma-regularized problem and its epoch."""

    def setup_method(self):
        self.inst = planted(12, 0.1, seed=6, n=40)
        self.lam = 1.05 * self.inst.lam1
        self.b = ShiftedOperator(self.inst.matrix, self.lam)
        rng = make_rng(7)
        self.rhs = rng.standard_normal(12)
        self.anchor = rng.standard_normal(12)

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            RegularizedProblem(self.b, -1.0, self.anchor, self.rhs)

    def test_gamma_zero_matches_plain_epoch(self):
        p = RegularizedProblem(self.b, 0.0, self.anchor, self.rhs)
        cfg = SvrgConfig.from_theory(self.b, self.inst.lam1)
        a = regularized_svrg_epoch(p, cfg, make_rng(3))
        c = svrg_epoch(self.b, cfg, self.anchor, self.rhs, make_rng(3))
        np.testing.assert_array_equal(a, c)

    def test_gradient_sum(self):
        gamma = 0.3
        p = RegularizedProblem(self.b, gamma, self.anchor, self.rhs)
        x = make_rng(8).standard_normal(12)
        total = sum(regularized_component_gradient(p, i, x) for i in range(self.b.n))
        expected = apply_shifted(self.b, x) - self.rhs + gamma * (x - self.anchor)
        np.testing.assert_allclose(total, expected, rtol=1e-10, atol=1e-12)

    def test_minimizer(self):
        gamma = 0.2
        p = RegularizedProblem(self.b, gamma, self.anchor, self.rhs)
        cfg = SvrgConfig.regularized_from_theory(self.b, self.inst.lam1, gamma)
        bg = (self.lam + gamma) * np.eye(12) - self.inst.matrix.gram()
        xs = np.linalg.solve(bg, self.rhs + gamma * self.anchor)
        rng = make_rng(9)
        x = self.anchor.copy()
        for _ in range(30):
            x = regularized_svrg_epoch(p, cfg, rng, x_start=x)
        assert np.linalg.norm(x - xs) <= 1e-4 * np.linalg.norm(xs)

    def test_config(self):
        gamma = 0.4
        cfg = SvrgConfig.regularized_from_theory(self.b, self.inst.lam1, gamma)
        mu = self.lam - self.inst.lam1
        s = (gamma**2 + 12 * self.inst.lam1 * self.inst.matrix.frob_sq) / (mu + gamma)
        assert cfg.mu == pytest.approx(mu + gamma)
        assert cfg.s_bar == pytest.approx(s)
        assert cfg.eta == pytest.approx(1 / (8 * s))


class TestAccelerated:
    """Proximal-point acceleration over regularized sub-solves."""

    def test_gamma_formula_and_clamp(self):
        inst = planted(20, 0.1, seed=0, n=50)
        m = inst.matrix
        b = ShiftedOperator(m, 1.001)
        raw = math.sqrt(m.d * 1.0 * m.frob_sq / m.nnz)
        assert default_gamma(b, 1.0) == pytest.approx(max(raw, 2 * 0.001))
        wide = ShiftedOperator(m, 50.0)
        assert default_gamma(wide, 1.0) == pytest.approx(2 * 49.0)

    def test_clamped_instance_still_accurate(self):
        inst = planted(6, 0.3, seed=1, n=12)
        lam = 3.0
        b = ShiftedOperator(inst.matrix, lam)
        assert default_gamma(b, inst.lam1) == pytest.approx(2 * (lam - inst.lam1))
        rhs = unit(np.arange(1.0, 7.0))
        xs = inst.oracle().solve(lam, rhs)
        out = accelerated_solve(b, rhs, 1e-8, AcceleratedConfig(inst.lam1, check_regime=False), make_rng(0))
        assert b_norm(b, out.solution - xs) ** 2 <= 1e-7 * b_norm(b, xs) ** 2

    def test_small_gap_instance(self):
        """d=50, n=200, gap=0.001: mean final error ratio over 50 seeds at most twice the target."""
        inst = planted(50, 0.001, seed=1, n=200)
        lam = 1.1 * inst.lam1
        b = ShiftedOperator(inst.matrix, lam)
        assert in_accelerated_regime(b, inst.lam1)
        rhs = unit(make_rng(3).standard_normal(50))
        xs = inst.oracle().solve(lam, rhs)
        target = 2**-6
        ratios = []
        for s in range(50):
            out = accelerated_solve(b, rhs, target, AcceleratedConfig(inst.lam1), make_rng(s))
            ratios.append(error_ratio(b, out.solution, np.zeros(50), xs))
        assert np.mean(ratios) <= 2 * target

    def test_falls_back_outside_regime(self):
        inst = planted(4, 0.3, seed=2, n=400)
        b = ShiftedOperator(inst.matrix, 10.0)
        assert not in_accelerated_regime(b, inst.lam1)
        rhs = np.ones(4)
        a = accelerated_solve(b, rhs, 2**-3, AcceleratedConfig(inst.lam1), make_rng(5))
        plain = solve_to_accuracy(b, rhs, np.zeros(4), 2**-3, SvrgConfig.from_theory(b, inst.lam1), make_rng(5))
        np.testing.assert_array_equal(a.solution, plain.solution)
        assert a.epochs_run == 3

    def test_budget(self):
        from shiftinvert.errors import BudgetExceededError

        inst = planted(50, 0.001, seed=1, n=200)
        b = ShiftedOperator(inst.matrix, 1.1 * inst.lam1)
        with pytest.raises(BudgetExceededError) as info:
            accelerated_solve(b, np.ones(50), 1e-6, AcceleratedConfig(inst.lam1, max_grad_evals=1000), make_rng(0))
        assert info.value.used > 1000 and info.value.partial is not None


class TestVarianceBounds:
    """Brute-force checks of the variance bounds and related identities."""

    def instances(self):
        for seed in range(4):
            inst = planted(15, 0.1, seed=seed, n=40)
            lam = 1.02 * inst.lam1
            yield inst, ShiftedOperator(inst.matrix, lam), make_rng(seed)

    def test_improved_bound(self):
        for inst, b, rng in self.instances():
            rhs = rng.standard_normal(15)
            xs = inst.oracle().solve(b.shift, rhs)
            mu = b.shift - inst.lam1
            frob = inst.matrix.frob_sq
            improved = 4 * inst.lam1 * frob / mu
            simple = 2 * (b.shift + frob) ** 2 / mu
            assert improved <= 8 * simple
            gs = all_gradients(b, xs, rhs)
            for _ in range(100):
                x = xs + rng.standard_normal(15) * 10 ** rng.uniform(-3, 1)
                diff = all_gradients(b, x, rhs) - gs
                var = np.sum(np.sum(diff**2, axis=1) / b.probabilities)
                f_gap = objective(b, x, rhs) - objective(b, xs, rhs)
                assert var <= improved * f_gap * (1 + 1e-9)
                assert var <= simple * f_gap * (1 + 1e-9)

    def test_norm_function_identity(self):
        for inst, b, rng in self.instances():
            rhs = rng.standard_normal(15)
            xs = inst.oracle().solve(b.shift, rhs)
            x = xs + rng.standard_normal(15)
            lhs = b_norm(b, x - xs) ** 2
            rhs_val = 2 * (objective(b, x, rhs) - objective(b, xs, rhs))
            assert lhs == pytest.approx(rhs_val, rel=1e-9)

    def test_unbiased_direction(self):
        for inst, b, rng in self.instances():
            rhs = rng.standard_normal(15)
            x0, xk = rng.standard_normal(15), rng.standard_normal(15)
            eta = 0.01
            g0 = apply_shifted(b, x0) - rhs
            diff = all_gradients(b, xk, rhs) - all_gradients(b, x0, rhs)
            p = b.probabilities[:, None]
            mean_dir = np.sum(p * (eta / p) * diff, axis=0) + eta * g0
            np.testing.assert_allclose(mean_dir, eta * (apply_shifted(b, xk) - rhs), rtol=1e-9, atol=1e-12)

    def test_regularized_bound(self):
        for inst, b, rng in self.instances():
            rhs, anchor = rng.standard_normal(15), rng.standard_normal(15)
            mu = b.shift - inst.lam1
            for gamma in (2 * mu, 10 * mu, 1.0):
                p = RegularizedProblem(b, gamma, anchor, rhs)
                bg = (b.shift + gamma) * np.eye(15) - inst.matrix.gram()
                xs = np.linalg.solve(bg, rhs + gamma * anchor)
                s_gamma = (gamma**2 + 12 * inst.lam1 * inst.matrix.frob_sq) / (mu + gamma)
                gs = np.array([regularized_component_gradient(p, i, xs) for i in range(b.n)])
                for _ in range(30):
                    x = xs + rng.standard_normal(15) * 10 ** rng.uniform(-3, 1)
                    diff = np.array([regularized_component_gradient(p, i, x) for i in range(b.n)]) - gs
                    var = np.sum(np.sum(diff**2, axis=1) / b.probabilities)
                    e = x - xs
                    assert var <= 2 * s_gamma * 0.5 * (e @ bg @ e) * (1 + 1e-9)
