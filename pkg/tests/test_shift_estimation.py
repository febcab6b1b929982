import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import planted
from shiftinvert._random import make_rng
from shiftinvert.errors import EstimationFailedError
from shiftinvert.linalg import RowMatrix, apply_sigma
from shiftinvert.shift_estimation import (
    eig_estimate,
    estimate_lambda1_gapfree,
    estimate_shift,
    gapfree_shift,
    iteration_guard,
    power_steps,
)
from shiftinvert.solvers import InverseBlockFactory
from shiftinvert.synthetic import diag_spectrum

EXACT = InverseBlockFactory("exact-dense")


def dense_apply(mat):
    return lambda y: mat @ y


class TestEigEstimate:
    """Two-column block power iteration."""

    def test_identity(self):
        for t in (1, 3, 10):
            pair = eig_estimate(dense_apply(np.eye(4)), 4, t, make_rng(t))
            assert pair.tilde_lambda1 == pytest.approx(1.0, abs=1e-14)
            assert pair.tilde_lambda2 == pytest.approx(1.0, abs=1e-14)

    def test_diag_two_by_two(self):
        m = np.diag([1.0, 0.5])
        for seed in range(100):
            pair = eig_estimate(dense_apply(m), 2, 40, make_rng(seed))
            assert 0.999 <= pair.tilde_lambda1 <= 1.0 + 1e-14

    def test_block_stays_orthonormal(self):
        rng = make_rng(0)
        g = rng.standard_normal((30, 30))
        m = g @ g.T
        seen = []

        def check(y):
            seen.append(np.linalg.norm(y.T @ y - np.eye(2)))

        eig_estimate(dense_apply(m), 30, 50, rng, on_block=check)
        assert len(seen) == 50
        assert max(seen) <= 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 30))
    def test_ordered_and_bounded(self, seed, d, t):
        rng = make_rng(seed)
        g = rng.standard_normal((d, d))
        m = g @ g.T
        top = np.linalg.eigvalsh(m)[-1]
        pair = eig_estimate(dense_apply(m), d, t, rng)
        assert pair.tilde_lambda1 >= pair.tilde_lambda2
        assert pair.tilde_lambda1 <= top * (1 + 1e-12)

    def test_invalid_steps(self):
        with pytest.raises(ValueError):
            eig_estimate(dense_apply(np.eye(2)), 2, 0, make_rng(0))

    def test_power_steps(self):
        assert power_steps(150, 20) == math.ceil(150 * math.log(20))
        assert power_steps(150, 1) == 1


class TestEstimateShift:
    """The shift search loop."""

    def test_diag_example(self):
        inst = diag_spectrum([1.0, 0.5])
        est = estimate_shift(inst.matrix, solver_factory=EXACT, rng=make_rng(0))
        assert est.iterations <= 6
        assert 1.0041666 <= est.lambda_bar <= 1.0625

    def test_history_invariants(self):
        for gap in (0.3, 0.03, 0.003):
            for seed in range(5):
                inst = planted(20, gap, seed=seed)
                lam1 = inst.lam1
                est = estimate_shift(inst.matrix, solver_factory=EXACT, rng=make_rng(seed))
                h = est.history
                assert len(h) == est.iterations + 1
                # First estimate sandwich.
                l1_0 = h[0][1]
                assert 0 <= lam1 - l1_0 <= lam1 / est.alpha
                assert 0.5 * (1 - 3 / est.alpha) * lam1 <= h[0][0] - lam1 <= 0.5 * lam1
                for i in range(1, len(h)):
                    bar, l1, l2 = h[i]
                    assert bar < h[i - 1][0]
                    assert l1 <= bar
                    # Halving toward lambda_1.
                    assert bar - lam1 <= 0.5 * (h[i - 1][0] - lam1) + 1e-12
                    # Second-eigenvalue control.
                    assert bar - l2 >= gap * lam1 / 4
                bar, l1, l2 = h[-1]
                assert bar - l1 < 0.1 * (bar - l2)
                assert (1 + gap / 120) * lam1 <= est.lambda_bar <= (1 + gap / 8) * lam1
                assert est.lambda1_upper >= lam1 * (1 - 1e-12)

    def test_small_gap_iteration_count(self):
        inst = planted(20, 1e-3, seed=3)
        est = estimate_shift(inst.matrix, solver_factory=EXACT, rng=make_rng(3))
        assert est.iterations <= math.ceil(math.log2(10 / 1e-3)) + 1

    def test_scale_equivariance(self):
        inst = planted(15, 0.05, seed=4)
        c = 3.0
        a = estimate_shift(inst.matrix, solver_factory=EXACT, rng=make_rng(8))
        b = estimate_shift(inst.matrix.scaled(c), solver_factory=EXACT, rng=make_rng(8))
        assert b.lambda_bar == pytest.approx(c**2 * a.lambda_bar, rel=1e-8)
        assert b.iterations == a.iterations

    def test_svrg_solves(self):
        inst = planted(10, 0.3, seed=1, n=30)
        factory = InverseBlockFactory("svrg", target_ratio=1e-6)
        est = estimate_shift(inst.matrix, alpha=101, solver_factory=factory, rng=make_rng(0), t=30)
        assert (1 + 0.3 / 120) <= est.lambda_bar <= (1 + 0.3 / 8)
        assert factory.grad_evals > 0

    def test_guard_on_zero_gap(self):
        inst = diag_spectrum([1.0, 1.0, 0.5])
        with pytest.raises(EstimationFailedError) as info:
            estimate_shift(inst.matrix, solver_factory=EXACT, rng=make_rng(0), gap_floor=0.1)
        assert len(info.value.history) == iteration_guard(0.1) + 1
        assert iteration_guard(0.1) == 4 * math.ceil(math.log2(100))

    def test_printed_rule_exits_immediately(self):
        inst = planted(10, 0.01, seed=2)
        est = estimate_shift(inst.matrix, solver_factory=EXACT, rng=make_rng(0), exit_rule="printed")
        assert est.iterations == 1

    def test_argument_validation(self):
        m = RowMatrix.from_dense(np.eye(2))
        with pytest.raises(ValueError):
            estimate_shift(m, alpha=100, rng=make_rng(0))
        with pytest.raises(ValueError):
            estimate_shift(m, exit_rule="other", rng=make_rng(0))
        with pytest.raises(ValueError):
            estimate_shift(m)

    def test_zero_matrix(self):
        with pytest.raises(EstimationFailedError):
            estimate_shift(RowMatrix.from_dense(np.zeros((2, 2))), solver_factory=EXACT, rng=make_rng(0))


class TestGapFreeShift:
    """Shift for the gap-free driver from a sharp top-eigenvalue estimate."""

    def test_bracket(self):
        for eps in (0.5, 0.1, 0.01):
            inst = diag_spectrum([1.0, 0.999, 0.9, 0.5, 0.1])
            lam, l1 = gapfree_shift(inst.matrix, eps, make_rng(1))
            assert abs(l1 - 1.0) <= eps / 400
            assert 1.0 < lam <= 1.0 + eps / 100

    def test_scaling(self):
        inst = planted(10, 0.1, seed=0)
        a = estimate_lambda1_gapfree(inst.matrix, 0.1, make_rng(2))
        b = estimate_lambda1_gapfree(inst.matrix.scaled(2.0), 0.1, make_rng(2))
        assert b == pytest.approx(4 * a, rel=1e-12)

    def test_power_product(self):
        inst = planted(10, 0.1, seed=0)
        pair = eig_estimate(lambda y: apply_sigma(inst.matrix, y), 10, 200, make_rng(0))
        assert pair.tilde_lambda1 == pytest.approx(inst.lam1, rel=1e-12)

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            gapfree_shift(RowMatrix.from_dense(np.eye(2)), 0.0, make_rng(0))
