"""Closed-form band initialization against gradient descent and one-shot oracles."""

import numpy as np
import pytest

from ffnb.errors import DimensionError, StreamFormatError
from ffnb.initializers import InitAccumulators, coding_matrix, mono_task_init, multi_task_init
from ffnb.network import ResidualBasis


def random_basis(rng, d, p):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return ResidualBasis(layer=1, full_basis=q, p=p)


def ridge_objective(alpha, psi, basis, coding, gamma):
    resid = alpha @ basis.residual.T @ psi - coding
    return 0.5 * gamma * np.sum(alpha**2) + 0.5 * np.sum(resid**2)


def gd_minimize(psi, basis, coding, gamma, steps=2000):
    """Plain gradient descent from zero with a safe step size."""
    b = basis.residual.T @ psi
    bbt = b @ b.T
    step = 1.0 / (np.linalg.eigvalsh(bbt).max() + gamma)
    alpha = np.zeros((coding.shape[0], b.shape[0]))
    for _ in range(steps):
        grad = (alpha @ b - coding) @ b.T + gamma * alpha
        alpha = alpha - step * grad
    return alpha


class TestCodingMatrix:
    def test_membership_indicator(self):
        labels = [3, 7, 3, 9]
        c = coding_matrix(labels, current_band_classes=[3, 9], band_size=2)
        np.testing.assert_array_equal(c, [[1, 0, 1, 1], [1, 0, 1, 1]])

    def test_rows_identical(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 5, size=30)
        c = coding_matrix(labels, [1, 2], band_size=4)
        assert c.shape == (4, 30)
        assert np.all(c == c[0])

    def test_unknown_label_guard(self):
        with pytest.raises(StreamFormatError):
            coding_matrix([0, 42], [0], band_size=1, known_classes=[0, 1])


class TestMonoInit:
    def test_matches_gradient_descent(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            d, p, n, k = 8, 3, 40, 2
            psi = rng.standard_normal((d, n))
            basis = random_basis(rng, d, p)
            coding = coding_matrix(rng.integers(0, 2, n), [1], k)
            gamma = 1e-2
            alpha = mono_task_init(psi, basis, coding, gamma)
            oracle = gd_minimize(psi, basis, coding, gamma)
            ours = ridge_objective(alpha, psi, basis, coding, gamma)
            theirs = ridge_objective(oracle, psi, basis, coding, gamma)
            assert ours <= theirs + 1e-8

    def test_normal_equations_hold(self):
        """At the minimizer, the ridge gradient is exactly zero."""
        rng = np.random.default_rng(2)
        psi = rng.standard_normal((6, 25))
        basis = random_basis(rng, 6, 2)
        coding = coding_matrix(rng.integers(0, 2, 25), [1], 3)
        gamma = 0.5
        alpha = mono_task_init(psi, basis, coding, gamma)
        b = basis.residual.T @ psi
        grad = (alpha @ b - coding) @ b.T + gamma * alpha
        np.testing.assert_allclose(grad, 0.0, atol=1e-9)

    def test_dimension_errors(self):
        rng = np.random.default_rng(3)
        basis = random_basis(rng, 6, 2)
        with pytest.raises(DimensionError):
            mono_task_init(rng.standard_normal((5, 10)), basis, np.zeros((2, 10)), 0.1)
        with pytest.raises(DimensionError):
            mono_task_init(rng.standard_normal((6, 10)), basis, np.zeros((2, 9)), 0.1)


class TestMultiInit:
    def test_single_ingest_equals_mono(self):
        rng = np.random.default_rng(4)
        d, k = 7, 3
        psi = rng.standard_normal((d, 30))
        coding = coding_matrix(rng.integers(0, 3, 30), [0, 1], k)
        basis = random_basis(rng, d, 2)
        acc = InitAccumulators.empty(1, d, k, gamma=1e-2)
        acc.ingest(psi, coding)
        np.testing.assert_allclose(
            multi_task_init(acc, basis),
            mono_task_init(psi, basis, coding, 1e-2),
            atol=1e-12,
        )

    def test_incremental_equals_one_shot(self):
        """Accumulating two chunks equals ingesting their concatenation."""
        rng = np.random.default_rng(5)
        d, k = 9, 2
        psi1, psi2 = rng.standard_normal((d, 20)), rng.standard_normal((d, 35))
        c1 = coding_matrix(rng.integers(0, 2, 20), [1], k)
        c2 = coding_matrix(rng.integers(0, 2, 35), [1], k)
        basis = random_basis(rng, d, 3)
        inc = InitAccumulators.empty(1, d, k, gamma=1e-2)
        inc.ingest(psi1, c1)
        inc.ingest(psi2, c2)
        shot = InitAccumulators.empty(1, d, k, gamma=1e-2)
        shot.ingest(np.hstack([psi1, psi2]), np.hstack([c1, c2]))
        a, b = multi_task_init(inc, basis), multi_task_init(shot, basis)
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-10

    def test_previous_tasks_pull_band_toward_zero_on_their_data(self):
        """With an old task in the gram term, the new band answers weaker there."""
        rng = np.random.default_rng(6)
        d, k = 6, 2
        old = rng.standard_normal((d, 50)) + 3.0
        new = rng.standard_normal((d, 50)) - 3.0
        basis = random_basis(rng, d, 0)
        ones = np.ones((k, 50))
        with_history = InitAccumulators.empty(1, d, k, gamma=1e-3)
        with_history.ingest(old, np.zeros((k, 50)))  # old task: all-zero targets
        with_history.ingest(new, ones)
        a_hist = multi_task_init(with_history, basis)
        a_mono = mono_task_init(new, basis, ones, 1e-3)
        # responses on the old task's data
        r_hist = np.abs(a_hist @ basis.residual.T @ old).mean()
        r_mono = np.abs(a_mono @ basis.residual.T @ old).mean()
        assert r_hist < r_mono

    def test_begin_band_resets_cross_keeps_gram(self):
        rng = np.random.default_rng(7)
        acc = InitAccumulators.empty(1, 5, 2, gamma=0.1)
        acc.ingest(rng.standard_normal((5, 10)), np.ones((2, 10)))
        gram_before = acc.gram.copy()
        acc.begin_band(3)
        assert np.array_equal(acc.gram, gram_before)
        assert acc.cross.shape == (5, 3)
        assert not acc.cross.any()

    def test_copy_is_independent(self):
        rng = np.random.default_rng(8)
        acc = InitAccumulators.empty(1, 4, 2, gamma=0.1)
        acc.ingest(rng.standard_normal((4, 6)), np.ones((2, 6)))
        snap = acc.copy()
        snap.ingest(rng.standard_normal((4, 6)), np.zeros((2, 6)))
        assert not np.array_equal(acc.gram, snap.gram)

    def test_grow_zero_pads(self):
        acc = InitAccumulators.empty(1, 2, 2, gamma=0.1)
        acc.ingest(np.ones((2, 4)), np.ones((2, 4)))
        acc.grow_to(5)
        assert acc.gram.shape == (5, 5)
        assert acc.cross.shape == (5, 2)
        assert acc.gram[2:, :].sum() == 0.0
