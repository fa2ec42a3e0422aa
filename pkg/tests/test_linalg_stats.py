from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infuq.errors import DimensionMismatch, NotPSD, NotSymmetric
from infuq.kernels import RBFParams, rbf_gram
from infuq.linalg_stats import (
    JITTER_LADDER,
    PSDMatrix,
    SeededRng,
    cholesky,
    half_solve,
    mvn_sample,
    psd_solve,
)


def exact_solve(a, b):
    """Gauss-Jordan elimination in rational arithmetic."""
    n = len(b)
    m = [[Fraction(float(a[i, j])) for j in range(n)] + [Fraction(float(b[i]))] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / m[col][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return np.array([float(m[i][n] / m[i][i]) for i in range(n)])


def spd(n, seed, cond=None):
    gen = np.random.default_rng(seed)
    q, _ = np.linalg.qr(gen.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n) if cond else gen.uniform(0.5, 3.0, n)
    a = (q * lam) @ q.T
    return 0.5 * (a + a.T)


def test_cholesky_identity():
    f = cholesky(np.eye(3))
    assert np.array_equal(f.lower, np.eye(3))
    assert f.jitter == 0.0


def test_cholesky_hand_checked():
    f = cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, 2.0]], rtol=0, atol=1e-15)


def test_cholesky_clustered_rbf_reconstructs():
    gen = np.random.default_rng(3)
    x = np.concatenate([gen.normal(0.0, 1e-3, 5), gen.normal(2.0, 1e-3, 5)])
    a = rbf_gram(x, x, RBFParams(1.0, 1.0))
    a = 0.5 * (a + a.T)
    f = cholesky(PSDMatrix(a))
    target = a + f.jitter * np.eye(10)
    assert f.jitter > 0
    assert np.linalg.norm(f.lower @ f.lower.T - target) / np.linalg.norm(target) < 1e-8


def test_cholesky_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        cholesky(np.array([[1.0, 0.5], [0.4, 1.0]]))


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPSD):
        cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_cholesky_jitter_stays_on_ladder():
    a = np.ones((4, 4))  # rank one
    f = cholesky(a)
    assert f.jitter in [r * 1.0 for r in JITTER_LADDER]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 10_000), rank=st.integers(1, 8))
def test_cholesky_round_trip(n, seed, rank):
    gen = np.random.default_rng(seed)
    g = gen.standard_normal((n, min(rank, n)))
    a = g @ g.T
    a = 0.5 * (a + a.T)
    f = cholesky(a)
    resid = np.linalg.norm(f.lower @ f.lower.T - (a + f.jitter * np.eye(n)))
    assert resid / np.linalg.norm(a) < 1e-10


def test_psd_solve_identity_and_diagonal():
    np.testing.assert_array_equal(psd_solve(np.eye(2), np.array([3.0, 7.0])), [3.0, 7.0])
    np.testing.assert_allclose(psd_solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0], rtol=0, atol=1e-15)


def test_psd_solve_matches_exact_elimination():
    a = spd(8, 11)
    b = np.random.default_rng(12).standard_normal(8)
    x = psd_solve(a, b)
    oracle = exact_solve(a, b)
    assert np.linalg.norm(x - oracle) / np.linalg.norm(oracle) < 1e-8


def test_psd_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        psd_solve(np.eye(3), np.ones(2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), log_cond=st.floats(0.0, 7.9))
def test_psd_solve_recovers_solution(seed, log_cond):
    a = spd(6, seed, cond=10.0**log_cond)
    x0 = np.random.default_rng(seed + 1).standard_normal(6)
    x = psd_solve(a, a @ x0)
    assert np.linalg.norm(x - x0) / np.linalg.norm(x0) < 1e-8


def test_half_solve_gives_quadratic_form():
    a = spd(5, 4)
    f = cholesky(a)
    b = np.random.default_rng(5).standard_normal((5, 2))
    h = half_solve(f, b)
    np.testing.assert_allclose(h.T @ h, b.T @ np.linalg.solve(a, b), rtol=1e-10)


def test_mvn_sample_zero_covariance_returns_mean():
    mean = np.array([1.0, -2.0, 3.5])
    s = mvn_sample(mean, np.zeros((3, 3)), SeededRng(1), 7)
    assert np.array_equal(s, np.tile(mean, (7, 1)))


def test_mvn_sample_deterministic():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    a = mvn_sample(np.zeros(2), cov, SeededRng(5, 2), 50)
    b = mvn_sample(np.zeros(2), cov, SeededRng(5, 2), 50)
    assert np.array_equal(a, b)
    c = mvn_sample(np.zeros(2), cov, SeededRng(5, 3), 50)
    assert not np.array_equal(a, c)


def test_mvn_sample_covariance_estimate():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    s = mvn_sample(np.zeros(2), cov, SeededRng(9), 100_000)
    assert np.max(np.abs(np.cov(s.T) - cov)) < 0.02


def test_mvn_sample_mean_error_shrinks_like_inverse_sqrt():
    mean = np.array([0.5, -1.0])
    cov = np.array([[2.0, 0.4], [0.4, 1.0]])
    for count in (1_000, 10_000, 100_000):
        errs = [np.abs(mvn_sample(mean, cov, SeededRng(r, count), count).mean(axis=0) - mean) for r in range(10)]
        # 4 standard errors on the worst coordinate of any repetition
        assert np.max(errs) < 4.0 * np.sqrt(2.0 / count)


def test_mvn_sample_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        mvn_sample(np.zeros(3), np.eye(2), SeededRng(0), 1)


def test_seeded_rng_streams():
    a = SeededRng(42).generator().standard_normal(5)
    b = SeededRng(42).generator().standard_normal(5)
    assert np.array_equal(a, b)
    x = SeededRng(42).stream(1).generator().standard_normal(100_000)
    y = SeededRng(42).stream(2).generator().standard_normal(100_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.02
    assert SeededRng(42).stream(1).stream(0).key == (0, 1, 0)


def test_seeded_rng_rejects_bad_seed():
    with pytest.raises(ValueError):
        SeededRng(-1)
    with pytest.raises(ValueError):
        SeededRng(2**64)
