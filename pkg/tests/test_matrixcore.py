import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltvmpc.matrixcore import (
    FactorizationError,
    NumericInputError,
    SingularityError,
    invert_pd,
    is_negative_definite,
    is_positive_definite,
    random_pd,
    schur_complement,
    spectral_bounds,
    sqrt_factor,
    sym,
)

NUMERICS = settings(max_examples=1000, deadline=None)


def pd_matrices(max_n=6, max_cond=1e4):
    @st.composite
    def build(draw):
        n = draw(st.integers(1, max_n))
        seed = draw(st.integers(0, 2**32 - 1))
        cond = draw(st.floats(1.0, max_cond))
        scale = draw(st.floats(1e-3, 1e3))
        return scale * random_pd(n, np.random.default_rng(seed), cond)

    return build()


# --- examples ---------------------------------------------------------------


def test_pd_examples():
    assert is_positive_definite(np.eye(2), 1e-9)
    assert not is_positive_definite(np.zeros((2, 2)), 1e-9)
    assert is_positive_definite([[2, 1], [1, 2]], 1e-9)
    assert is_negative_definite(-np.eye(3))


def test_pd_rejects_bad_input():
    with pytest.raises(NumericInputError):
        is_positive_definite([[np.nan, 0], [0, 1]])
    with pytest.raises(ValueError):
        is_positive_definite(np.eye(2), tol=0.0)


def test_pd_tolerance_is_relative():
    m = np.diag([1e6, 1e-4])
    assert not is_positive_definite(m, 1e-9)
    assert is_positive_definite(np.diag([1e6, 1e-2]), 1e-9)


def test_sqrt_factor_examples():
    np.testing.assert_allclose(sqrt_factor(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(sqrt_factor(0.01 * np.eye(1)), [[0.1]])
    np.testing.assert_allclose(sqrt_factor([[4, 0], [0, 9]]), [[2, 0], [0, 3]])


def test_sqrt_factor_reports_pivot():
    with pytest.raises(FactorizationError) as exc:
        sqrt_factor(np.diag([1.0, 2.0, -1.0]))
    assert exc.value.pivot == 2


def test_schur_examples():
    np.testing.assert_allclose(schur_complement([[2, 1], [1, 2]], 1), [[1.5]])
    m = np.zeros((4, 4))
    m[:2, :2] = [[3, 1], [1, 2]]
    m[2:, 2:] = [[5, 0], [0, 7]]
    np.testing.assert_allclose(schur_complement(m, 2), m[:2, :2])


def test_schur_singular():
    with pytest.raises(SingularityError):
        schur_complement(np.diag([1.0, 0.0]), 1)


def test_spectral_examples():
    assert spectral_bounds(np.eye(4)) == pytest.approx((1.0, 1.0))
    assert spectral_bounds(1e4 * np.eye(2)) == pytest.approx((1e4, 1e4))
    assert spectral_bounds([[2, 1], [1, 2]]) == pytest.approx((1.0, 3.0))


def test_invert_examples(rng):
    np.testing.assert_allclose(invert_pd(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(invert_pd(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    m = random_pd(3, rng)
    assert np.linalg.norm(m @ invert_pd(m) - np.eye(3)) < 1e-9
    with pytest.raises(FactorizationError):
        invert_pd(np.diag([1.0, -1.0]))


def test_sym_averages():
    s = sym([[1.0, 2.0], [0.0, 1.0]])
    np.testing.assert_array_equal(s, s.T)
    assert s[0, 1] == 1.0


# --- properties -------------------------------------------------------------


@NUMERICS
@given(pd_matrices())
def test_sqrt_factor_reconstructs(m):
    s = sqrt_factor(m)
    assert np.allclose(s, np.triu(s))
    assert np.linalg.norm(s.T @ s - m) <= 1e-10 * np.linalg.norm(m)


@NUMERICS
@given(pd_matrices(max_n=6, max_cond=1e3).filter(lambda m: m.shape[0] >= 2), st.data())
def test_schur_of_pd_is_pd(m, data):
    k = data.draw(st.integers(1, m.shape[0] - 1))
    s = schur_complement(m, k)
    assert np.linalg.eigvalsh(s)[0] > 0
    # oracle: inverse of the leading block of m^-1
    np.testing.assert_allclose(s, np.linalg.inv(np.linalg.inv(m)[:k, :k]), rtol=1e-6, atol=1e-9 * np.abs(m).max())


@NUMERICS
@given(pd_matrices(), st.integers(0, 2**32 - 1))
def test_rayleigh_bounds(m, seed):
    lo, hi = spectral_bounds(m)
    x = np.random.default_rng(seed).standard_normal(m.shape[0])
    r = x @ m @ x / (x @ x)
    assert lo - 1e-10 * abs(hi) <= r <= hi + 1e-10 * abs(hi)


@NUMERICS
@given(pd_matrices(max_cond=1e3))
def test_invert_involution(m):
    m2 = invert_pd(invert_pd(m))
    assert np.linalg.norm(m2 - m) <= 1e-8 * np.linalg.norm(m)
    assert np.linalg.norm(m @ invert_pd(m) - np.eye(m.shape[0])) < 1e-9 * np.linalg.cond(m)
