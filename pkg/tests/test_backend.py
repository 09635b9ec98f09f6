"""Numba and numpy kernel paths must agree bitwise-closely."""

import numpy as np
import pytest

from calab import backend


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(42)


def test_active_backend_reports_a_known_name():
    assert backend.active_backend() in ("numba", "numpy")


def test_rbf_gram_parity(rng):
    np_impl, nb_impl = backend.implementations("rbf_gram")
    if nb_impl is None:
        pytest.skip("numba unavailable")
    X = rng.normal(size=(17, 3))
    Y = rng.normal(size=(9, 3))
    a = np_impl(X, Y, 0.37)
    b = nb_impl(X, Y, 0.37)
    assert np.allclose(a, b, atol=1e-14)


def test_rwm_gram_parity(rng):
    np_impl, nb_impl = backend.implementations("rwm_gram")
    if nb_impl is None:
        pytest.skip("numba unavailable")
    X = rng.normal(size=(11, 2))
    Y = rng.normal(size=(7, 2))
    RX = rng.dirichlet([1, 1, 1], size=11)
    RY = rng.dirichlet([1, 1, 1], size=7)
    precs = np.stack([np.eye(2), 2 * np.eye(2), np.array([[2.0, 0.5], [0.5, 1.0]])])
    a = np_impl(X, Y, RX, RY, precs, 0.9)
    b = nb_impl(X, Y, RX, RY, precs, 0.9)
    assert np.allclose(a, b, atol=1e-13)


def _case(rng, n=30):
    X = np.vstack([rng.normal(-1, 0.6, (n // 2, 2)), rng.normal(1, 0.6, (n - n // 2, 2))])
    y = np.concatenate([-np.ones(n // 2), np.ones(n - n // 2)])
    K = backend._rbf_gram_np(X, X, 0.5)
    return K, y


def test_smo_parity(rng):
    np_impl, nb_impl = backend.implementations("smo_solve")
    if nb_impl is None:
        pytest.skip("numba unavailable")
    K, y = _case(rng)
    a1 = np_impl(K, y, 1.0, 1e-3, 10_000)
    a2 = nb_impl(K, y, 1.0, 1e-3, 10_000)
    assert np.allclose(a1[0], a2[0], atol=1e-12)
    assert a1[1] == a2[1]  # identical iteration counts: same pair selection


def test_smo_respects_box_and_equality(rng):
    K, y = _case(rng, n=40)
    alpha, _, violation, indefinite = backend._smo_solve_np(K, y, 0.7, 1e-4, 50_000)
    assert not indefinite
    assert violation <= 1e-4
    assert np.all(alpha >= -1e-12) and np.all(alpha <= 0.7 + 1e-12)
    assert abs(np.sum(alpha * y)) < 1e-9


def test_smo_flags_indefinite_gram():
    K = np.array([[1.0, 1.0], [1.0, 1.0]])  # zero curvature pair
    y = np.array([1.0, -1.0])
    _, _, _, indefinite = backend._smo_solve_np(K, y, 1.0, 1e-3, 100)
    assert indefinite
