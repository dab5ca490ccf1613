import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncnet import crcalc
from asyncnet.costs import QuadraticCost


def random_complex(rng, m):
    return rng.normal(size=m) + 1j * rng.normal(size=m)


def random_pd(rng, m):
    X = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return X @ X.conj().T + m * np.eye(m)


seeds = st.integers(0, 2 ** 32 - 1)
dims = st.integers(1, 6)


@given(dims)
def test_d_matrix_is_twice_unitary(m):
    D = crcalc.d_matrix(m)
    assert np.allclose(D @ D.conj().T, 2 * np.eye(2 * m), atol=1e-12, rtol=0)
    assert np.allclose(crcalc.d_matrix_inverse(m) @ D, np.eye(2 * m), atol=1e-12, rtol=0)


@given(seeds, dims)
def test_embeddings_round_trip_and_are_linked_by_d(seed, m):
    rng = np.random.default_rng(seed)
    w = random_complex(rng, m)
    wbar, wu = crcalc.embed_real(w), crcalc.embed_conjugate(w)
    assert np.array_equal(crcalc.unembed_real(wbar), w)
    assert np.array_equal(crcalc.unembed_conjugate(wu), w)
    assert np.allclose(crcalc.d_matrix(m) @ wbar, wu, atol=1e-12, rtol=0)


@given(seeds, dims)
def test_hessian_maps_are_inverse(seed, m):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2 * m, 2 * m))
    hbar = X + X.T
    hext = crcalc.hessian_real_to_extended(hbar)
    crcalc.check_extended_hessian(hext)
    back = crcalc.hessian_extended_to_real(hext)
    assert np.max(np.abs(back - hbar)) <= 1e-12 * max(1.0, np.max(np.abs(hbar)))


def test_quadratic_extended_hessian_matches_real_hessian(rng):
    cost = QuadraticCost(random_pd(rng, 3), random_complex(rng, 3), 0.1)
    # real Hessian of w~* R w~ in [Re; Im] coordinates
    R = cost.R_u
    hbar = 2 * np.block([[R.real, -R.imag], [R.imag, R.real]])
    assert np.allclose(crcalc.hessian_real_to_extended(hbar), cost.extended_hessian(), atol=1e-12, rtol=0)


@settings(max_examples=30)
@given(seeds, dims)
def test_conjugate_gradient_matches_finite_differences(seed, m):
    rng = np.random.default_rng(seed)
    cost = QuadraticCost(random_pd(rng, m), random_complex(rng, m), 0.5)
    w = random_complex(rng, m)
    fd = crcalc.conjugate_gradient_fd(cost.evaluate, w)
    assert np.allclose(fd, cost.gradient(w), atol=1e-6, rtol=0)


def test_real_complex_gradient_round_trip(rng):
    g = rng.normal(size=8)
    assert np.allclose(crcalc.real_gradient_from_complex(crcalc.complex_gradient_from_real(g)), g, atol=1e-12)


def test_finite_difference_rejects_bad_step_and_nan():
    with pytest.raises(ValueError):
        crcalc.finite_diff_gradient(lambda x: 0.0, np.zeros(2), h=0)
    with pytest.raises(ValueError, match="non-finite"):
        crcalc.finite_diff_gradient(lambda x: np.nan, np.zeros(2))


def test_rejects_asymmetric_real_hessian():
    with pytest.raises(ValueError, match="symmetric"):
        crcalc.hessian_real_to_extended(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_check_extended_hessian_spots_broken_structure():
    H = np.eye(4, dtype=complex)
    H[2, 3] = 0.5
    with pytest.raises(ValueError):
        crcalc.check_extended_hessian(H)


def test_d_matrix_rejects_bad_size():
    with pytest.raises(ValueError):
        crcalc.d_matrix(0)
