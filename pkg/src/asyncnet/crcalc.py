"""Real and complex representations of vectors, gradients and Hessians.

A complex vector ``w`` in C^M has two 2M-dimensional stand-ins:

* the real embedding ``[Re(w); Im(w)]``
* the conjugate embedding ``[w; conj(w)]``

The two are related by the fixed matrix ``D = [[I, jI], [I, -jI]]``. Gradients
are stored as column vectors throughout; the row/column distinction of
Jacobians is treated as layout only.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

SYMMETRY_TOL = 1e-12
DEFAULT_FD_STEP = 1e-5


def _as_complex_vector(w) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("vector has non-finite entries")
    return w


def embed_real(w) -> np.ndarray:
    """Return ``[Re(w); Im(w)]`` as a length-2M float array."""
    w = _as_complex_vector(w)
    return np.concatenate([w.real, w.imag])


def unembed_real(wbar) -> np.ndarray:
    """Inverse of :func:`embed_real`."""
    wbar = np.asarray(wbar, dtype=float)
    if wbar.ndim != 1 or wbar.size % 2:
        raise ValueError(f"real embedding must have even length, got shape {wbar.shape}")
    m = wbar.size // 2
    return wbar[:m] + 1j * wbar[m:]


def embed_conjugate(w) -> np.ndarray:
    """Return ``[w; conj(w)]`` as a length-2M complex array."""
    w = _as_complex_vector(w)
    return np.concatenate([w, w.conj()])


def unembed_conjugate(wu) -> np.ndarray:
    """Recover ``w`` from its conjugate embedding (first half)."""
    wu = np.asarray(wu, dtype=complex)
    if wu.ndim != 1 or wu.size % 2:
        raise ValueError(f"conjugate embedding must have even length, got shape {wu.shape}")
    return wu[: wu.size // 2].copy()


def d_matrix(M: int) -> np.ndarray:
    """The 2M x 2M matrix mapping the real embedding to the conjugate one.

    ``D D^* = D^* D = 2 I`` so ``D^{-1} = D^* / 2``.
    """
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    M = int(M)
    eye = np.eye(M)
    return np.block([[eye, 1j * eye], [eye, -1j * eye]]).astype(complex)


def d_matrix_inverse(M: int) -> np.ndarray:
    return d_matrix(M).conj().T / 2


def hessian_real_to_extended(hbar) -> np.ndarray:
    """Map a real 2M x 2M Hessian to the extended complex Hessian ``D Hbar D^* / 4``."""
    hbar = np.asarray(hbar)
    if hbar.ndim != 2 or hbar.shape[0] != hbar.shape[1] or hbar.shape[0] % 2:
        raise ValueError(f"expected a square matrix of even size, got shape {hbar.shape}")
    if np.iscomplexobj(hbar):
        if np.max(np.abs(hbar.imag)) > SYMMETRY_TOL:
            raise ValueError("real Hessian has a non-zero imaginary part")
        hbar = hbar.real
    scale = max(1.0, float(np.max(np.abs(hbar))))
    if np.max(np.abs(hbar - hbar.T)) > SYMMETRY_TOL * scale:
        raise ValueError("real Hessian is not symmetric")
    D = d_matrix(hbar.shape[0] // 2)
    return D @ hbar @ D.conj().T / 4


def hessian_extended_to_real(hext) -> np.ndarray:
    """Inverse map ``D^* H D``; returns a real symmetric matrix."""
    hext = np.asarray(hext, dtype=complex)
    if hext.ndim != 2 or hext.shape[0] != hext.shape[1] or hext.shape[0] % 2:
        raise ValueError(f"expected a square matrix of even size, got shape {hext.shape}")
    D = d_matrix(hext.shape[0] // 2)
    out = D.conj().T @ hext @ D
    scale = max(1.0, float(np.max(np.abs(out))))
    if np.max(np.abs(out.imag)) > 1e-10 * scale:
        raise ValueError("extended Hessian does not correspond to a real Hessian")
    return out.real


def check_extended_hessian(hext, tol: float = SYMMETRY_TOL) -> None:
    """Raise if ``hext`` lacks the ``[[H, G*], [G, H^T]]`` structure."""
    hext = np.asarray(hext, dtype=complex)
    m = hext.shape[0] // 2
    H, Gc = hext[:m, :m], hext[:m, m:]
    G, Ht = hext[m:, :m], hext[m:, m:]
    scale = max(1.0, float(np.max(np.abs(hext))))
    checks = {
        "Hermitian": hext - hext.conj().T,
        "lower-right block equals H^T": Ht - H.T,
        "upper-right block equals G^*": Gc - G.conj().T,
        "G symmetric": G - G.T,
    }
    for name, diff in checks.items():
        if np.max(np.abs(diff)) > tol * scale:
            raise ValueError(f"extended Hessian violates: {name}")


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], wbar, h: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central-difference gradient of a real function of a real vector.

    Raises
    ------
    ValueError
        If ``h <= 0`` or ``f`` returns a non-finite value at a probe point.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h!r}")
    wbar = np.asarray(wbar, dtype=float)
    grad = np.empty_like(wbar)
    for i in range(wbar.size):
        step = np.zeros_like(wbar)
        step[i] = h
        fp, fm = float(f(wbar + step)), float(f(wbar - step))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad


def complex_gradient_from_real(grad_real) -> np.ndarray:
    """Convert a real gradient into the extended complex gradient.

    Returns ``(grad_real^T D^* / 2)^T``, i.e. ``[grad_w J; (grad_{w*} J)]``
    where the second half is the conjugate gradient as a column.
    """
    grad_real = np.asarray(grad_real, dtype=float)
    D = d_matrix(grad_real.size // 2)
    return grad_real @ D.conj().T / 2


def real_gradient_from_complex(grad_ext) -> np.ndarray:
    """Inverse of :func:`complex_gradient_from_real` (``grad_ext^T D``)."""
    grad_ext = np.asarray(grad_ext, dtype=complex)
    D = d_matrix(grad_ext.size // 2)
    out = grad_ext @ D
    return out.real


def conjugate_gradient_fd(
    f_complex: Callable[[np.ndarray], float], w, h: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Finite-difference conjugate gradient ``grad_{w*} f`` of a real function of complex ``w``."""
    w = _as_complex_vector(w)
    g_real = finite_diff_gradient(lambda x: f_complex(unembed_real(x)), embed_real(w), h)
    g_ext = complex_gradient_from_real(g_real)
    return g_ext[w.size:].copy()
