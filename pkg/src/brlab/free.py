"""Closed forms for the unperturbed operator (lambda = 0)."""

import numpy as np


def free_gamma_scalar(E, K, eta=0.0):
    """Forward Green function of the free K-ary tree at ``z = E + i eta``.

    Solves ``K g**2 + z g + 1 = 0`` and returns the decaying root, which is the
    Herglotz branch for ``eta > 0``.  At ``eta = 0`` inside the band
    ``|E| < 2 sqrt(K)`` both roots have modulus ``1/sqrt(K)`` and the one with
    positive imaginary part (the limit from above) is returned.

    Works elementwise on arrays; ``E`` may be complex, in which case ``eta``
    is added to its imaginary part.
    """
    z = np.asarray(E, dtype=complex) + 1j * eta
    disc = np.sqrt(z * z - 4.0 * K)
    r1 = (-z + disc) / (2.0 * K)
    r2 = (-z - disc) / (2.0 * K)
    m1, m2 = np.abs(r1), np.abs(r2)
    tie = np.abs(m1 - m2) <= 1e-12 * np.maximum(m1, m2)
    pick_r1 = np.where(tie, r1.imag >= r2.imag, m1 < m2)
    out = np.where(pick_r1, r1, r2)
    return out[()] if out.ndim == 0 else out


def free_gamma_matrix(A, K, z):
    """Matrix fixed point of ``G = (A - z - K G)^{-1}`` for symmetric ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nu, O = np.linalg.eigh(A)
    g = free_gamma_scalar(np.real(z) - nu + 0j, K, np.imag(z))
    return (O * g) @ O.T


def free_lyapunov(E, nu, K, eta=0.0):
    """Slowest free exponent ``min_i -log|g(E - nu_i)|``; vectorized in ``E``."""
    E = np.asarray(E, dtype=float)
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    g = free_gamma_scalar(E[..., None] - nu, K, eta)
    out = np.min(-np.log(np.abs(g)), axis=-1)
    return out[()] if np.ndim(out) == 0 else out
