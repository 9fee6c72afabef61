"""Small dense matrix kernels for W x W blocks.

All functions accept a single ``(W, W)`` block or a stack ``(..., W, W)`` and
operate blockwise.  Hermitian eigenproblems (and hence operator norms) use a
cyclic complex Jacobi iteration; W is small (<= 8) so this is cheap and gives
bit-reproducible results across platforms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotHermitian, SingularComplement, SingularMatrix

SINGULAR_RTOL = 1e-14
TIE_RTOL = 1e-10
_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 60


def _as_stack(M):
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionMismatch(f"expected square blocks, got shape {M.shape}")
    return M


def dagger(M):
    return np.conj(np.swapaxes(M, -1, -2))


def inv_batch(M):
    """Unchecked blockwise inverse for hot loops (callers guarantee eta > 0)."""
    M = np.asarray(M)
    if M.shape[-1] == 1:
        return 1.0 / M
    if M.shape[-1] == 2:
        a, b = M[..., 0, 0], M[..., 0, 1]
        c, d = M[..., 1, 0], M[..., 1, 1]
        rdet = 1.0 / (a * d - b * c)
        out = np.empty(M.shape, dtype=np.result_type(M.dtype, rdet.dtype))
        out[..., 0, 0] = d * rdet
        out[..., 0, 1] = -b * rdet
        out[..., 1, 0] = -c * rdet
        out[..., 1, 1] = a * rdet
        return out
    return np.linalg.inv(M)


def eigh_jacobi(M):
    """Eigen-decomposition of Hermitian blocks by cyclic Jacobi rotations.

    Parameters
    ----------
    M : array_like, shape (..., W, W)
        Hermitian blocks.  Only the Hermitian part is used.

    Returns
    -------
    w : ndarray, shape (..., W)
        Real eigenvalues in ascending order.
    V : ndarray, shape (..., W, W)
        Unitary matrix whose columns are the matching eigenvectors.
    """
    M = _as_stack(M)
    batch_shape = M.shape[:-2]
    n = M.shape[-1]
    A = np.array(M, dtype=complex).reshape((-1, n, n))
    A = 0.5 * (A + dagger(A))
    V = np.broadcast_to(np.eye(n, dtype=complex), A.shape).copy()
    if n > 1:
        scale = np.sqrt(np.sum(np.abs(A) ** 2, axis=(-1, -2)))
        floor = _JACOBI_TOL * np.where(scale > 0, scale, 1.0)
        pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
        offmask = ~np.eye(n, dtype=bool)
        for _ in range(_JACOBI_MAX_SWEEPS):
            # summed directly: total minus diagonal mass cancels catastrophically
            off = np.sqrt(np.sum(np.abs(A[:, offmask]) ** 2, axis=-1))
            if np.all(off <= floor):
                break
            for p, q in pairs:
                apq = A[:, p, q]
                mag = np.abs(apq)
                active = mag > floor * 1e-3
                safe = np.where(active, mag, 1.0)
                phase = np.where(active, apq / safe, 1.0)
                theta = (A[:, q, q].real - A[:, p, p].real) / (2.0 * safe)
                sgn = np.where(theta >= 0, 1.0, -1.0)
                t = sgn / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # J = D R: J_pp = c, J_pq = s, J_qp = -s e^{-i phi}, J_qq = c e^{-i phi}
                eph = np.conj(phase)
                j_pp, j_pq, j_qp, j_qq = c, s, -s * eph, c * eph
                cp = A[:, :, p].copy()
                cq = A[:, :, q]
                A[:, :, p] = cp * j_pp[:, None] + cq * j_qp[:, None]
                A[:, :, q] = cp * j_pq[:, None] + cq * j_qq[:, None]
                rp = A[:, p, :].copy()
                rq = A[:, q, :]
                A[:, p, :] = rp * np.conj(j_pp)[:, None] + rq * np.conj(j_qp)[:, None]
                A[:, q, :] = rp * np.conj(j_pq)[:, None] + rq * np.conj(j_qq)[:, None]
                vp = V[:, :, p].copy()
                vq = V[:, :, q]
                V[:, :, p] = vp * j_pp[:, None] + vq * j_qp[:, None]
                V[:, :, q] = vp * j_pq[:, None] + vq * j_qq[:, None]
    w = np.diagonal(A, axis1=-2, axis2=-1).real.copy()
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return w.reshape(batch_shape + (n,)), V.reshape(batch_shape + (n, n))


def singular_values(M):
    """Singular values (descending) via Jacobi on M* M."""
    M = _as_stack(M)
    # normalize first so that forming M* M neither underflows nor overflows
    scale = np.max(np.abs(M), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    Ms = M / scale
    w, _ = eigh_jacobi(dagger(Ms) @ Ms)
    return scale[..., 0] * np.sqrt(np.clip(w[..., ::-1], 0.0, None))


def operator_norm(M):
    """Largest singular value of each block (0 for the zero matrix)."""
    M = _as_stack(M)
    if M.shape[-1] == 1:
        return np.abs(M[..., 0, 0])
    return singular_values(M)[..., 0]


def invert_block(M):
    """Inverse of each block, refusing numerically singular input.

    Raises
    ------
    SingularMatrix
        If the smallest singular value is below ``1e-14`` times the largest.
    """
    M = _as_stack(M)
    if not np.all(np.isfinite(M)):
        raise SingularMatrix("non-finite entries")
    sv = singular_values(M)
    if np.any(sv[..., -1] < SINGULAR_RTOL * sv[..., 0]) or np.any(sv[..., 0] == 0):
        raise SingularMatrix("block is singular to working precision")
    return np.linalg.inv(M.astype(complex))


def skew_part(M):
    """``(M - M*) / 2i``, the matrix imaginary part (Hermitian)."""
    M = _as_stack(M)
    S = (M - dagger(M)) / 2j
    return 0.5 * (S + dagger(S))


def min_eigenvalue_hermitian(S):
    S = _as_stack(S)
    n = S.shape[-1]
    if n == 1:
        return S[..., 0, 0].real
    if n == 2:
        a = S[..., 0, 0].real
        d = S[..., 1, 1].real
        b = np.abs(S[..., 0, 1])
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)
    return eigh_jacobi(S)[0][..., 0]


def herglotz_min(M):
    """Smallest eigenvalue of ``skew_part(M)`` over all blocks (scalar)."""
    M = np.asarray(M)
    if M.size == 0:
        return np.inf
    n = M.shape[-1]
    if n == 1:
        return float(np.min(M.imag))
    if n == 2:
        a = M[..., 0, 0].imag
        d = M[..., 1, 1].imag
        b = np.abs(M[..., 0, 1] - np.conj(M[..., 1, 0])) / 2.0
        return float(np.min(0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)))
    return float(np.min(min_eigenvalue_hermitian(skew_part(M))))


def quadratic_form_max(A):
    """``max(|A_jj|, |<A (e_j + e_k), e_j + e_k>|)`` over coordinates ``j != k``.

    For real symmetric ``A`` this controls the operator norm:
    ``||A|| <= 3 W * quadratic_form_max(A)``.
    """
    A = _as_stack(A)
    d = np.diagonal(A, axis1=-2, axis2=-1)
    best = np.max(np.abs(d), axis=-1)
    n = A.shape[-1]
    for j in range(n - 1):
        for k in range(j + 1, n):
            pair = np.abs(A[..., j, j] + A[..., k, k] + A[..., j, k] + A[..., k, j])
            best = np.maximum(best, pair)
    return best


def w_max_vector(M, check=True):
    """Unit eigenvector of the largest eigenvalue of a Hermitian block.

    Eigenvalues within ``1e-10`` (relative) of the maximum count as tied; among
    them the eigenvector whose largest-magnitude coordinate has the lowest index
    wins.  The global phase makes that coordinate real and positive.
    """
    M = _as_stack(M)
    if check:
        herm_err = operator_norm(M - dagger(M))
        scale = operator_norm(M)
        if np.any(herm_err > 1e-8 * np.maximum(scale, np.finfo(float).tiny)):
            raise NotHermitian("w_max requires a Hermitian block")
    w, V = eigh_jacobi(M)
    lam = w[..., -1:]
    tol = TIE_RTOL * np.maximum(np.abs(lam), np.finfo(float).tiny)
    tied = w >= lam - tol
    mags = np.abs(V)
    lead = np.argmax(mags, axis=-2)
    big = V.shape[-1] + 1
    rank = np.where(tied, lead, big)
    pick = np.argmin(rank, axis=-1)
    v = np.take_along_axis(V, pick[..., None, None], axis=-1)[..., 0]
    lead_idx = np.take_along_axis(lead, pick[..., None], axis=-1)[..., 0]
    anchor = np.take_along_axis(v, lead_idx[..., None], axis=-1)[..., 0]
    v = v * (np.conj(anchor) / np.abs(anchor))[..., None]
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    # make the anchor exactly real (rounding leaves ~1e-17 imaginary parts)
    np.put_along_axis(v, lead_idx[..., None], np.abs(np.take_along_axis(v, lead_idx[..., None], axis=-1)), axis=-1)
    return v


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector given by an orthonormal basis of its range.

    ``basis`` has shape ``(W, r)``; its columns span range(P).
    """

    basis: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=complex))
        if B.shape[0] < B.shape[1]:
            raise DimensionMismatch("basis must have shape (W, r) with r <= W")
        gram = dagger(B) @ B
        if not np.allclose(gram, np.eye(B.shape[1]), atol=1e-12, rtol=0):
            raise ValueError("projector basis must be orthonormal")
        object.__setattr__(self, "basis", B)

    @classmethod
    def coordinate(cls, dim, indices):
        return cls(np.eye(dim)[:, list(indices)])

    @classmethod
    def span(cls, *vectors):
        Qm, _ = np.linalg.qr(np.column_stack([np.asarray(v, dtype=complex) for v in vectors]))
        return cls(Qm)

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def rank(self):
        return self.basis.shape[1]

    @property
    def matrix(self):
        return self.basis @ dagger(self.basis)

    def complement(self) -> "Projector":
        """Projector onto the orthogonal complement, ``Q = 1 - P``."""
        if self.rank == self.dim:
            return Projector(np.zeros((self.dim, 0), dtype=complex))
        _, _, vh = np.linalg.svd(dagger(self.basis), full_matrices=True)
        return Projector(dagger(vh[self.rank:]))


def schur_complement(T, P: Projector):
    """``PTP - PTQ (QTQ)^{-1} QTP`` written in the basis of range(P)."""
    T = _as_stack(T)
    if T.shape[-1] != P.dim:
        raise DimensionMismatch(f"block dim {T.shape[-1]} vs projector dim {P.dim}")
    B = P.basis
    C = P.complement().basis
    tpp = dagger(B) @ T @ B
    if C.shape[1] == 0:
        return tpp
    tpq = dagger(B) @ T @ C
    tqp = dagger(C) @ T @ B
    tqq = dagger(C) @ T @ C
    try:
        tqq_inv = invert_block(tqq)
    except SingularMatrix as exc:
        raise SingularComplement("QTQ is singular on range(Q)") from exc
    return tpp - tpq @ tqq_inv @ tqp


def schur_restricted_inverse(T, P: Projector):
    """Range(P) block of ``T^{-1}`` via the Schur-Banachiewicz formula.

    The result is expressed in the basis ``P.basis``, i.e. it equals
    ``B* T^{-1} B`` for ``B = P.basis``.
    """
    return invert_block(schur_complement(T, P))
