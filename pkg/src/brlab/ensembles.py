"""Random potentials ``U(x) = A + lambda V(x)`` for the Bethe strip operator."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, UsageError
from .linalg import Projector
from .rng import as_stream

GOE = "goe"
CAUCHY = "cauchy"
DIAG = "diag"
_KINDS = (GOE, CAUCHY, DIAG)


@dataclass(frozen=True)
class EnsembleSpec:
    """Distribution of the disorder matrix ``V``.

    ``kind`` is ``"goe"``, ``"cauchy"`` (scalar Cauchy with width ``scale``;
    W must be 1) or ``"diag"`` (i.i.d. standard normal diagonal entries; no
    delocalization claims are attached to this ensemble).
    """

    kind: str
    W: int
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise UsageError(f"unknown ensemble {self.kind!r}; expected one of {_KINDS}")
        if self.W < 1:
            raise UsageError("W must be >= 1")
        if self.kind == CAUCHY and self.W != 1:
            raise UsageError("scalar Cauchy disorder requires W = 1")
        if self.scale <= 0:
            raise UsageError("ensemble scale must be positive")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Operator on the rooted K-ary tree with W x W blocks.

    Hopping between neighbours is the identity block; the on-site block is
    ``A + lam * V(x)`` with ``V`` drawn from ``ensemble``.
    """

    K: int
    W: int
    A: np.ndarray = field(default=None)
    ensemble: EnsembleSpec = field(default=None)
    lam: float = 0.0

    def __post_init__(self):
        if self.K < 2:
            raise UsageError("branching number K must be >= 2")
        if self.W < 1:
            raise UsageError("W must be >= 1")
        A = np.zeros((self.W, self.W)) if self.A is None else np.array(self.A, dtype=float)
        A = np.atleast_2d(A)
        if A.shape != (self.W, self.W):
            raise DimensionMismatch(f"A has shape {A.shape}, expected {(self.W, self.W)}")
        if not np.array_equal(A, A.T):
            raise UsageError("A must be exactly symmetric")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        ens = self.ensemble if self.ensemble is not None else EnsembleSpec(GOE, self.W)
        if ens.W != self.W:
            raise DimensionMismatch("ensemble dimension differs from W")
        object.__setattr__(self, "ensemble", ens)
        if not self.lam >= 0:
            raise UsageError("coupling lambda must be >= 0")
        object.__setattr__(self, "lam", float(self.lam))

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (self.K, self.W, self.ensemble, self.lam) == (other.K, other.W, other.ensemble, other.lam) and np.array_equal(self.A, other.A)

    def __hash__(self):
        return hash((self.K, self.W, self.ensemble, self.lam, self.A.tobytes()))

    @property
    def nu(self):
        """Eigenvalues of ``A`` (ascending)."""
        return np.linalg.eigvalsh(self.A)

    def with_lambda(self, lam):
        return ModelSpec(self.K, self.W, self.A, self.ensemble, lam)

    def to_dict(self):
        return {
            "K": self.K,
            "W": self.W,
            "A": self.A.tolist(),
            "ensemble": self.ensemble.kind,
            "scale": self.ensemble.scale,
            "lambda": self.lam,
        }


def _generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator()


def goe_from_normals(M):
    """Symmetrize i.i.d. standard normals: ``(M + M^T) / 2``."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def sample_goe(W, rng, size=None):
    """Draw GOE matrices with diagonal variance 1 and off-diagonal variance 1/2.

    Parameters
    ----------
    W : int
        Matrix dimension.
    rng : RngStream, int or numpy Generator
    size : int, optional
        Number of independent matrices; ``None`` returns a single ``(W, W)``.
    """
    gen = _generator(rng)
    shape = (W, W) if size is None else (size, W, W)
    return goe_from_normals(gen.standard_normal(shape))


def sample_disorder(ensemble: EnsembleSpec, rng, size=None):
    gen = _generator(rng)
    W = ensemble.W
    shape = (W, W) if size is None else (size, W, W)
    if ensemble.kind == GOE:
        return ensemble.scale * goe_from_normals(gen.standard_normal(shape))
    if ensemble.kind == CAUCHY:
        return ensemble.scale * gen.standard_cauchy(shape)
    out = np.zeros(shape)
    d = gen.standard_normal(shape[:-1])
    idx = np.arange(W)
    out[..., idx, idx] = ensemble.scale * d
    return out


def sample_potential(model: ModelSpec, rng, size=None):
    """``A + lam * V`` for one vertex (or ``size`` independent vertices)."""
    if model.lam == 0.0:
        shape = (model.W, model.W) if size is None else (size, model.W, model.W)
        return np.broadcast_to(model.A, shape).copy()
    return model.A + model.lam * sample_disorder(model.ensemble, rng, size)


def projected_blocks(V, P: Projector):
    """Compressions ``(PVP, PVQ, QVP, QVQ)`` as full W x W matrices.

    The four pieces sum to ``V`` (up to rounding for non-coordinate ``P``).
    """
    V = np.asarray(V)
    if V.shape[-1] != P.dim:
        raise DimensionMismatch(f"V has dim {V.shape[-1]}, projector has dim {P.dim}")
    Pm = P.matrix
    Qm = np.eye(P.dim) - Pm
    if np.all(np.isreal(Pm)):
        Pm, Qm = Pm.real, Qm.real
    return Pm @ V @ Pm, Pm @ V @ Qm, Qm @ V @ Pm, Qm @ V @ Qm


def quadratic_forms(V, u, w):
    """``(<u, V u>, <u, V w>)`` for a stack of real symmetric ``V``."""
    u = np.asarray(u)
    w = np.asarray(w)
    Vu = V @ u
    return Vu @ np.conj(u), Vu @ np.conj(w)


__all__ = [
    "CAUCHY",
    "DIAG",
    "GOE",
    "EnsembleSpec",
    "ModelSpec",
    "goe_from_normals",
    "projected_blocks",
    "quadratic_forms",
    "sample_disorder",
    "sample_goe",
    "sample_potential",
]
