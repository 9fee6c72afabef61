"""Exact Green functions on finite truncations of the rooted K-ary tree.

Vertices are stored in level order.  The vertex with path word
``(c_1, ..., c_d)`` (children numbered ``0..K-1``) sits at index
``(K**d - 1) / (K - 1) + sum_i c_i K**(d - i)``; this index does not depend on
the truncation depth, so a deeper tree extends a shallower one.

Two message families are computed:

* forward ``Gamma(y)``: diagonal Green block at ``y`` of the subtree hanging
  below ``y`` (parent removed), leaf to root;
* backward ``Gamma_hat(x)``: diagonal Green block at the parent of ``x`` of
  the graph with ``x`` removed (root component), root to leaf.

Leaves carry an optional boundary self-energy (sum of external forward
messages); without it the truncated operator is the free finite one.
"""

from dataclasses import dataclass, field

import numpy as np

from .ensembles import ModelSpec, sample_potential
from .errors import DimensionTooLarge, UsageError, VertexOutOfRange
from .linalg import dagger, herglotz_min, inv_batch, operator_norm, skew_part, w_max_vector
from .rng import TAG_POTENTIAL, as_stream

DENSE_LIMIT = 5000


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter ``z = E + i eta``."""

    E: float
    eta: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise UsageError("eta must be >= 0")

    @property
    def z(self):
        return complex(self.E, self.eta)

    def require_positive(self):
        if self.eta <= 0:
            raise UsageError("resolvent computations need eta > 0")
        return self


def as_z(z):
    """Accept a SpectralPoint or complex number; reject ``Im z <= 0``."""
    if isinstance(z, SpectralPoint):
        z = z.z
    z = complex(z)
    if z.imag <= 0:
        raise UsageError("resolvent computations need Im z > 0")
    return z


@dataclass(frozen=True)
class TreeGeometry:
    """Rooted K-ary tree truncated at ``depth`` (root at depth 0)."""

    K: int
    depth: int

    def __post_init__(self):
        if self.K < 2:
            raise UsageError("K must be >= 2")
        if self.depth < 0:
            raise UsageError("depth must be >= 0")

    @property
    def n_vertices(self):
        return (self.K ** (self.depth + 1) - 1) // (self.K - 1)

    def offset(self, d):
        return (self.K**d - 1) // (self.K - 1)

    def level(self, d):
        """Indices of the sphere of radius ``d``."""
        return np.arange(self.offset(d), self.offset(d + 1))

    def depth_of(self, index):
        d = 0
        while self.offset(d + 1) <= index:
            d += 1
        return d

    def index(self, path):
        path = tuple(path)
        if len(path) > self.depth or any(not 0 <= c < self.K for c in path):
            raise VertexOutOfRange(f"vertex {path} not in tree of depth {self.depth}")
        j = 0
        for c in path:
            j = j * self.K + c
        return self.offset(len(path)) + j

    def path(self, index):
        if not 0 <= index < self.n_vertices:
            raise VertexOutOfRange(f"index {index} out of range")
        d = self.depth_of(index)
        j = index - self.offset(d)
        word = []
        for _ in range(d):
            word.append(j % self.K)
            j //= self.K
        return tuple(reversed(word))

    def parent(self, index):
        d = self.depth_of(index)
        if d == 0:
            raise VertexOutOfRange("the root has no parent")
        return self.offset(d - 1) + (index - self.offset(d)) // self.K

    def children(self, index):
        d = self.depth_of(index)
        if d == self.depth:
            return np.arange(0)
        j = index - self.offset(d)
        start = self.offset(d + 1) + j * self.K
        return np.arange(start, start + self.K)

    def ancestors(self, indices, d):
        """Ancestor at each depth ``0..d-1`` of the depth-``d`` vertices ``indices``.

        Returns an int array of shape ``(len(indices), d)``.
        """
        j = np.asarray(indices) - self.offset(d)
        cols = [self.offset(k) + j // self.K ** (d - k) for k in range(d)]
        return np.stack(cols, axis=-1) if cols else np.zeros((len(j), 0), dtype=int)

    def edges(self):
        for d in range(self.depth):
            for i in self.level(d):
                for c in self.children(i):
                    yield i, int(c)


def _as_potentials(potentials):
    U = np.asarray(potentials)
    if U.ndim != 3 or U.shape[1] != U.shape[2]:
        raise UsageError("potentials must have shape (n_vertices, W, W)")
    return U


def sample_tree_potentials(geometry: TreeGeometry, model: ModelSpec, rng):
    """On-site blocks for every vertex, shape ``(n_vertices, W, W)``.

    One generator per tree (stream ``rng.child(TAG_POTENTIAL)``) fills the
    vertices in level order, so a vertex's block is a function of the seed,
    the tree stream and its path word only.
    """
    if geometry.K != model.K:
        raise UsageError("geometry and model disagree on K")
    gen = as_stream(rng).child(TAG_POTENTIAL).generator()
    return sample_potential(model, gen, size=geometry.n_vertices)


def forward_pass(geometry: TreeGeometry, potentials, z, boundary=None):
    """Forward messages ``Gamma`` and the self-energies that produced them.

    Parameters
    ----------
    boundary : ndarray, shape (K**depth, W, W), optional
        Extra self-energy on each leaf.

    Returns
    -------
    gamma : ndarray, shape (n_vertices, W, W)
    sigma : ndarray, shape (n_vertices, W, W)
        ``sigma[i]`` is the sum of the children's messages (or the boundary),
        so that ``gamma[i] = (U[i] - z - sigma[i])^{-1}``.
    """
    U = _as_potentials(potentials)
    z = as_z(z)
    K, n = geometry.K, geometry.depth
    N, W = U.shape[0], U.shape[1]
    if N != geometry.n_vertices:
        raise UsageError("potentials do not match the geometry")
    eye = np.eye(W)
    gamma = np.empty((N, W, W), dtype=complex)
    sigma = np.zeros((N, W, W), dtype=complex)
    leaves = geometry.level(n)
    if boundary is not None:
        boundary = np.asarray(boundary, dtype=complex)
        if boundary.shape != (len(leaves), W, W):
            raise UsageError("boundary must have shape (K**depth, W, W)")
        sigma[leaves] = boundary
    gamma[leaves] = inv_batch(U[leaves] - z * eye - sigma[leaves])
    for d in range(n - 1, -1, -1):
        lv = geometry.level(d)
        below = gamma[geometry.level(d + 1)].reshape(len(lv), K, W, W)
        sigma[lv] = below.sum(axis=1)
        gamma[lv] = inv_batch(U[lv] - z * eye - sigma[lv])
    return gamma, sigma


def backward_pass(geometry: TreeGeometry, potentials, forward, z):
    """Backward messages and diagonal Green blocks.

    ``forward`` is the ``(gamma, sigma)`` pair returned by ``forward_pass``.
    The root has no parent; its backward entry is zero.
    """
    U = _as_potentials(potentials)
    gamma, sigma = forward
    z = as_z(z)
    K, n = geometry.K, geometry.depth
    W = U.shape[1]
    eye = np.eye(W)
    hat = np.zeros_like(gamma)
    diag = np.empty_like(gamma)
    diag[0] = gamma[0]
    for d in range(1, n + 1):
        lv = geometry.level(d)
        par = geometry.level(d - 1)
        par_of = np.repeat(par, K)
        # parent-side field at the parent, plus its other children
        rest = hat[par_of] + sigma[par_of] - gamma[lv]
        hat[lv] = inv_batch(U[par_of] - z * eye - rest)
        diag[lv] = inv_batch(U[lv] - z * eye - hat[lv] - sigma[lv])
    return hat, diag


def _chain_product(blocks):
    """Signed product ``(-1)**(m-1) B_0 B_1 ... B_{m-1}`` over axis -3.

    Each unit hopping between consecutive path vertices contributes a factor
    ``-1`` to the resolvent block.
    """
    out = blocks[..., 0, :, :]
    for k in range(1, blocks.shape[-3]):
        out = -(out @ blocks[..., k, :, :])
    return out


@dataclass
class TreeGreens:
    """All Green blocks of one sampled finite tree at one spectral point."""

    geometry: TreeGeometry
    potentials: np.ndarray
    z: complex
    forward: np.ndarray
    sigma: np.ndarray
    backward: np.ndarray
    diagonal: np.ndarray
    boundary: np.ndarray = None
    model: ModelSpec = None
    meta: dict = field(default_factory=dict)

    @property
    def W(self):
        return self.potentials.shape[1]

    def _index(self, x):
        if isinstance(x, (tuple, list)):
            return self.geometry.index(x)
        x = int(x)
        if not 0 <= x < self.geometry.n_vertices:
            raise VertexOutOfRange(f"vertex index {x} out of range")
        return x

    def herglotz_min(self):
        return min(herglotz_min(self.forward), herglotz_min(self.backward[1:]), herglotz_min(self.diagonal))

    def path_green(self, x):
        """``G(0, x)`` as the (signed) product of forward messages along the path."""
        i = self._index(x)
        d = self.geometry.depth_of(i)
        return self.sphere_path_green(d, np.array([i]))[0]

    def sphere_path_green(self, d, indices=None):
        """``G(0, x)`` for every ``x`` on the sphere of radius ``d`` (or ``indices``)."""
        idx = self.geometry.level(d) if indices is None else np.asarray(indices)
        chain = np.concatenate([self.geometry.ancestors(idx, d), idx[:, None]], axis=1)
        return _chain_product(self.forward[chain])

    def punctured_path_green(self, x):
        """``G^{T_x}(0, x_-)`` and ``w_max`` of its Gram matrix ``G* G``."""
        i = self._index(x)
        d = self.geometry.depth_of(i)
        if d == 0:
            raise VertexOutOfRange("puncturing the root leaves no path")
        G, v = self.sphere_punctured(d, np.array([i]))
        return G[0], v[0]

    def sphere_punctured(self, d, indices=None):
        """Punctured path blocks for all ``x`` at depth ``d >= 1``.

        The forward recursion is re-run along the ancestor path with the
        message of ``x`` removed; all off-path messages are reused.
        """
        if d < 1:
            raise VertexOutOfRange("puncturing needs depth >= 1")
        idx = self.geometry.level(d) if indices is None else np.asarray(indices)
        anc = self.geometry.ancestors(idx, d)
        W = self.W
        eye = np.eye(W)
        U, gam, sig, z = self.potentials, self.forward, self.sigma, self.z
        msgs = np.empty((len(idx), d, W, W), dtype=complex)
        removed = gam[idx]
        replaced = np.zeros_like(removed)
        for k in range(d - 1, -1, -1):
            a = anc[:, k]
            msgs[:, k] = inv_batch(U[a] - z * eye - (sig[a] - removed + replaced))
            removed = gam[a]
            replaced = msgs[:, k]
        G = _chain_product(msgs)
        v = w_max_vector(dagger(G) @ G, check=False)
        return G, v


def compute_tree_greens(geometry, potentials, z, boundary=None, model=None):
    """Run both passes and bundle the results."""
    z = as_z(z)
    gamma, sigma = forward_pass(geometry, potentials, z, boundary)
    hat, diag = backward_pass(geometry, potentials, (gamma, sigma), z)
    return TreeGreens(geometry, np.asarray(potentials), z, gamma, sigma, hat, diag, boundary, model)


def dense_hamiltonian(geometry: TreeGeometry, potentials, boundary=None):
    """Assemble the finite operator; the boundary self-energy enters the leaf blocks."""
    U = _as_potentials(potentials)
    N, W = U.shape[0], U.shape[1]
    H = np.zeros((N * W, N * W), dtype=complex)
    for i in range(N):
        H[i * W:(i + 1) * W, i * W:(i + 1) * W] = U[i]
    if boundary is not None:
        for j, leaf in enumerate(geometry.level(geometry.depth)):
            H[leaf * W:(leaf + 1) * W, leaf * W:(leaf + 1) * W] -= boundary[j]
    eye = np.eye(W)
    for a, b in geometry.edges():
        H[a * W:(a + 1) * W, b * W:(b + 1) * W] = eye
        H[b * W:(b + 1) * W, a * W:(a + 1) * W] = eye
    return H


def dense_resolvent_oracle(geometry: TreeGeometry, potentials, z, boundary=None, deleted=()):
    """Brute-force ``(H - z)^{-1}`` of the truncated operator.

    Vertices in ``deleted`` are removed from the graph; their rows and columns
    of the returned ``(N W, N W)`` matrix are NaN.
    """
    U = _as_potentials(potentials)
    N, W = U.shape[0], U.shape[1]
    if N * W > DENSE_LIMIT:
        raise DimensionTooLarge(f"dense dimension {N * W} exceeds {DENSE_LIMIT}")
    z = as_z(z)
    H = dense_hamiltonian(geometry, U, boundary)
    deleted = sorted({int(i) for i in deleted})
    keep_v = np.setdiff1d(np.arange(N), deleted)
    keep = (keep_v[:, None] * W + np.arange(W)).ravel()
    Hk = H[np.ix_(keep, keep)] - z * np.eye(len(keep))
    Gk = np.linalg.solve(Hk, np.eye(len(keep)))
    G = np.full((N * W, N * W), np.nan, dtype=complex)
    G[np.ix_(keep, keep)] = Gk
    return G


def block(G, x, y, W):
    return G[x * W:(x + 1) * W, y * W:(y + 1) * W]


def gamma_tilde_gap(greens: TreeGreens, n):
    """``Gamma~(0) - sum_{x in S_n} sum_{y child of x} G(0,x) Gamma~(y) G(0,x)*``.

    Positive semidefinite for ``eta > 0``; needs ``n < depth``.
    """
    geo = greens.geometry
    if not 0 <= n < geo.depth:
        raise UsageError("need 0 <= n < depth so that S_n has children")
    xs = geo.level(n)
    G0x = greens.sphere_path_green(n, xs)
    kids = geo.level(n + 1).reshape(len(xs), geo.K)
    tilde_kids = skew_part(greens.forward[kids]).sum(axis=1)
    total = (G0x @ tilde_kids @ dagger(G0x)).sum(axis=0)
    return skew_part(greens.forward[0]) - total


def depth_for_dense(K, W, limit=DENSE_LIMIT):
    """Largest depth whose dense dimension fits the oracle budget."""
    d = 0
    while TreeGeometry(K, d + 1).n_vertices * W <= limit:
        d += 1
    return d


