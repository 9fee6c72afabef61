"""Slowest Lyapunov exponent along a tree ray, free closed forms and spectral sets."""

from dataclasses import dataclass, field

import numpy as np

from .ensembles import ModelSpec, sample_potential
from .errors import UsageError
from .free import free_gamma_scalar, free_lyapunov
from .linalg import herglotz_min, inv_batch, operator_norm
from .pool import GammaPool, PoolConfig, prepare_pool
from .rng import TAG_RAY, as_stream
from .tree import as_z

DEFAULT_ETA_LADDER = (1e-2, 1e-3, 1e-4)

__all__ = [
    "DEFAULT_ETA_LADDER",
    "IntervalUnion",
    "IntegratedL",
    "LyapunovEstimate",
    "SpectralSets",
    "estimate_L",
    "free_L0",
    "free_gamma_scalar",
    "integrated_L",
    "prefix_log_norms",
    "sample_rays",
    "spectral_sets",
    "sublevel_intervals",
]


def free_L0(E, model: ModelSpec, eta=0.0):
    """Slowest exponent of the unperturbed operator.

    ``min_i -log|g(E - nu_i)|`` over the eigenvalues ``nu_i`` of ``A``, with
    ``g`` the decaying root of ``K g^2 + z g + 1 = 0``.  ``eta > 0`` gives the
    same quantity at ``z = E + i eta`` (what a finite-eta estimator converges to).
    """
    if model.lam != 0.0:
        raise UsageError("free_L0 describes the lambda = 0 operator")
    return free_lyapunov(E, model.nu, model.K, eta)


@dataclass(frozen=True)
class IntervalUnion:
    """Disjoint, sorted intervals; ``closed`` tells whether endpoints belong to the set."""

    intervals: tuple = ()
    closed: bool = True

    @classmethod
    def from_intervals(cls, intervals, closed=True):
        ivs = sorted((float(a), float(b)) for a, b in intervals if a <= b if closed or a < b)
        merged = []
        for a, b in ivs:
            touching = merged and (a <= merged[-1][1] if closed else a < merged[-1][1])
            if touching:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        return cls(tuple(merged), closed)

    @property
    def empty(self):
        return not self.intervals

    @property
    def measure(self):
        return sum(b - a for a, b in self.intervals)

    def contains(self, E):
        E = np.asarray(E, dtype=float)
        out = np.zeros(E.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (a <= E) & (E <= b) if self.closed else (a < E) & (E < b)
        return out

    def intersect(self, other: "IntervalUnion") -> "IntervalUnion":
        out = []
        for a, b in self.intervals:
            for c, d in other.intervals:
                lo, hi = max(a, c), min(b, d)
                if lo <= hi:
                    out.append((lo, hi))
        return IntervalUnion.from_intervals(out, self.closed and other.closed)

    def __str__(self):
        if self.empty:
            return "{}"
        lb, rb = ("[", "]") if self.closed else ("(", ")")
        return " U ".join(f"{lb}{a:.6g}, {b:.6g}{rb}" for a, b in self.intervals)


@dataclass(frozen=True)
class SpectralSets:
    S_eps: IntervalUnion
    S_eps_minus: IntervalUnion
    S_0: IntervalUnion


def spectral_sets(model: ModelSpec, epsilon=0.0):
    """Union of shifted l1 bands, intersection of shifted l2 bands, and the open S_0."""
    if epsilon < 0:
        raise UsageError("epsilon must be >= 0")
    nu = model.nu
    K = model.K
    r1 = K + 1.0
    r2 = 2.0 * np.sqrt(K)
    # zero-width intervals (epsilon at the full half-width) count as empty
    s_eps = IntervalUnion.from_intervals([(v - r1 + epsilon, v + r1 - epsilon) for v in nu if epsilon < r1])
    lo = max(v - r2 + epsilon for v in nu)
    hi = min(v + r2 - epsilon for v in nu)
    s_minus = IntervalUnion.from_intervals([(lo, hi)] if lo < hi else [])
    s0 = IntervalUnion.from_intervals([(v - r1, v + r1) for v in nu], closed=False)
    return SpectralSets(s_eps, s_minus, s0)


def sublevel_intervals(grid, values, level):
    """Maximal runs of grid points with ``values < level``, as closed intervals."""
    grid = np.asarray(grid)
    below = np.asarray(values) < level
    runs = []
    start = None
    for i, b in enumerate(below):
        if b and start is None:
            start = i
        if start is not None and (not b or i == len(below) - 1):
            stop = i if b else i - 1
            runs.append((grid[start], grid[stop]))
            start = None
    return IntervalUnion.from_intervals(runs)


def sample_rays(pool: GammaPool, length, rng, replicas):
    """Forward messages along independent rays ``0 = x_0, x_1, ..., x_length``.

    Off-path children and the continuation below ``x_length`` are drawn from
    the pool; the on-path messages are then built from the far end inward.
    Replica ``r`` uses stream ``rng/(TAG_RAY, r)``.

    Returns
    -------
    ndarray, shape (replicas, length + 1, W, W)
        ``out[r, k]`` is ``Gamma(x_k)`` on ray ``r``.
    """
    model = pool.model
    K, W = model.K, model.W
    base = as_stream(rng)
    L1 = length + 1
    U = np.empty((replicas, L1, W, W))
    off = np.empty((replicas, L1, W, W), dtype=complex)
    tail = np.empty((replicas, W, W), dtype=complex)
    for r in range(replicas):
        gen = base.child(TAG_RAY, r).generator()
        U[r] = sample_potential(model, gen, size=L1)
        if K > 1:
            off[r] = pool.draw_sum(gen, L1, K - 1)
        tail[r] = pool.draw(gen, (1,))[0]
    eye = np.eye(W)
    out = np.empty((replicas, L1, W, W), dtype=complex)
    below = tail
    for k in range(length, -1, -1):
        below = inv_batch(U[:, k] - pool.z * eye - off[:, k] - below)
        out[:, k] = below
    return out


@dataclass
class LyapunovEstimate:
    mean: float
    stderr: float
    n: int
    replicas: int
    z: complex
    model: ModelSpec
    pool_size: int
    burn_in: int
    per_replica: np.ndarray = field(repr=False, default=None)
    herglotz_min: float = np.inf

    @property
    def E(self):
        return self.z.real

    @property
    def eta(self):
        return self.z.imag


def _log_norm_products(rays):
    """``log ||Gamma_0 Gamma_1 ... Gamma_n||`` per ray with per-step renormalization."""
    R, L1, W, _ = rays.shape
    P = rays[:, L1 - 1]
    acc = np.zeros(R)
    for k in range(L1 - 2, -1, -1):
        P = rays[:, k] @ P
        scale = np.sqrt(np.sum(np.abs(P) ** 2, axis=(-1, -2)))
        acc += np.log(scale)
        P = P / scale[:, None, None]
    return acc + np.log(operator_norm(P))


def prefix_log_norms(blocks):
    """``log ||B_0 B_1 ... B_d||`` for every prefix ``d`` of each chain.

    Parameters
    ----------
    blocks : ndarray, shape (R, L, W, W)

    Returns
    -------
    ndarray, shape (R, L)
    """
    R, L1 = blocks.shape[:2]
    out = np.empty((R, L1))
    P = blocks[:, 0]
    acc = np.zeros(R)
    for d in range(L1):
        if d:
            P = P @ blocks[:, d]
        out[:, d] = acc + np.log(operator_norm(P))
        scale = np.sqrt(np.sum(np.abs(P) ** 2, axis=(-1, -2)))
        acc += np.log(scale)
        P = P / scale[:, None, None]
    return out


def estimate_L(model: ModelSpec, z, n=2000, rng=0, replicas=32, pool=None, pool_config=PoolConfig()):
    """Monte-Carlo estimate of ``-1/(n+1) log ||G(0, x_n; z)||``.

    Parameters
    ----------
    model : ModelSpec
    z : complex or SpectralPoint
        Needs ``Im z > 0``.
    n : int
        Ray length.
    rng : RngStream or int
    replicas : int
        Independent rays; the stderr is their sample standard error.
    pool : GammaPool, optional
        A burned-in pool at the same ``z``; prepared from ``pool_config`` if omitted.
    """
    z = as_z(z)
    base = as_stream(rng)
    if pool is None:
        pool = prepare_pool(model, z, pool_config, base)
    pool.require_burned_in(pool_config.burn_in)
    if pool.z != z or pool.model != model:
        raise UsageError("pool was built for a different model or z")
    if replicas < 2:
        raise UsageError("need at least two replicas for an error bar")
    rays = sample_rays(pool, n, base, replicas)
    per = -_log_norm_products(rays) / (n + 1)
    hmin = min(pool.herglotz_min, herglotz_min(rays))
    return LyapunovEstimate(
        mean=float(np.mean(per)),
        stderr=float(np.std(per, ddof=1) / np.sqrt(replicas)),
        n=n,
        replicas=replicas,
        z=z,
        model=model,
        pool_size=pool.size,
        burn_in=pool_config.burn_in,
        per_replica=per,
        herglotz_min=hmin,
    )


@dataclass
class IntegratedL:
    value: float
    stderr: float
    witness_measure: float
    grid: np.ndarray
    estimates: list

    @property
    def L_hat(self):
        return np.array([e.mean for e in self.estimates])

    @property
    def L_stderr(self):
        return np.array([e.stderr for e in self.estimates])


def energy_grid(a, b, step):
    if step <= 0:
        raise UsageError("grid step must be positive")
    if b < a:
        raise UsageError("interval must satisfy a <= b")
    if b == a:
        return np.array([a], dtype=float)
    m = int(round((b - a) / step))
    return np.linspace(a, b, max(m, 1) + 1)


def integrated_L(model, interval, step, eta, rng=0, n=2000, replicas=32, pool_config=PoolConfig()):
    """Trapezoid integral of the estimated exponent over ``interval``.

    Also returns the grid measure of ``{E : L_hat + 3 stderr < log K}``,
    i.e. ``step`` times the number of grid points passing that test.
    Grid point ``i`` uses stream ``rng/(i,)``.
    """
    a, b = interval
    grid = energy_grid(a, b, step)
    if b == a:
        return IntegratedL(0.0, 0.0, 0.0, grid, [])
    base = as_stream(rng)
    ests = [
        estimate_L(model, complex(E, eta), n=n, rng=base.child(i), replicas=replicas, pool_config=pool_config)
        for i, E in enumerate(grid)
    ]
    L = np.array([e.mean for e in ests])
    se = np.array([e.stderr for e in ests])
    h = grid[1] - grid[0]
    w = np.full(len(grid), h)
    w[0] = w[-1] = h / 2
    passing = np.sum(L + 3 * se < np.log(model.K))
    return IntegratedL(float(w @ L), float(np.sqrt(np.sum((w * se) ** 2))), float(h * passing), grid, ests)
