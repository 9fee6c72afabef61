"""Resonance counting on spheres, second-moment bounds and Green-sum diagnostics.

A resonance at ``x`` on the sphere ``S_n`` combines a long path block
(``R_x``) with a large diagonal matrix element (``E_x``):

* ``R_x = {||G^{T_x}(0, x_-)|| >= r}`` with ``r = exp(-(L + delta) n)``;
* ``E_x = {|<G(x,x) v, w>| >= tau}`` with ``tau = exp((L + 2 delta) n)``.

Here ``w`` is the top right-singular direction of ``G^{T_x}(0, x_-)``.  In
``diagonal`` mode ``v = w``; in ``quantile`` mode ``v = w_max(Gamma~(y))``
for the first child ``y`` of ``x`` and the extra event
``I_x = {||Gamma~(x)|| >= xi}`` is required.

Two truncations are offered.  ``boundary="free"`` samples the finite tree
of depth ``n + 1`` (sphere vertices keep their children, which are free
leaves).  ``boundary="pool"`` samples depth ``n`` and attaches ``K`` pool
draws below each sphere vertex, so the subtrees look infinite.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import ModelSpec
from .errors import DepthTooLarge, EmptySample, InvalidLevel, MissingQuantile, UsageError
from .linalg import operator_norm, skew_part, w_max_vector
from .lyapunov import DEFAULT_ETA_LADDER, prefix_log_norms, sample_rays
from .pool import GammaPool, PoolConfig, pool_backed_greens, prepare_pool
from .rng import TAG_TREE, as_stream
from .stats import jackknife, linear_fit, log_mean_exp, mean_stderr
from .tree import TreeGeometry, as_z, compute_tree_greens, sample_tree_potentials

DIAGONAL = "diagonal"
QUANTILE = "quantile"
FREE = "free"
POOL = "pool"
DEFAULT_DELTA = 0.05
# cap on n_vertices * W**2 for trees held in memory
TREE_BLOCK_LIMIT = 4_000_000


@dataclass(frozen=True)
class ResonanceConfig:
    """Thresholds for the resonance events on the sphere of radius ``n``."""

    n: int
    L_ref: float
    delta: float = DEFAULT_DELTA
    mode: str = DIAGONAL
    p: float = None
    xi: float = None
    boundary: str = FREE

    def __post_init__(self):
        if self.n < 1:
            raise UsageError("sphere radius n must be >= 1")
        if not self.delta > 0:
            raise UsageError("delta must be positive")
        if self.mode not in (DIAGONAL, QUANTILE):
            raise UsageError(f"mode must be {DIAGONAL!r} or {QUANTILE!r}")
        if self.boundary not in (FREE, POOL):
            raise UsageError(f"boundary must be {FREE!r} or {POOL!r}")

    @property
    def tree_depth(self):
        return self.n + 1 if self.boundary == FREE else self.n

    @property
    def tau(self):
        return math.exp((self.L_ref + 2 * self.delta) * self.n)

    @property
    def r_threshold(self):
        return math.exp(-(self.L_ref + self.delta) * self.n)


@dataclass
class ResonanceSample:
    """Per-vertex event flags and the quantities behind them, for one tree."""

    key: tuple
    path_norm: np.ndarray
    pairing: np.ndarray
    R: np.ndarray
    E: np.ndarray
    I: np.ndarray = None
    gamma_tilde_norm: np.ndarray = None

    @property
    def flags(self):
        f = self.R & self.E
        return f if self.I is None else f & self.I

    @property
    def N(self):
        return int(np.sum(self.flags))


def _check_tree_size(K, n, W):
    if TreeGeometry(K, n).n_vertices * W * W > TREE_BLOCK_LIMIT:
        raise DepthTooLarge(f"tree of depth {n} with K={K}, W={W} exceeds the in-memory budget")


def sample_resonance_tree(model, z, config: ResonanceConfig, rng, pool=None):
    """Green blocks of one tree truncated as ``config.boundary`` asks."""
    stream = as_stream(rng)
    if config.boundary == POOL:
        return pool_backed_greens(pool, config.n, stream)
    geo = TreeGeometry(model.K, config.tree_depth)
    U = sample_tree_potentials(geo, model, stream)
    return compute_tree_greens(geo, U, z, model=model)


def events_from_greens(greens, config: ResonanceConfig, key=()):
    """Evaluate the events on ``S_n`` of a tree sampled for ``config``."""
    n = config.n
    geo = greens.geometry
    if geo.depth != config.tree_depth:
        raise UsageError(f"tree depth {geo.depth} does not match the {config.boundary!r} truncation")
    if config.mode == QUANTILE and config.xi is None:
        raise MissingQuantile("quantile mode needs the level xi(p)")
    sphere = greens.geometry.level(n)
    Gp, w = greens.sphere_punctured(n)
    path_norm = operator_norm(Gp)
    Gxx = greens.diagonal[sphere]
    tilde_norm = None
    I = None
    if config.mode == DIAGONAL:
        v = w
    else:
        if config.boundary == POOL:
            child = greens.meta["boundary_children"][:, 0]
        else:
            child = greens.forward[geo.level(n + 1)[:: geo.K]]
        v = w_max_vector(skew_part(child), check=False)
        tilde_norm = operator_norm(skew_part(greens.forward[sphere]))
        I = tilde_norm >= config.xi
    pairing = np.einsum("ni,nij,nj->n", np.conj(w), Gxx, v)
    R = path_norm >= config.r_threshold
    E = np.abs(pairing) >= config.tau
    return ResonanceSample(tuple(key), path_norm, pairing, R, E, I, tilde_norm)


def _pool_for(model, z, pool, pool_config, base):
    if pool is None:
        return prepare_pool(model, z, pool_config, base)
    if pool.z != z or pool.model != model:
        raise UsageError("pool was built for a different model or z")
    pool.require_burned_in(pool_config.burn_in)
    return pool


def resonance_events(model: ModelSpec, z, config: ResonanceConfig, rng=0, pool=None, pool_config=PoolConfig()):
    """Sample one tree and flag the resonances on ``S_n``.

    The tree's randomness comes from ``rng`` itself; with the pool boundary
    the pool (if not given) is prepared from the same stream.
    """
    z = as_z(z)
    if config.mode == QUANTILE and config.xi is None:
        raise MissingQuantile("quantile mode needs the level xi(p)")
    _check_tree_size(model.K, config.tree_depth, model.W)
    stream = as_stream(rng)
    if config.boundary == POOL:
        pool = _pool_for(model, z, pool, pool_config, stream)
    greens = sample_resonance_tree(model, z, config, stream, pool)
    return events_from_greens(greens, config, stream.key)


@dataclass
class ResonanceMoments:
    """First and second factorial moments of the resonance count ``N``."""

    config: ResonanceConfig
    K: int
    counts: np.ndarray
    EN: float
    EN_stderr: float
    ENN1: float
    ENN1_stderr: float
    samples: list = field(default_factory=list, repr=False)

    @property
    def r1(self):
        return self.EN * self.config.tau / self.K**self.config.n

    @property
    def r1_stderr(self):
        return self.EN_stderr * self.config.tau / self.K**self.config.n

    @property
    def r2(self):
        return self.ENN1 * self.config.tau**2 / self.K ** (2 * self.config.n)

    @property
    def r2_stderr(self):
        return self.ENN1_stderr * self.config.tau**2 / self.K ** (2 * self.config.n)


def moment_statistics(model: ModelSpec, z, config: ResonanceConfig, trees=1000, rng=0, pool=None,
                      pool_config=PoolConfig(), keep_samples=False):
    """Sample means of ``N`` and ``N (N - 1)`` over independent trees.

    Tree ``t`` uses stream ``rng/(TAG_TREE, t)``; with the pool boundary all
    trees share one pool.
    """
    if trees < 1:
        raise UsageError("need at least one tree")
    z = as_z(z)
    if config.mode == QUANTILE and config.xi is None:
        raise MissingQuantile("quantile mode needs the level xi(p)")
    _check_tree_size(model.K, config.tree_depth, model.W)
    base = as_stream(rng)
    if config.boundary == POOL:
        pool = _pool_for(model, z, pool, pool_config, base)
    counts = np.empty(trees, dtype=np.int64)
    kept = []
    for t in range(trees):
        stream = base.child(TAG_TREE, t)
        greens = sample_resonance_tree(model, z, config, stream, pool)
        sample = events_from_greens(greens, config, stream.key)
        counts[t] = sample.N
        if keep_samples:
            kept.append(sample)
    en, en_se = mean_stderr(counts)
    enn, enn_se = mean_stderr(counts * (counts - 1))
    return ResonanceMoments(config, model.K, counts, en, en_se, enn, enn_se, kept)


@dataclass
class PZBound:
    """Empirical ``P{N >= 1}`` against the second-moment bound ``(E N)^2 / E N^2``."""

    probability: float
    probability_stderr: float
    bound: float
    bound_stderr: float

    @property
    def sigma(self):
        return math.hypot(self.probability_stderr, self.bound_stderr)

    @property
    def holds(self):
        return self.probability >= self.bound - 3 * self.sigma


def pz_probability(counts):
    """Second-moment check on a sample of non-negative integer counts."""
    N = np.asarray(counts)
    if N.size == 0:
        raise EmptySample("no counts given")
    if np.any(N < 0):
        raise UsageError("counts must be non-negative")
    N = N.astype(float)
    p, p_se = mean_stderr(N >= 1)

    def stat(x):
        m2 = np.mean(x * x)
        return np.mean(x) ** 2 / m2 if m2 > 0 else 0.0

    b, b_se = jackknife(stat, N)
    return PZBound(p, p_se, float(b), float(b_se))


def gamma_quantile(pool, p):
    """Upper ``p``-quantile of ``||Gamma~||`` over pool members.

    The largest ``t`` such that the empirical ``P{||Gamma~|| >= t} >= p``:
    with the norms sorted in decreasing order this is the entry at position
    ``ceil(p N)``.
    """
    if not 0 < p < 1:
        raise InvalidLevel(f"quantile level {p} outside (0, 1)")
    samples = pool.samples if isinstance(pool, GammaPool) else np.asarray(pool)
    norms = np.sort(operator_norm(skew_part(samples)))[::-1]
    k = max(1, math.ceil(p * norms.size - 1e-9))
    return float(norms[k - 1])


@dataclass
class SimonWolffResult:
    """Partial sums ``S_d = sum_{dist(x,0) <= d} ||G(0, x)||^2`` per ``eta`` rung."""

    E: float
    etas: np.ndarray
    depths: np.ndarray
    shells: np.ndarray
    partial: np.ndarray
    mode: str
    slope: np.ndarray
    r2: np.ndarray
    shell_ratio: np.ndarray
    tail_bound: np.ndarray
    divergence_exponent: float

    @property
    def relative_tail(self):
        return self.tail_bound / self.partial[:, -1]


def _exact_shells(model, E, etas, depth, base):
    W = model.W
    _check_tree_size(model.K, depth, W)
    geo = TreeGeometry(model.K, depth)
    U = sample_tree_potentials(geo, model, base.child(TAG_TREE, 0))
    out = np.empty((len(etas), depth + 1))
    for i, eta in enumerate(etas):
        greens = compute_tree_greens(geo, U, complex(E, eta), model=model)
        for d in range(depth + 1):
            out[i, d] = np.sum(operator_norm(greens.sphere_path_green(d)) ** 2)
    return out


def _ray_shells(model, E, etas, depth, base, replicas, pool_config):
    out = np.empty((len(etas), depth + 1))
    logK = math.log(model.K)
    for i, eta in enumerate(etas):
        stream = base.child(i)
        pool = prepare_pool(model, complex(E, eta), pool_config, stream)
        rays = sample_rays(pool, depth, stream, replicas)
        logn = prefix_log_norms(rays)
        out[i] = np.exp(np.arange(depth + 1) * logK + log_mean_exp(2 * logn, axis=0))
    return out


def simon_wolff_sum(model: ModelSpec, E, etas=DEFAULT_ETA_LADDER, depth=8, rng=0, mode="exact",
                    replicas=64, pool_config=PoolConfig()):
    """Green-function square sums over balls, per ``eta`` rung.

    ``mode="exact"`` sums over one sampled finite tree (free leaves), the
    same tree for every rung.  ``mode="ray"`` estimates the shell sums as
    ``K**d E ||G(0, x_d)||^2`` over pool-backed rays, which reaches large
    depths.

    Diagnostics per rung: the slope and ``R^2`` of ``S_d`` against ``d``; the
    geometric shell ratio fitted on the second half of the shells with the
    tail bound ``shell_D r / (1 - r)`` (infinite when ``r >= 1``).  The
    divergence exponent is the slope of ``log S_D`` against ``log(1/eta)``.
    """
    if depth < 1:
        raise UsageError("depth must be >= 1")
    etas = np.asarray(etas, dtype=float)
    if np.any(etas <= 0):
        raise UsageError("every eta rung must be positive")
    base = as_stream(rng)
    if mode == "exact":
        shells = _exact_shells(model, E, etas, depth, base)
    elif mode == "ray":
        shells = _ray_shells(model, E, etas, depth, base, replicas, pool_config)
    else:
        raise UsageError("mode must be 'exact' or 'ray'")
    partial = np.cumsum(shells, axis=1)
    d = np.arange(depth + 1)
    half = d >= depth // 2
    slope, r2, ratio, tail = [], [], [], []
    for i in range(len(etas)):
        b, _, rr = linear_fit(d, partial[i])
        slope.append(b)
        r2.append(rr)
        with np.errstate(divide="ignore"):
            g, _, _ = linear_fit(d[half], np.log(shells[i, half]))
        q = math.exp(g)
        ratio.append(q)
        tail.append(shells[i, -1] * q / (1 - q) if q < 1 else math.inf)
    if len(etas) > 1:
        expo, _, _ = linear_fit(np.log(1 / etas), np.log(partial[:, -1]))
    else:
        expo = math.nan
    return SimonWolffResult(float(E), etas, d, shells, partial, mode, np.array(slope), np.array(r2),
                            np.array(ratio), np.array(tail), expo)


__all__ = [
    "DEFAULT_DELTA",
    "DIAGONAL",
    "FREE",
    "POOL",
    "QUANTILE",
    "PZBound",
    "ResonanceConfig",
    "ResonanceMoments",
    "ResonanceSample",
    "SimonWolffResult",
    "events_from_greens",
    "gamma_quantile",
    "moment_statistics",
    "pz_probability",
    "resonance_events",
    "sample_resonance_tree",
    "simon_wolff_sum",
]
