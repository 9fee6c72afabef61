"""Fractional moments ``E ||G(0, x)||^s`` and the ratios that control them.

All path quantities are sampled on pool-backed rays: every path vertex sees
``K - 1`` off-path children drawn from a burned-in pool, so the Green
blocks are those of the infinite tree up to the pool approximation.
"""

from dataclasses import dataclass, field

import numpy as np

from .ensembles import ModelSpec, sample_disorder, sample_goe
from .errors import InvalidExponent, InvalidExponents, UsageError, ZeroVector
from .linalg import Projector, inv_batch, schur_complement
from .lyapunov import prefix_log_norms, sample_rays
from .pool import GammaPool, PoolConfig, pool_backed_greens, prepare_pool
from .rng import TAG_MOMENT, TAG_TREE, as_stream
from .stats import jackknife, linear_fit, log_mean_exp, mean_stderr
from .tree import TreeGeometry, as_z

MIN_FIT_DISTANCE = 4
FACTORIZATION_ETAS = (1e-1, 1e-2, 1e-3)
HEAVY_TOP_FRACTION = 0.01
HEAVY_SHARE = 0.5


def _check_exponent(s, upper=2.0, closed=True):
    ok = 0 < s <= upper if closed else 0 < s < upper
    if not ok:
        rng = f"(0, {upper}]" if closed else f"(0, {upper})"
        raise InvalidExponent(f"exponent s={s} outside {rng}")


def _pool_for(model, z, pool, pool_config, base):
    if pool is None:
        return prepare_pool(model, z, pool_config, base)
    if pool.z != z or pool.model != model:
        raise UsageError("pool was built for a different model or z")
    pool.require_burned_in(pool_config.burn_in)
    return pool


def heavy_tail_flags(values, top=HEAVY_TOP_FRACTION, share=HEAVY_SHARE):
    """Per column: does the top ``top`` fraction of samples carry more than ``share`` of the sum?"""
    v = np.sort(np.asarray(values, dtype=float), axis=0)[::-1]
    k = max(1, int(np.ceil(top * v.shape[0])))
    total = v.sum(axis=0)
    return v[:k].sum(axis=0) > share * np.where(total > 0, total, np.inf)


@dataclass
class MomentScan:
    """Per-distance log-moments and the fitted decay rate ``phi``."""

    s: float
    z: complex
    model: ModelSpec
    distances: np.ndarray
    log_moments: np.ndarray
    log_moment_stderr: np.ndarray
    phi: float
    phi_stderr: float
    intercept: float
    residuals: np.ndarray
    heavy_tail: np.ndarray
    samples: int
    fit_from: int = MIN_FIT_DISTANCE

    @property
    def ci(self):
        return self.phi - 1.96 * self.phi_stderr, self.phi + 1.96 * self.phi_stderr

    @property
    def heavy_tail_any(self):
        return bool(np.any(self.heavy_tail))

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residuals)))


def estimate_phi(model: ModelSpec, z, s, distances=tuple(range(1, 25)), samples=10_000, rng=0,
                 pool=None, pool_config=PoolConfig(), fit_from=MIN_FIT_DISTANCE):
    """Fractional moments along a ray and the slope of their logarithm.

    The slope ``phi`` is an unweighted least-squares fit of
    ``log E ||G(0, x_d)||^s`` against ``d`` over ``d >= fit_from``; its error
    bar is a blocked jackknife over rays.

    Parameters
    ----------
    s : float
        Exponent in ``(0, 2]``.
    distances : sequence of int
        Strictly increasing.
    samples : int
        Independent rays.
    """
    _check_exponent(s)
    d = np.asarray(distances, dtype=int)
    if d.ndim != 1 or d.size == 0 or np.any(np.diff(d) <= 0) or d[0] < 0:
        raise UsageError("distances must be strictly increasing non-negative integers")
    fit = d >= fit_from
    if fit.sum() < 2:
        raise UsageError(f"need at least two distances >= {fit_from} for the slope")
    if samples < 2:
        raise UsageError("need at least two samples")
    z = as_z(z)
    base = as_stream(rng)
    pool = _pool_for(model, z, pool, pool_config, base)
    rays = sample_rays(pool, int(d[-1]), base.child(TAG_MOMENT), samples)
    logn = prefix_log_norms(rays)[:, d]
    xs = d[fit]

    def stat(block):
        lm = log_mean_exp(s * block, axis=0)
        slope, icpt, _ = linear_fit(xs, lm[fit])
        return np.concatenate([lm, [slope, icpt]])

    est, se = jackknife(stat, logn)
    lm, lm_se = est[:-2], se[:-2]
    slope, icpt = est[-2], est[-1]
    resid = lm[fit] - (icpt + slope * xs)
    heavy = heavy_tail_flags(np.exp(s * (logn - logn.max(axis=0))))
    return MomentScan(float(s), z, model, d, lm, lm_se, float(slope), float(se[-2]), float(icpt),
                      resid, heavy, samples, fit_from)


def _chain_messages(U, off, z, below, start, stop):
    """Forward messages for path vertices ``start..stop-1``, built from ``stop - 1`` up.

    ``below`` is the message entering vertex ``stop - 1`` from the path (zero
    when the next path vertex is deleted).
    """
    W = U.shape[-1]
    eye = np.eye(W)
    out = np.empty(U.shape[:1] + (stop - start, W, W), dtype=complex)
    msg = below
    for k in range(stop - 1, start - 1, -1):
        msg = inv_batch(U[:, k] - z * eye - off[:, k] - msg)
        out[:, k - start] = msg
    return out


def _log_norm(blocks):
    return prefix_log_norms(blocks)[:, -1]


@dataclass
class FactorizationRung:
    eta: float
    ratio_a: float
    ratio_a_stderr: float
    ratio_b1: float
    ratio_b1_stderr: float
    ratio_b2: float
    ratio_b2_stderr: float


@dataclass
class FactorizationReport:
    """Moment ratios across an ``eta`` ladder.

    ``ratio_a``: ``E||G^{T_x}(0,x_-)||^s / (E||G^{T_{u,x}}(0,u_-)||^s E||G^{T_{u,x}}(u_+,x_-)||^s)``.
    ``ratio_b1``: ``E||G^{T_x}(0,x_-)||^s / E||G^{T_{x_-}}(0,x_--)||^s``.
    ``ratio_b2``: ``E||G(0,x_-)||^s / E||G^{T_x}(0,x_-)||^s``.
    """

    model: ModelSpec
    E: float
    s: float
    depth: int
    u_depth: int
    samples: int
    rungs: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rungs])

    def envelope(self, name="ratio_a"):
        """``max / min`` of a ratio across the rungs."""
        v = self.column(name)
        return float(v.max() / v.min())


def _factorization_rung(pool: GammaPool, s, m, j, samples, gen):
    model = pool.model
    K, W, z = model.K, model.W, pool.z
    if model.lam == 0.0:
        U = np.broadcast_to(model.A, (samples, m + 1, W, W))
    else:
        U = model.A + model.lam * _disorder(model, gen, (samples, m + 1))
    off = pool.draw(gen, (samples * (m + 1), K - 1)).sum(axis=1).reshape(samples, m + 1, W, W)
    tail = pool.draw(gen, (samples,))
    zero = np.zeros((samples, W, W), dtype=complex)
    eye = np.eye(W)
    # path 0 = x_0, ..., x_m = x; u = x_j
    a_msgs = _chain_messages(U, off, z, zero, 0, m)
    b_msgs = _chain_messages(U, off, z, zero, 0, j)
    d_msgs = _chain_messages(U, off, z, zero, 0, m - 1)
    gx = inv_batch(U[:, m] - z * eye - off[:, m] - tail)
    f_msgs = _chain_messages(U, off, z, gx, 0, m)
    logs = np.column_stack([
        _log_norm(a_msgs),
        _log_norm(b_msgs),
        _log_norm(a_msgs[:, j + 1:]),
        _log_norm(d_msgs),
        _log_norm(f_msgs),
    ])

    def stat(block):
        lm = log_mean_exp(s * block, axis=0)
        a, b, c, dd, f = lm
        return np.exp([a - b - c, a - dd, f - a])

    est, se = jackknife(stat, logs)
    return FactorizationRung(z.imag, *(float(v) for v in (est[0], se[0], est[1], se[1], est[2], se[2])))


def _disorder(model, gen, shape):
    n = int(np.prod(shape))
    return sample_disorder(model.ensemble, gen, size=n).reshape(shape + (model.W, model.W))


def factorization_moment_ratios(model: ModelSpec, E, s, depth=6, samples=10_000, rng=0,
                                etas=FACTORIZATION_ETAS, pool_config=PoolConfig(), u_depth=None):
    """Path-factorization moment ratios on pool-backed paths of length ``depth``.

    ``u`` is the path vertex at ``u_depth`` (default ``depth // 2``).  Rung
    ``i`` prepares its own pool from stream ``rng/(i,)`` and samples paths
    from ``rng/(i, TAG_MOMENT)``.
    """
    _check_exponent(s, upper=1.0, closed=False)
    m = int(depth)
    if m < 3:
        raise UsageError("path length must be >= 3 so that u has both neighbours on the path")
    j = m // 2 if u_depth is None else int(u_depth)
    if not 1 <= j <= m - 2:
        raise UsageError("u must sit strictly inside the path, away from x_-")
    base = as_stream(rng)
    report = FactorizationReport(model, float(E), float(s), m, j, samples)
    for i, eta in enumerate(etas):
        z = complex(E, eta)
        pool = prepare_pool(model, z, pool_config, base.child(i))
        gen = base.child(i, TAG_MOMENT).generator()
        report.rungs.append(_factorization_rung(pool, s, m, j, samples, gen))
    return report


@dataclass
class QuadformEstimate:
    mean: float
    stderr: float
    raw_mean: float
    raw_stderr: float
    samples: int

    @property
    def stable(self):
        return self.mean > 10.0 * self.stderr


def goe_quadform_lower_bound(W, s, sigma=None, phi=None, psi=None, samples=100_000, rng=0, lam=1.0):
    """Monte-Carlo ``E |<(lam V - sigma)^{-1} phi, psi>|^s``, raw and normalized.

    The normalized value divides by ``||phi||^s ||psi||^s``.  ``V`` is GOE.
    """
    _check_exponent(s, upper=1.0, closed=False)
    phi = np.eye(W)[0] if phi is None else np.asarray(phi, dtype=complex)
    psi = np.eye(W)[0] if psi is None else np.asarray(psi, dtype=complex)
    nphi, npsi = np.linalg.norm(phi), np.linalg.norm(psi)
    if nphi == 0 or npsi == 0:
        raise ZeroVector("phi and psi must be nonzero")
    sigma = np.zeros((W, W)) if sigma is None else np.asarray(sigma)
    V = sample_goe(W, as_stream(rng).child(TAG_MOMENT).generator(), size=samples)
    R = inv_batch(lam * V - sigma)
    vals = np.abs((R @ phi) @ np.conj(psi)) ** s
    raw, raw_se = mean_stderr(vals)
    norm = (nphi * npsi) ** s
    return QuadformEstimate(float(raw / norm), float(raw_se / norm), raw, raw_se, samples)


def mobius(a, b, c, d):
    """Fractional-linear map ``x -> (a x + b) / (c x + d)`` with real coefficients."""
    a, b, c, d = (float(v) for v in (a, b, c, d))
    return lambda x: (a * x + b) / (c * x + d)


@dataclass
class DecouplingEstimate:
    ratio: float
    stderr: float
    moment_alpha: float
    moment_beta: float


def decoupling_ratio(f, alpha, beta, samples=100_000, rng=0, n_vars=1):
    """``(E|f|^beta)^{1/beta} / (E|f|^alpha)^{1/alpha}`` for i.i.d. standard normal inputs.

    ``f`` takes ``n_vars`` arrays (one per coordinate) and is meant to be
    fractional-linear in each of them.
    """
    if not 0 < alpha < beta < 1:
        raise InvalidExponents("need 0 < alpha < beta < 1")
    X = as_stream(rng).child(TAG_MOMENT).generator().standard_normal((samples, n_vars))
    vals = np.abs(np.broadcast_to(f(*X.T), (samples,))).astype(float)

    def stat(v):
        ma = np.mean(v**alpha)
        mb = np.mean(v**beta)
        return np.array([mb ** (1 / beta) / ma ** (1 / alpha), ma, mb])

    est, se = jackknife(stat, vals)
    return DecouplingEstimate(float(est[0]), float(se[0]), float(est[1]), float(est[2]))


@dataclass
class SigmaMoments:
    values: np.ndarray
    s: float
    moment: float
    stderr: float


def sigma_values(greens, x):
    """Schur-complement field ``sigma`` at sphere vertex ``x`` of a pool-backed tree.

    With ``v`` the top right-singular direction of ``G^{T_x}(0, x_-)`` and
    ``P`` the projector on ``v``, ``<G(x,x) v, v> = (g - sigma)^{-1}`` where
    ``g = lam <V(x) v, v>``.
    """
    _, v = greens.punctured_path_green(x)
    i = greens._index(x)
    W = greens.W
    T = greens.potentials[i] - greens.z * np.eye(W) - greens.backward[i] - greens.sigma[i]
    c = schur_complement(T, Projector.span(v))[0, 0]
    A = greens.model.A
    g = np.conj(v) @ (greens.potentials[i] - A) @ v
    return g - c


def sigma_statistic(model: ModelSpec, z, n=3, trees=500, rng=0, s=0.5, pool=None, pool_config=PoolConfig()):
    """``E |sigma|^s`` at the first vertex of the sphere ``S_n`` over independent trees."""
    _check_exponent(s, upper=1.0, closed=False)
    z = as_z(z)
    base = as_stream(rng)
    pool = _pool_for(model, z, pool, pool_config, base)
    x = TreeGeometry(model.K, n).offset(n)
    vals = np.empty(trees, dtype=complex)
    for t in range(trees):
        greens = pool_backed_greens(pool, n, base.child(TAG_TREE, t))
        vals[t] = sigma_values(greens, x)
    m, se = mean_stderr(np.abs(vals) ** s)
    return SigmaMoments(vals, float(s), m, se)


__all__ = [
    "FACTORIZATION_ETAS",
    "MIN_FIT_DISTANCE",
    "DecouplingEstimate",
    "FactorizationReport",
    "FactorizationRung",
    "MomentScan",
    "QuadformEstimate",
    "SigmaMoments",
    "decoupling_ratio",
    "estimate_phi",
    "factorization_moment_ratios",
    "goe_quadform_lower_bound",
    "heavy_tail_flags",
    "mobius",
    "sigma_statistic",
    "sigma_values",
]
