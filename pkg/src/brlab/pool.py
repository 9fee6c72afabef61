"""Population dynamics for the law of the forward Green function.

A pool of forward messages is pushed through the recursion
``Gamma <- (U - z - sum_{i<K} Gamma_{j_i})^{-1}`` with fresh disorder and
K members drawn with replacement.  The pool is the infinite-tree surrogate
used by every ray-based estimator.
"""

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensembles import EnsembleSpec, ModelSpec, sample_potential
from .errors import IoError, NotBurnedIn, UsageError
from .free import free_gamma_matrix
from .linalg import herglotz_min, inv_batch
from .rng import TAG_BOUNDARY, TAG_POOL, as_stream
from .tree import TreeGeometry, as_z, compute_tree_greens, sample_tree_potentials

MAGIC = b"BRL-POOL-1"


@dataclass(frozen=True)
class PoolConfig:
    size: int = 10_000
    burn_in: int = 1000
    shards: int = 1

    def __post_init__(self):
        if self.size < 1 or self.burn_in < 0 or self.shards < 1:
            raise UsageError("pool size >= 1, burn_in >= 0, shards >= 1 required")


@dataclass
class GammaPool:
    samples: np.ndarray
    z: complex
    model: ModelSpec
    generation: int = 0
    herglotz_min: float = field(default=np.inf)

    @property
    def size(self):
        return self.samples.shape[0]

    def draw(self, gen, shape):
        """Members drawn uniformly with replacement, shape ``shape + (W, W)``."""
        idx = gen.integers(0, self.size, size=shape)
        return self.samples[idx]

    def draw_sum(self, gen, n, k):
        """Sums of ``k`` members drawn with replacement, shape ``(n, W, W)``.

        Consumes the generator exactly like ``draw(gen, (n, k))``.
        """
        idx = gen.integers(0, self.size, size=(n, k))
        out = self.samples[idx[:, 0]]
        for j in range(1, k):
            out += self.samples[idx[:, j]]
        return out

    def require_burned_in(self, burn_in):
        if self.generation < burn_in:
            raise NotBurnedIn(f"pool at generation {self.generation} < burn-in {burn_in}")


def init_pool(model: ModelSpec, z, size):
    """Pool started at the unperturbed fixed point (exact when ``lam = 0``)."""
    z = as_z(z)
    g0 = free_gamma_matrix(model.A, model.K, z)
    samples = np.broadcast_to(g0, (size, model.W, model.W)).copy()
    return GammaPool(samples, z, model, 0, herglotz_min(g0))


def _shard_bounds(size, shards):
    edges = np.linspace(0, size, shards + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def pool_step(pool: GammaPool, rng, shards=1):
    """One generation.  Shard ``s`` of generation ``g`` uses stream ``rng/(TAG_POOL, g, s)``."""
    if pool.z.imag <= 0:
        raise UsageError("pool updates need eta > 0")
    base = as_stream(rng)
    model = pool.model
    eye = np.eye(model.W)
    out = np.empty_like(pool.samples)
    for s, (lo, hi) in enumerate(_shard_bounds(pool.size, shards)):
        if hi == lo:
            continue
        gen = base.child(TAG_POOL, pool.generation, s).generator()
        U = sample_potential(model, gen, size=hi - lo)
        kids = pool.draw_sum(gen, hi - lo, model.K)
        out[lo:hi] = inv_batch(U - pool.z * eye - kids)
    hmin = min(pool.herglotz_min, herglotz_min(out))
    return GammaPool(out, pool.z, model, pool.generation + 1, hmin)


def burn_in(pool: GammaPool, rng, generations, shards=1, checkpoint=None, every=100):
    """Advance ``pool`` to ``generations`` total generations.

    With ``checkpoint`` set the pool is written every ``every`` generations
    and once more at the end.
    """
    while pool.generation < generations:
        pool = pool_step(pool, rng, shards)
        if checkpoint is not None and pool.generation % every == 0:
            save_pool(pool, checkpoint)
    if checkpoint is not None:
        save_pool(pool, checkpoint)
    return pool


def prepare_pool(model, z, config: PoolConfig, rng, resume=None, checkpoint=None):
    """Initialized (or resumed) and burned-in pool."""
    if resume is not None and Path(resume).exists():
        pool = load_pool(resume)
        if pool.model != model or pool.z != as_z(z) or pool.size != config.size:
            raise UsageError("checkpoint does not match the requested model / z / size")
    else:
        pool = init_pool(model, z, config.size)
    return burn_in(pool, rng, config.burn_in, config.shards, checkpoint)


def pool_backed_greens(pool: GammaPool, depth, rng):
    """Green blocks of a depth-``depth`` tree whose leaves see the pool.

    Every leaf gets ``K`` external children drawn from the pool (stream
    ``rng/(TAG_BOUNDARY,)``); their messages enter as the leaf boundary
    self-energy.  The individual draws are kept in
    ``greens.meta["boundary_children"]`` with shape ``(K**depth, K, W, W)``.
    """
    model = pool.model
    geo = TreeGeometry(model.K, depth)
    stream = as_stream(rng)
    U = sample_tree_potentials(geo, model, stream)
    gen = stream.child(TAG_BOUNDARY).generator()
    kids = pool.draw(gen, (model.K**depth, model.K))
    greens = compute_tree_greens(geo, U, pool.z, boundary=kids.sum(axis=1), model=model)
    greens.meta["boundary_children"] = kids
    return greens


def _header(pool: GammaPool):
    return {
        "model": pool.model.to_dict(),
        "z": [pool.z.real, pool.z.imag],
        "generation": pool.generation,
        "size": pool.size,
        "herglotz_min": pool.herglotz_min,
    }


def _model_from_dict(d):
    ens = EnsembleSpec(d["ensemble"], d["W"], d["scale"])
    return ModelSpec(d["K"], d["W"], np.array(d["A"]), ens, d["lambda"])


def save_pool(pool: GammaPool, path, binary=True):
    """Write a ``BRL-POOL-1`` checkpoint.

    Layout: magic line, JSON header line, a line holding W, then the complex
    entries of every member in row-major order, as little-endian float64
    (real, imag) pairs in binary mode or one ``re im`` pair per line in text
    mode.
    """
    try:
        _write_pool(pool, Path(path), binary)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def _write_pool(pool, path, binary):
    header = json.dumps(_header(pool), sort_keys=True)
    W = pool.model.W
    tmp = path.with_suffix(path.suffix + ".tmp")
    if binary:
        payload = np.ascontiguousarray(pool.samples, dtype="<c16").tobytes()
        with open(tmp, "wb") as fh:
            fh.write(MAGIC + b" binary\n")
            fh.write(header.encode() + b"\n")
            fh.write(f"{W}\n".encode())
            fh.write(payload)
    else:
        buf = io.StringIO()
        buf.write(MAGIC.decode() + " text\n")
        buf.write(header + "\n")
        buf.write(f"{W}\n")
        for c in pool.samples.ravel():
            buf.write(f"{float(c.real)!r} {float(c.imag)!r}\n")
        tmp.write_text(buf.getvalue())
    tmp.replace(path)


def load_pool(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    first, _, rest = raw.partition(b"\n")
    magic, _, mode = first.partition(b" ")
    if magic != MAGIC:
        raise UsageError(f"{path}: not a BRL-POOL-1 checkpoint")
    try:
        header_line, rest = rest.split(b"\n", 1)
        w_line, payload = rest.split(b"\n", 1)
        header = json.loads(header_line)
        W = int(w_line)
        n = header["size"]
        if mode == b"binary":
            samples = np.frombuffer(payload, dtype="<c16").astype(complex)
        else:
            vals = np.array(payload.split(), dtype=float).reshape(-1, 2)
            samples = vals[:, 0] + 1j * vals[:, 1]
        samples = samples.reshape(n, W, W)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: corrupt checkpoint ({exc})") from exc
    model = _model_from_dict(header["model"])
    z = complex(*header["z"])
    return GammaPool(samples, z, model, header["generation"], header["herglotz_min"])


def pool_signature(pool: GammaPool):
    """Bytes that identify a pool state; equal pools give equal signatures."""
    return struct.pack("<q", pool.generation) + np.ascontiguousarray(pool.samples, dtype="<c16").tobytes()


__all__ = [
    "GammaPool",
    "PoolConfig",
    "burn_in",
    "init_pool",
    "load_pool",
    "pool_backed_greens",
    "pool_signature",
    "pool_step",
    "prepare_pool",
    "save_pool",
]
