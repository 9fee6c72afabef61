import numpy as np
import pytest

from brlab.ensembles import EnsembleSpec, ModelSpec
from brlab.errors import IoError, NotBurnedIn, UsageError
from brlab.linalg import herglotz_min
from brlab.pool import (
    GammaPool,
    PoolConfig,
    burn_in,
    init_pool,
    load_pool,
    pool_backed_greens,
    pool_signature,
    pool_step,
    prepare_pool,
    save_pool,
)
from brlab.rng import TAG_TEST, RngStream
from brlab.tree import block, dense_resolvent_oracle

S = RngStream(7, (TAG_TEST,))


def goe(W=2, lam=0.5, A=None):
    return ModelSpec(2, W, A, EnsembleSpec("goe", W), lam)


def test_scalar_iteration_oracle():
    model = ModelSpec(2, 1)
    z = 1e-3j
    pool = GammaPool(np.full((16, 1, 1), 1j / np.sqrt(2)), z, model)
    g = 1j / np.sqrt(2)
    for _ in range(100):
        pool = pool_step(pool, S)
        g = 1 / (-z - 2 * g)
    assert np.max(np.abs(pool.samples[:, 0, 0] - g)) <= 1e-12
    # the eta-perturbed iteration stays close to the eta = 0 fixed point
    assert abs(g - 1j / np.sqrt(2)) <= 0.1


def test_free_start_is_fixed_point():
    model = ModelSpec(2, 2, np.diag([0.0, 4.0]))
    pool = prepare_pool(model, 2.9 + 1e-3j, PoolConfig(32, 50), S)
    g0 = init_pool(model, 2.9 + 1e-3j, 1).samples[0]
    assert np.allclose(pool.samples, g0, atol=1e-12)
    assert np.allclose(g0, np.linalg.inv(model.A - (2.9 + 1e-3j) * np.eye(2) - 2 * g0), atol=1e-12)


def test_lambda_zero_constant():
    pool = prepare_pool(ModelSpec(3, 1), 0.5 + 0.01j, PoolConfig(64, 20), S)
    assert np.all(pool.samples == pool.samples[0])


def test_herglotz_every_step_and_size():
    pool = init_pool(goe(), 0.4 + 1e-3j, 500)
    for _ in range(30):
        pool = pool_step(pool, S)
        assert pool.size == 500
        assert herglotz_min(pool.samples) >= -1e-10
    assert pool.herglotz_min >= -1e-10
    assert pool.generation == 30


def test_update_rule():
    model = goe(W=2)
    pool = prepare_pool(model, 1 + 0.1j, PoolConfig(50, 3), S)
    new = pool_step(pool, S)
    gen = S.child(2, pool.generation, 0).generator()
    V = gen.standard_normal((50, 2, 2))
    U = model.A + model.lam * 0.5 * (V + np.swapaxes(V, -1, -2))
    idx = gen.integers(0, 50, size=(50, 2))
    ref = np.linalg.inv(U - (1 + 0.1j) * np.eye(2) - pool.samples[idx].sum(axis=1))
    assert np.allclose(new.samples, ref, atol=1e-12)


def test_shards_deterministic():
    model = goe(W=1)
    a = burn_in(init_pool(model, 0.3j, 101), S, 5, shards=3)
    b = burn_in(init_pool(model, 0.3j, 101), S, 5, shards=3)
    assert pool_signature(a) == pool_signature(b)
    c = burn_in(init_pool(model, 0.3j, 101), S, 5, shards=1)
    assert c.size == a.size and pool_signature(c) != pool_signature(a)


def test_not_burned_in():
    pool = init_pool(goe(), 1j, 8)
    with pytest.raises(NotBurnedIn):
        pool.require_burned_in(1)


def test_config_validation():
    with pytest.raises(UsageError):
        PoolConfig(size=0)


def test_requires_eta():
    with pytest.raises(UsageError):
        init_pool(goe(), 1.0, 4)


def test_draw_sum_matches_draw():
    pool = prepare_pool(goe(), 0.5 + 0.05j, PoolConfig(40, 2), S)
    g1, g2 = (S.child(99).generator() for _ in range(2))
    assert np.array_equal(pool.draw_sum(g1, 7, 3), pool.draw(g2, (7, 3)).sum(axis=1))


@pytest.mark.parametrize("binary", [True, False])
def test_checkpoint_roundtrip(tmp_path, binary):
    model = goe(W=2, A=np.diag([0.0, 4.0]))
    pool = prepare_pool(model, 2.9 + 1e-3j, PoolConfig(30, 4), S)
    path = tmp_path / "pool.ckpt"
    save_pool(pool, path, binary=binary)
    assert path.read_bytes().startswith(b"BRL-POOL-1")
    back = load_pool(path)
    assert back.model == model and back.z == pool.z and back.generation == 4
    assert pool_signature(back) == pool_signature(pool)


def test_resume_equals_uninterrupted(tmp_path):
    model = goe(W=1)
    z = 0.2 + 0.01j
    path = tmp_path / "p.bin"
    prepare_pool(model, z, PoolConfig(64, 150), S, checkpoint=path)
    half = load_pool(path)
    assert half.generation == 150
    full = prepare_pool(model, z, PoolConfig(64, 300), S, resume=path)
    direct = prepare_pool(model, z, PoolConfig(64, 300), S)
    assert pool_signature(full) == pool_signature(direct)


def test_resume_mismatch(tmp_path):
    path = tmp_path / "p.bin"
    prepare_pool(goe(W=1), 1j, PoolConfig(16, 2), S, checkpoint=path)
    with pytest.raises(UsageError):
        prepare_pool(goe(W=1, lam=0.2), 1j, PoolConfig(16, 2), S, resume=path)


def test_bad_checkpoint(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"NOPE\n{}\n1\n")
    with pytest.raises(UsageError):
        load_pool(bad)
    with pytest.raises(IoError):
        load_pool(tmp_path / "missing")
    with pytest.raises(IoError):
        save_pool(init_pool(goe(), 1j, 2), tmp_path / "no" / "dir" / "p")


def test_pool_backed_greens_boundary():
    model = goe(W=2)
    pool = prepare_pool(model, 0.7 + 0.05j, PoolConfig(64, 5), S)
    g = pool_backed_greens(pool, 2, S.child(3))
    kids = g.meta["boundary_children"]
    assert kids.shape == (4, 2, 2, 2)
    assert np.allclose(g.boundary, kids.sum(axis=1))
    G = dense_resolvent_oracle(g.geometry, g.potentials, g.z, boundary=g.boundary)
    assert np.max(np.abs(g.diagonal[5] - block(G, 5, 5, 2))) <= 1e-10
    assert g.herglotz_min() >= -1e-10
