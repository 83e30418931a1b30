"""Layout generator: loss gradients, checkpoints, decode contracts."""

import io
import struct

import numpy as np
import pytest

from blocklayout.canonical import (
    CanonicalGraph, CanonicalNode, EMPTY_CANONICAL, to_canonical,
)
from blocklayout.shapefit import ShapeType
from blocklayout.generator import (
    CHECKPOINT_MAGIC, GeneratorConfig, GeneratorError, LayoutGenerator,
    N_FEATURES, ShapeEncoder, decode_canonical, generate_canonical,
    load_checkpoint, node_feature_array, positional_code, posterior_latent,
    reparameterize, save_checkpoint, shape_input, train_shape_encoder,
    training_step,
)
from blocklayout.geometry import Polygon
from blocklayout.graphrep import block_shape_feature, build_block_graph
from blocklayout.neural import Adam, Tensor
from blocklayout.synthdata import sample_city

SMALL = GeneratorConfig(rows=2, cols=4, width=16, latent_dim=16,
                        shape_dim=8, pos_dim=4, n_layers=2,
                        mask_resolution=16)


def small_graph(rng):
    """Random canonical graph on the reduced 2x4 grid."""
    nodes = [EMPTY_CANONICAL] * SMALL.n_nodes
    occupied = rng.choice(SMALL.n_nodes,
                          size=int(rng.integers(2, 6)), replace=False)
    for i in occupied:
        nodes[int(i)] = CanonicalNode(
            e=1, x=float(rng.uniform(0, 1)),
            y=float(rng.uniform(-1, 1)),
            w=float(rng.uniform(0.02, 0.2)),
            h=float(rng.uniform(0.1, 0.9)),
            s=ShapeType(int(rng.integers(0, 4))),
            a=float(rng.uniform(0.5, 1.0)))
    return CanonicalGraph(nodes=tuple(nodes))


@pytest.fixture(scope="module")
def small_setup():
    rng = np.random.default_rng(11)
    city = sample_city(4, seed=11)
    features = [feature for _, _, feature in city]
    graphs = [small_graph(rng) for _ in range(4)]
    gen = LayoutGenerator(SMALL, seed=3)
    with pytest.warns(RuntimeWarning):
        latents = gen.shape_latents(features)
    batch = gen.training_batch(graphs, latents)
    return gen, graphs, features, latents, batch


def test_feature_vector_layout():
    city = sample_city(2, seed=12)
    block, buildings, feature = city[0]
    cg = to_canonical(build_block_graph(block, buildings, shape=feature))
    arr = node_feature_array(cg)
    assert arr.shape == (len(cg.nodes), N_FEATURES)
    for i, node in enumerate(cg.nodes):
        row = arr[i]
        if node.e:
            assert row[0] == 0.0 and row[1] == 1.0
            assert tuple(row[2:6]) == (node.x, node.y, node.w, node.h)
            onehot = np.zeros(4)
            onehot[int(node.s)] = 1.0
            assert np.array_equal(row[6:10], onehot)
            assert row[10] == node.a
        else:
            assert row[0] == 1.0
            assert not row[1:].any()


def test_positional_code_is_fixed():
    a = positional_code(8, 4)
    b = positional_code(8, 4)
    assert a.shape == (8, 4)
    assert np.array_equal(a, b)
    assert np.array_equal(a[:5], positional_code(5, 4))


def test_full_loss_gradient_matches_finite_differences(small_setup):
    gen, _, _, _, batch = small_setup
    rng = np.random.default_rng(0)

    def loss_value():
        total, _ = gen.loss(batch, np.random.default_rng(0),
                            deterministic=True)
        return total

    total = loss_value()
    for p in gen.vae.parameters():
        p.grad = None
    total.backward()
    eps = 1e-5
    param_rng = np.random.default_rng(1)
    for p in gen.vae.parameters():
        assert p.grad is not None
        flat = p.data.ravel()
        coords = param_rng.choice(flat.size, size=min(3, flat.size),
                                  replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_value().data.item()
            flat[idx] = orig - eps
            down = loss_value().data.item()
            flat[idx] = orig
            num = (up - down) / (2 * eps)
            ana = p.grad.ravel()[idx]
            denom = max(abs(num), abs(ana), 1e-8)
            assert abs(num - ana) / denom <= 1e-4


def test_loss_breakdown_weights(small_setup):
    gen, _, _, _, batch = small_setup
    _, parts = gen.loss(batch, np.random.default_rng(0),
                        deterministic=True)
    assert parts["weights"] == {"geometry": 4.0, "category": 1.0,
                                "kl": 0.5}
    geometry = parts["geometry"]
    category = parts["category"]
    kl = parts["kl"]
    assert parts["total"] == pytest.approx(
        4.0 * geometry + 1.0 * category + 0.5 * kl, rel=1e-9)
    assert parts["category"] == pytest.approx(
        parts["existence"] + parts["shape"] + parts["occupancy"],
        rel=1e-9)
    assert kl >= 0.0


def test_reparameterize_contract():
    rng = np.random.default_rng(4)
    mu = Tensor(np.zeros((6, 32)))
    logvar = Tensor(np.zeros((6, 32)))
    z, lv = reparameterize(mu, logvar, rng)
    assert z.data.std() == pytest.approx(1.0, abs=0.15)
    zd, _ = reparameterize(mu, logvar, rng, deterministic=True)
    assert np.array_equal(zd.data, mu.data)
    # Extreme logvar inputs are clamped, never overflow.
    wild = Tensor(np.full((2, 3), 1e6))
    z2, lv2 = reparameterize(mu[:2, :3], wild, rng)
    assert np.all(np.isfinite(z2.data))
    assert lv2.data.max() <= 20.0
    tight = Tensor(np.full((2, 3), -1e9))
    z3, lv3 = reparameterize(mu[:2, :3], tight, rng)
    assert lv3.data.min() >= -20.0
    assert np.abs(z3.data).max() <= np.exp(-10.0) * 8.0


def test_untrained_encoder_warns_trained_does_not(small_setup):
    gen = LayoutGenerator(SMALL, seed=5)
    city = sample_city(2, seed=13)
    feature = city[0][2]
    with pytest.warns(RuntimeWarning):
        gen.shape_latents([feature])
    img = shape_input(feature, SMALL.mask_resolution)[None]
    imgs = np.repeat(img, 4, axis=0)
    train_shape_encoder(gen.shape_encoder, imgs, steps=2,
                        rng=np.random.default_rng(0), batch_size=4)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gen.shape_latents([feature])


def test_shape_encoder_learns_tiny_batch():
    enc = ShapeEncoder(SMALL, np.random.default_rng(6))
    city = sample_city(4, seed=14)
    imgs = np.stack([shape_input(f, SMALL.mask_resolution)
                     for _, _, f in city])
    history = train_shape_encoder(enc, imgs, steps=60,
                                  rng=np.random.default_rng(0),
                                  batch_size=4, lr=0.01)
    assert enc.trained
    assert history[-1] < history[0] * 0.5
    z = enc.encode(Tensor(imgs)).data
    assert z.shape == (4, SMALL.shape_dim)
    recon = enc.decode(enc.encode(Tensor(imgs))).data
    assert recon.shape == (4, 1, 16, 16)
    assert recon.min() >= 0.0 and recon.max() <= 1.0


def test_shape_encoder_rejects_bad_resolution():
    with pytest.raises(GeneratorError):
        ShapeEncoder(GeneratorConfig(mask_resolution=40),
                     np.random.default_rng(0))


def test_decode_canonical_is_valid_and_deterministic(small_setup):
    gen, _, features, latents, _ = small_setup
    rng = np.random.default_rng(7)
    z = rng.normal(size=SMALL.latent_dim)
    a = decode_canonical(gen, latents[0], z)
    b = decode_canonical(gen, latents[0], z)
    assert isinstance(a, CanonicalGraph)
    assert len(a.nodes) == SMALL.n_nodes
    assert a.occupied_indices() == b.occupied_indices()
    for i in a.occupied_indices():
        n = a.nodes[i]
        assert 0.0 <= n.x <= 1.0
        assert abs(n.y) <= 5.0
        assert n.w > 0 and n.h > 0
        assert 0.0 < n.a <= 1.0


def test_generate_canonical_seeding(small_setup):
    gen, _, features, _, _ = small_setup
    with pytest.warns(RuntimeWarning):
        a = generate_canonical(gen, features[0],
                               np.random.default_rng(8))
        b = generate_canonical(gen, features[0],
                               np.random.default_rng(8))
        c = generate_canonical(gen, features[0],
                               np.random.default_rng(9))
    for na, nb in zip(a.nodes, b.nodes):
        assert (na.e, na.x, na.y, na.w, na.h) == \
            (nb.e, nb.x, nb.y, nb.w, nb.h)
    assert any((na.e, na.x) != (nc.e, nc.x)
               for na, nc in zip(a.nodes, c.nodes))


def test_posterior_latent_shape_and_determinism(small_setup):
    gen, graphs, features, _, _ = small_setup
    with pytest.warns(RuntimeWarning):
        z1 = posterior_latent(gen, graphs[0], features[0])
        z2 = posterior_latent(gen, graphs[0], features[0])
    assert z1.shape == (SMALL.latent_dim,)
    assert np.array_equal(z1, z2)


def test_checkpoint_roundtrip_bit_exact(tmp_path, small_setup):
    gen, _, _, _, _ = small_setup
    path = tmp_path / "gen.bin"
    save_checkpoint(path, gen, extra_meta={"note": "t"})
    loaded = load_checkpoint(path)
    assert loaded.meta["note"] == "t"
    src = gen.parameters()
    dst = loaded.parameters()
    assert len(src) == len(dst)
    for a, b in zip(src, dst):
        assert np.array_equal(a.data, b.data)
    assert loaded.shape_encoder.trained == gen.shape_encoder.trained
    assert loaded.config.to_dict() == gen.config.to_dict()


def test_checkpoint_rejects_corruption(tmp_path, small_setup):
    gen, _, _, _, _ = small_setup
    path = tmp_path / "gen.bin"
    save_checkpoint(path, gen)
    blob = path.read_bytes()

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(GeneratorError):
        load_checkpoint(bad)

    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(GeneratorError):
        load_checkpoint(trunc)

    tail = tmp_path / "tail.bin"
    tail.write_bytes(blob + b"\x00" * 8)
    with pytest.raises(GeneratorError):
        load_checkpoint(tail)

    ver = tmp_path / "ver.bin"
    ver.write_bytes(blob[:4] + struct.pack("<I", 99) + blob[8:])
    with pytest.raises(GeneratorError):
        load_checkpoint(ver)

    assert blob[:4] == CHECKPOINT_MAGIC


def test_training_step_aborts_on_nonfinite(small_setup):
    gen, graphs, features, latents, _ = small_setup
    fresh = LayoutGenerator(SMALL, seed=9)
    batch = fresh.training_batch(graphs, latents)
    batch["geom"] = batch["geom"].copy()
    batch["geom"][0, 0, 0] = np.nan
    opt = Adam(fresh.vae.parameters(), lr=0.01)
    before = [p.data.copy() for p in fresh.vae.parameters()]
    out = training_step(fresh, batch, opt, np.random.default_rng(0))
    assert out["aborted"]
    for p, prev in zip(fresh.vae.parameters(), before):
        assert np.array_equal(p.data, prev)


def test_training_step_updates_parameters(small_setup):
    gen, graphs, features, latents, _ = small_setup
    fresh = LayoutGenerator(SMALL, seed=10)
    batch = fresh.training_batch(graphs, latents)
    opt = Adam(fresh.vae.parameters(), lr=0.01)
    before = [p.data.copy() for p in fresh.vae.parameters()]
    out = training_step(fresh, batch, opt, np.random.default_rng(0))
    assert not out["aborted"]
    assert np.isfinite(out["total"])
    moved = sum(not np.array_equal(p.data, prev)
                for p, prev in zip(fresh.vae.parameters(), before))
    assert moved == len(before)


def test_config_node_count():
    assert SMALL.n_nodes == 8
    assert GeneratorConfig().n_nodes == 120
    d = SMALL.to_dict()
    assert GeneratorConfig(**d).to_dict() == d
