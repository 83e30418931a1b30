"""Conditional layout model: shape autoencoder + graph-attention VAE.

Two networks cooperate:

  - ShapeEncoder: a convolutional autoencoder over 64x64 block masks.
    Its 64-d bottleneck (the block-shape latent) conditions the layout
    model.  It is pretrained on masks alone and frozen afterwards.
  - LayoutVAE: encodes the 120-slot canonical layout graph with stacked
    graph-attention layers into a Gaussian posterior, and decodes a
    latent + shape-latent pair back into per-slot building features.

Checkpoints are a single binary file: magic, version, JSON header,
then raw little-endian float64 weight blobs in declaration order.
"""

from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .canonical import CanonicalGraph, CanonicalNode, EMPTY_CANONICAL
from .geometry import MASK_RESOLUTION
from .graphrep import N_COLS, R_MAX, adjacency
from .neural import (
    Adam, Conv2d, ConvTranspose2d, Dense, GraphAttention, MLPHead, Module,
    Tensor, concat, cross_entropy, kl_standard_normal, l2_loss,
)
from .shapefit import ShapeType

CHECKPOINT_MAGIC = b"GMCK"
CHECKPOINT_VERSION = 1
N_FEATURES = 11          # one-hot e (2) + x,y,w,h + one-hot s (4) + a
POS_SEED = 7919          # fixed seed for the positional code projection
LOGVAR_FLOOR = -20.0
LENGTH_SCALE_M = 1000.0  # block length is fed to the encoder as l / 1000


class GeneratorError(RuntimeError):
    """Raised for malformed checkpoints and misconfigured models."""


@dataclass(frozen=True)
class GeneratorConfig:
    """Hyperparameters; the defaults match the full-size model."""

    rows: int = R_MAX
    cols: int = N_COLS
    width: int = 128
    latent_dim: int = 512
    shape_dim: int = 64
    pos_dim: int = 16
    n_layers: int = 3
    mask_resolution: int = MASK_RESOLUTION

    @property
    def n_nodes(self):
        return self.rows * self.cols

    def to_dict(self):
        return {
            "rows": self.rows, "cols": self.cols, "width": self.width,
            "latent_dim": self.latent_dim, "shape_dim": self.shape_dim,
            "pos_dim": self.pos_dim, "n_layers": self.n_layers,
            "mask_resolution": self.mask_resolution,
        }


# -- canonical graph <-> arrays ---------------------------------------------

def node_feature_array(graph: CanonicalGraph):
    """(N, 11) float features: one-hot e, x, y, w, h, one-hot s, a."""
    n = len(graph.nodes)
    out = np.zeros((n, N_FEATURES))
    for i, node in enumerate(graph.nodes):
        if node.e == 1:
            out[i, 1] = 1.0
            out[i, 2:6] = (node.x, node.y, node.w, node.h)
            out[i, 6 + int(node.s)] = 1.0
            out[i, 10] = node.a
        else:
            out[i, 0] = 1.0
    return out


def target_arrays(graph: CanonicalGraph):
    """Training targets: existence, geometry, shape tag, occupancy."""
    n = len(graph.nodes)
    e = np.zeros(n, dtype=np.int64)
    geom = np.zeros((n, 4))
    s = np.zeros(n, dtype=np.int64)
    a = np.zeros(n)
    for i, node in enumerate(graph.nodes):
        if node.e == 1:
            e[i] = 1
            geom[i] = (node.x, node.y, node.w, node.h)
            s[i] = int(node.s)
            a[i] = node.a
    return {"e": e, "geom": geom, "s": s, "a": a}


def positional_code(n_nodes, pos_dim):
    """Fixed random projection of the slot one-hot; not a parameter."""
    rng = np.random.default_rng(POS_SEED)
    return rng.normal(0.0, 1.0, size=(n_nodes, pos_dim))


def _layer_norm(t, eps=1e-6):
    """Zero-mean unit-variance over the trailing axis (no learned scale)."""
    centered = t - t.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5)


# -- block shape autoencoder -------------------------------------------------

class ShapeEncoder(Module):
    """Convolutional autoencoder over (mask, length) image pairs.

    Input is (B, 2, R, R): channel 0 the binary block mask, channel 1 a
    constant plane holding block length / 1000.  The bottleneck is the
    block-shape latent fed to the layout model.  Frozen after
    pretraining; using it untrained only warns.
    """

    CHANNELS = (8, 16, 32, 64)

    def __init__(self, config: GeneratorConfig, rng):
        super().__init__()
        self.config = config
        res = config.mask_resolution
        if res % 16 != 0:
            raise GeneratorError("mask resolution must be divisible by 16")
        c = self.CHANNELS
        self.conv1 = Conv2d(2, c[0], 4, 2, 1, rng)
        self.conv2 = Conv2d(c[0], c[1], 4, 2, 1, rng)
        self.conv3 = Conv2d(c[1], c[2], 4, 2, 1, rng)
        self.conv4 = Conv2d(c[2], c[3], 4, 2, 1, rng)
        self._spatial = res // 16
        flat = c[3] * self._spatial * self._spatial
        self.enc_out = Dense(flat, config.shape_dim, rng)
        self.dec_in = Dense(config.shape_dim, flat, rng)
        self.deconv1 = ConvTranspose2d(c[3], c[2], 4, 2, 1, rng)
        self.deconv2 = ConvTranspose2d(c[2], c[1], 4, 2, 1, rng)
        self.deconv3 = ConvTranspose2d(c[1], c[0], 4, 2, 1, rng)
        self.deconv4 = ConvTranspose2d(c[0], 1, 4, 2, 1, rng)
        self.trained = False

    def encode(self, images):
        """images: (B, 2, R, R) Tensor or ndarray -> (B, shape_dim)."""
        if not isinstance(images, Tensor):
            images = Tensor(images)
        h = self.conv1(images).leaky_relu(0.2)
        h = self.conv2(h).leaky_relu(0.2)
        h = self.conv3(h).leaky_relu(0.2)
        h = self.conv4(h).leaky_relu(0.2)
        h = h.reshape(h.shape[0], -1)
        # normalized bottleneck: unit scale keeps the layout model's
        # posterior statistics tame without saturating (tanh collapsed
        # distinct blocks onto identical latents here)
        return _layer_norm(self.enc_out(h))

    def decode(self, latent):
        """latent: (B, shape_dim) -> reconstructed mask probs (B,1,R,R)."""
        c = self.CHANNELS
        h = self.dec_in(latent).relu()
        h = h.reshape(latent.shape[0], c[3], self._spatial, self._spatial)
        h = self.deconv1(h).leaky_relu(0.2)
        h = self.deconv2(h).leaky_relu(0.2)
        h = self.deconv3(h).leaky_relu(0.2)
        return self.deconv4(h).sigmoid()

    def reconstruction_loss(self, images):
        """Binary cross entropy between mask channel and reconstruction."""
        if not isinstance(images, Tensor):
            images = Tensor(images)
        probs = self.decode(self.encode(images))
        target = images.data[:, 0:1]
        p = probs.clamp_min(1e-7)
        q = (1.0 - probs).clamp_min(1e-7)
        bce = Tensor(target) * p.log() + Tensor(1.0 - target) * q.log()
        return -bce.mean()


def shape_input(feature, resolution=None):
    """(2, R, R) array for a BlockShapeFeature: mask bits + scaled length.

    A coarser resolution than the stored mask is produced by box
    averaging, so channel 0 then holds fractional coverage in [0, 1].
    """
    bits = feature.mask.bits.astype(np.float64)
    side = bits.shape[0]
    if resolution is not None and resolution != side:
        if side % resolution:
            raise GeneratorError(
                f"cannot pool a {side}x{side} mask to {resolution}")
        f = side // resolution
        bits = bits.reshape(resolution, f, resolution, f).mean(axis=(1, 3))
    image = np.zeros((2, bits.shape[0], bits.shape[1]))
    image[0] = bits
    image[1] = feature.l / LENGTH_SCALE_M
    return image


def train_shape_encoder(encoder, images, steps, rng, lr=0.001,
                        batch_size=32):
    """Pretrain the autoencoder; returns the per-step loss history."""
    images = np.asarray(images, dtype=np.float64)
    optimizer = Adam(encoder.parameters(), lr=lr)
    history = []
    n = images.shape[0]
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        optimizer.zero_grad()
        loss = encoder.reconstruction_loss(images[idx])
        value = float(loss.data)
        if not np.isfinite(value):
            history.append(value)
            continue
        loss.backward()
        optimizer.step()
        history.append(value)
    encoder.trained = True
    return history


# -- layout VAE ----------------------------------------------------------------

class LayoutVAE(Module):
    """Graph-attention encoder/decoder over the fixed grid topology."""

    def __init__(self, config: GeneratorConfig, rng):
        super().__init__()
        self.config = config
        w = config.width
        n = config.n_nodes
        self.enc_gats = []
        in_dim = N_FEATURES
        for i in range(config.n_layers):
            layer = GraphAttention(in_dim, w, rng)
            setattr(self, "enc_gat%d" % i, layer)
            self.enc_gats.append(layer)
            in_dim = w
        pooled = config.n_layers * w + config.shape_dim
        self.enc_mu = Dense(pooled, config.latent_dim, rng)
        self.enc_logvar = Dense(pooled, config.latent_dim, rng)
        self.dec_in = Dense(config.latent_dim + config.shape_dim, n * w,
                            rng)
        self.dec_gats = []
        in_dim = w + config.pos_dim
        for i in range(config.n_layers):
            layer = GraphAttention(in_dim, w, rng)
            setattr(self, "dec_gat%d" % i, layer)
            self.dec_gats.append(layer)
            in_dim = w
        self.head_e = MLPHead(w, w, 2, rng)
        self.head_xy = MLPHead(w, w, 2, rng)
        self.head_wh = MLPHead(w, w, 2, rng)
        self.head_s = MLPHead(w, w, 4, rng)
        self.head_a = MLPHead(w, w, 1, rng)
        self.adjacency = adjacency(config.rows, config.cols,
                                   self_loops=True)
        self.positional = positional_code(n, config.pos_dim)

    def encode(self, features, shape_latent):
        """features: (B, N, 11); shape_latent: (B, shape_dim)."""
        if not isinstance(features, Tensor):
            features = Tensor(features)
        if not isinstance(shape_latent, Tensor):
            shape_latent = Tensor(shape_latent)
        h = features
        per_layer = []
        for i, gat in enumerate(self.enc_gats):
            h = gat(h, self.adjacency)
            per_layer.append(h)
            if i + 1 < len(self.enc_gats):
                h = h.relu()
        stacked = concat(per_layer, axis=-1)      # (B, N, T*width)
        pooled = stacked.mean(axis=1)             # (B, T*width)
        joint = concat([pooled, shape_latent], axis=-1)
        return self.enc_mu(joint), self.enc_logvar(joint)

    def decode(self, z, shape_latent):
        """z: (B, latent); shape_latent: (B, shape_dim) -> head dict."""
        if not isinstance(z, Tensor):
            z = Tensor(z)
        if not isinstance(shape_latent, Tensor):
            shape_latent = Tensor(shape_latent)
        cfg = self.config
        joint = concat([z, shape_latent], axis=-1)
        h = self.dec_in(joint).relu()
        h = h.reshape(h.shape[0], cfg.n_nodes, cfg.width)
        pos = Tensor(self.positional).broadcast_to(
            (h.shape[0], cfg.n_nodes, cfg.pos_dim))
        h = concat([h, pos], axis=-1)
        for i, gat in enumerate(self.dec_gats):
            h = gat(h, self.adjacency)
            if i + 1 < len(self.dec_gats):
                h = h.relu()
        return {
            "e_logits": self.head_e(h),
            "xy": self.head_xy(h),
            "wh": self.head_wh(h),
            "s_logits": self.head_s(h),
            "a": self.head_a(h),
        }


def reparameterize(mu, logvar, rng, deterministic=False):
    """z = mu + sigma * eps with the log-variance floored at -20.

    At the floor sigma is e^-10, so z collapses to mu to ~5 decimal
    places; `deterministic=True` skips sampling entirely and returns mu.
    The matching ceiling guards early-training variance blowups.
    """
    logvar = logvar.clamp_min(LOGVAR_FLOOR).clamp_max(-LOGVAR_FLOOR)
    if deterministic:
        return mu, logvar
    sigma = (logvar * 0.5).exp()
    eps = rng.standard_normal(size=mu.shape)
    return mu + sigma * Tensor(eps), logvar


# -- full generator -------------------------------------------------------------

LOSS_WEIGHTS = (4.0, 1.0, 0.5)  # geometry, category, KL


class LayoutGenerator:
    """Bundles the frozen shape encoder with the layout VAE."""

    def __init__(self, config: GeneratorConfig = None, seed=0):
        self.config = config or GeneratorConfig()
        rng = np.random.default_rng(seed)
        self.shape_encoder = ShapeEncoder(self.config, rng)
        self.vae = LayoutVAE(self.config, rng)
        self.meta = {"seed": seed, "iterations": 0}

    def parameters(self):
        return self.shape_encoder.parameters() + self.vae.parameters()

    def shape_latents(self, features):
        """Frozen forward pass: BlockShapeFeatures -> (B, shape_dim).

        Warns (once per call site pattern) when the encoder was never
        pretrained; the latents are then meaningless but usable.
        """
        if not self.shape_encoder.trained:
            warnings.warn("shape encoder is untrained; latents are "
                          "uninformative", RuntimeWarning, stacklevel=2)
        images = np.stack([
            shape_input(f, self.config.mask_resolution)
            for f in features])
        return self.shape_encoder.encode(images).data.copy()

    def training_batch(self, graphs, shape_latents):
        """Pack canonical graphs + precomputed latents into batch arrays."""
        features = np.stack([node_feature_array(g) for g in graphs])
        targets = [target_arrays(g) for g in graphs]
        return {
            "features": features,
            "mprime": np.asarray(shape_latents, dtype=np.float64),
            "e": np.stack([t["e"] for t in targets]),
            "geom": np.stack([t["geom"] for t in targets]),
            "s": np.stack([t["s"] for t in targets]),
            "a": np.stack([t["a"] for t in targets]),
        }

    def loss(self, batch, rng, deterministic=False):
        """Weighted VAE loss; returns (total Tensor, breakdown dict)."""
        mprime = Tensor(batch["mprime"])
        mu, logvar = self.vae.encode(batch["features"], mprime)
        z, logvar = reparameterize(mu, logvar, rng,
                                   deterministic=deterministic)
        heads = self.vae.decode(z, mprime)
        exists = batch["e"].astype(np.float64)
        geometry = l2_loss(heads["xy"],
                           batch["geom"][:, :, 0:2], exists)
        geometry = geometry + l2_loss(heads["wh"],
                                      batch["geom"][:, :, 2:4], exists)
        existence = cross_entropy(heads["e_logits"], batch["e"])
        shape_tag = cross_entropy(heads["s_logits"], batch["s"], exists)
        occupancy = l2_loss(heads["a"], batch["a"][:, :, None], exists)
        category = existence + shape_tag + occupancy
        kl = kl_standard_normal(mu, logvar)
        wg, wc, wk = LOSS_WEIGHTS
        total = geometry * wg + category * wc + kl * wk
        breakdown = {
            "total": float(total.data),
            "geometry": float(geometry.data),
            "category": float(category.data),
            "existence": float(existence.data),
            "shape": float(shape_tag.data),
            "occupancy": float(occupancy.data),
            "kl": float(kl.data),
            "weights": {"geometry": wg, "category": wc, "kl": wk},
        }
        return total, breakdown


def training_step(generator, batch, optimizer, rng):
    """One optimisation step; aborts (no update) on non-finite loss."""
    optimizer.zero_grad()
    total, breakdown = generator.loss(batch, rng)
    if not np.isfinite(breakdown["total"]):
        breakdown["aborted"] = True
        return breakdown
    total.backward()
    optimizer.step()
    breakdown["aborted"] = False
    generator.meta["iterations"] += 1
    return breakdown


def train_layout_vae(generator, graphs, features, steps, rng,
                     lr=0.001, batch_size=32):
    """Train the VAE over canonical graphs; shape encoder stays frozen."""
    latents = generator.shape_latents(features)
    optimizer = Adam(generator.vae.parameters(), lr=lr)
    n = len(graphs)
    history = []
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        batch = generator.training_batch([graphs[i] for i in idx],
                                         latents[idx])
        history.append(training_step(generator, batch, optimizer, rng))
    return history


def decode_canonical(generator, shape_latent, z):
    """Decode one latent into a CanonicalGraph (argmax existence/tag)."""
    heads = generator.vae.decode(z.reshape(1, -1),
                                 np.asarray(shape_latent).reshape(1, -1))
    e = np.argmax(heads["e_logits"].data[0], axis=-1)
    xy = heads["xy"].data[0]
    wh = heads["wh"].data[0]
    s = np.argmax(heads["s_logits"].data[0], axis=-1)
    a = heads["a"].data[0, :, 0]
    nodes = []
    for i in range(generator.config.n_nodes):
        if e[i] != 1:
            nodes.append(EMPTY_CANONICAL)
            continue
        nodes.append(CanonicalNode(
            e=1,
            x=float(np.clip(xy[i, 0], 0.0, 1.0)),
            y=float(np.clip(xy[i, 1], -5.0, 5.0)),
            w=float(max(wh[i, 0], 1e-4)),
            h=float(max(wh[i, 1], 1e-4)),
            s=ShapeType(int(s[i])),
            a=float(np.clip(a[i], 1e-3, 1.0)),
        ))
    return CanonicalGraph(nodes=tuple(nodes))


def generate_canonical(generator, feature, rng, z=None):
    """Sample (or use `z`) and decode a layout for one block shape."""
    latent = generator.shape_latents([feature])[0]
    if z is None:
        z = rng.standard_normal(generator.config.latent_dim)
    return decode_canonical(generator, latent, np.asarray(z,
                                                          dtype=np.float64))


def posterior_latent(generator, graph, feature, rng=None,
                     deterministic=True):
    """Encode an existing layout; deterministic=True returns the mean."""
    latent = generator.shape_latents([feature])
    features = node_feature_array(graph)[None]
    mu, logvar = generator.vae.encode(features, latent)
    if deterministic:
        return mu.data[0].copy()
    z, _ = reparameterize(mu, logvar, rng)
    return z.data[0].copy()


# -- checkpoint format -----------------------------------------------------------

def save_checkpoint(path, generator, extra_meta=None):
    """magic | u32 version | u32 header len | JSON | length-prefixed blobs."""
    params = generator.parameters()
    header = {
        "config": generator.config.to_dict(),
        "meta": dict(generator.meta),
        "shape_encoder_trained": bool(generator.shape_encoder.trained),
        "weights": [{"name": "w%03d" % i, "shape": list(p.data.shape)}
                    for i, p in enumerate(params)],
    }
    if extra_meta:
        header["meta"].update(extra_meta)
    blob = io.BytesIO()
    blob.write(CHECKPOINT_MAGIC)
    blob.write(struct.pack("<I", CHECKPOINT_VERSION))
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob.write(struct.pack("<I", len(header_bytes)))
    blob.write(header_bytes)
    for p in params:
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        blob.write(struct.pack("<Q", len(raw)))
        blob.write(raw)
    with open(path, "wb") as fh:
        fh.write(blob.getvalue())


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise GeneratorError("truncated checkpoint while reading %s" % what)
    return data


def load_checkpoint(path):
    """Rebuild a LayoutGenerator with bit-exact weights from `path`."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise GeneratorError("not a checkpoint file (bad magic %r)"
                                 % magic)
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise GeneratorError("unsupported checkpoint version %d"
                                 % version)
        header_len, = struct.unpack("<I", _read_exact(fh, 4,
                                                      "header length"))
        header = json.loads(_read_exact(fh, header_len,
                                        "header").decode("utf-8"))
        config = GeneratorConfig(**header["config"])
        generator = LayoutGenerator(config,
                                    seed=header["meta"].get("seed", 0))
        params = generator.parameters()
        if len(params) != len(header["weights"]):
            raise GeneratorError(
                "checkpoint has %d weight blobs, model expects %d"
                % (len(header["weights"]), len(params)))
        for p, entry in zip(params, header["weights"]):
            expected = tuple(entry["shape"])
            if tuple(p.data.shape) != expected:
                raise GeneratorError("weight shape mismatch: %s vs %s"
                                     % (p.data.shape, expected))
            nbytes, = struct.unpack("<Q", _read_exact(fh, 8,
                                                      "blob length"))
            if nbytes != p.data.size * 8:
                raise GeneratorError("blob length %d does not match shape %s"
                                     % (nbytes, expected))
            raw = _read_exact(fh, nbytes, "weight blob")
            p.data = np.frombuffer(raw, dtype="<f8").reshape(
                expected).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise GeneratorError("trailing bytes after final weight blob")
        generator.meta = dict(header["meta"])
        generator.shape_encoder.trained = bool(
            header.get("shape_encoder_trained", False))
    return generator
