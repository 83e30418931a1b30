"""Shared fixtures; the trained models are session-scoped because the
overfit runs are the slowest parts of the suite."""

import time

import numpy as np
import pytest

from blocklayout.canonical import to_canonical
from blocklayout.generator import (
    GeneratorConfig, LayoutGenerator, shape_input, train_layout_vae,
    train_shape_encoder,
)
from blocklayout.graphrep import build_block_graph
from blocklayout.synthdata import sample_city


@pytest.fixture(scope="session")
def toy_city():
    """16 synthetic blocks with graphs and conditioning features."""
    city = sample_city(16, seed=7)
    graphs, features, blocks, buildings = [], [], [], []
    for block, blds, feature in city:
        graphs.append(to_canonical(build_block_graph(block, blds,
                                                     shape=feature)))
        features.append(feature)
        blocks.append(block)
        buildings.append(blds)
    return {"blocks": blocks, "buildings": buildings,
            "graphs": graphs, "features": features}


@pytest.fixture(scope="session")
def toy_generator(toy_city):
    """Generator overfit on the 16-block toy city (shared by tests)."""
    cfg = GeneratorConfig(width=64, latent_dim=128, shape_dim=32)
    gen = LayoutGenerator(cfg, seed=1)
    images = np.stack([shape_input(f, cfg.mask_resolution)
                       for f in toy_city["features"]])
    train_shape_encoder(gen.shape_encoder, images, steps=150,
                        rng=np.random.default_rng(1))
    history = train_layout_vae(gen, toy_city["graphs"],
                               toy_city["features"], steps=700,
                               rng=np.random.default_rng(2),
                               batch_size=16)
    gen.train_history = history
    return gen
