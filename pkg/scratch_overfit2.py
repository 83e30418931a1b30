import time
import numpy as np

from blocklayout.generator import (
    GeneratorConfig, LayoutGenerator, decode_canonical, posterior_latent,
    shape_input, train_layout_vae, train_shape_encoder,
)
from blocklayout.canonical import to_canonical
from blocklayout.graphrep import build_block_graph
from blocklayout.synthdata import sample_city

t0 = time.time()
city = sample_city(16, seed=7)
graphs, features = [], []
for block, buildings, feature in city:
    graphs.append(to_canonical(build_block_graph(block, buildings)))
    features.append(feature)

cfg = GeneratorConfig(width=64, latent_dim=128, shape_dim=32)
gen = LayoutGenerator(cfg, seed=1)
images = np.stack([shape_input(f) for f in features])
train_shape_encoder(gen.shape_encoder, images, steps=150,
                    rng=np.random.default_rng(1))
lat_all = gen.shape_latents(features)
# conditioning must separate the 16 blocks
d = np.linalg.norm(lat_all[:, None] - lat_all[None], axis=-1)
print(f"mprime pairwise dist min {d[~np.eye(16,dtype=bool)].min():.3f} "
      f"max {d.max():.3f}", flush=True)


def existence_acc():
    hits = tot = 0
    occ_hits = occ_tot = 0
    for i, (g, f) in enumerate(zip(graphs, features)):
        z = posterior_latent(gen, g, f)
        dec = decode_canonical(gen, lat_all[i], z)
        te = np.array([n.e for n in g.nodes])
        pe = np.array([n.e for n in dec.nodes])
        hits += int((te == pe).sum()); tot += te.size
        occ_hits += int(((te == 1) & (pe == 1)).sum())
        occ_tot += int((te == 1).sum())
    return 100 * hits / tot, 100 * occ_hits / occ_tot


rng = np.random.default_rng(2)
for chunk in range(8):
    hist = train_layout_vae(gen, graphs, features, steps=500, rng=rng,
                            batch_size=16)
    acc, recall = existence_acc()
    print(f"steps {(chunk+1)*500:5d} loss {hist[-1]['total']:.3f} "
          f"(geom {hist[-1]['geometry']:.3f} cat {hist[-1]['category']:.3f} "
          f"kl {hist[-1]['kl']:.3f}) e-acc {acc:.2f}% recall {recall:.1f}% "
          f"t={time.time()-t0:.0f}s", flush=True)
    if acc >= 97.0:
        break
