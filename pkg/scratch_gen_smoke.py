import time
import warnings
import numpy as np

from blocklayout.generator import (
    GeneratorConfig, LayoutGenerator, decode_canonical, generate_canonical,
    load_checkpoint, posterior_latent, save_checkpoint, shape_input,
    train_layout_vae, train_shape_encoder,
)
from blocklayout.canonical import to_canonical
from blocklayout.graphrep import block_shape_feature, build_block_graph
from blocklayout.synthdata import sample_city

t0 = time.time()
city = sample_city(6, seed=3)
graphs = []
features = []
for block, buildings, feature in city:
    g = build_block_graph(block, buildings)
    graphs.append(to_canonical(g))
    features.append(feature)
print(f"city build: {time.time()-t0:.1f}s, buildings per block:",
      [len(g2.occupied_indices()) for g2 in graphs])

cfg = GeneratorConfig(width=32, latent_dim=32, shape_dim=16)
gen = LayoutGenerator(cfg, seed=1)
rng = np.random.default_rng(0)

# untrained shape encoder must warn
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    gen.shape_latents(features[:1])
assert any("untrained" in str(w.message) for w in caught), "no warning"
print("untrained warning ok")

t0 = time.time()
images = np.stack([shape_input(f) for f in features])
hist = train_shape_encoder(gen.shape_encoder, images, steps=30,
                           rng=np.random.default_rng(1))
print(f"shape encoder 30 steps: {time.time()-t0:.1f}s "
      f"loss {hist[0]:.4f} -> {hist[-1]:.4f}")

t0 = time.time()
hist = train_layout_vae(gen, graphs, features, steps=20,
                        rng=np.random.default_rng(2))
print(f"vae 20 steps: {time.time()-t0:.1f}s "
      f"total {hist[0]['total']:.3f} -> {hist[-1]['total']:.3f}")
assert not any(h["aborted"] for h in hist)

cg = generate_canonical(gen, features[0], np.random.default_rng(5))
print("generated occupied slots:", len(cg.occupied_indices()))

z = posterior_latent(gen, graphs[0], features[0])
cg2 = decode_canonical(gen, gen.shape_latents([features[0]])[0], z)
print("posterior decode occupied:", len(cg2.occupied_indices()))

save_checkpoint("/tmp/ck.bin", gen)
gen2 = load_checkpoint("/tmp/ck.bin")
for p, q in zip(gen.parameters(), gen2.parameters()):
    assert np.array_equal(p.data, q.data)
print("checkpoint round trip bit-exact ok, meta:", gen2.meta)

# truncation -> error
raw = open("/tmp/ck.bin", "rb").read()
open("/tmp/ck_trunc.bin", "wb").write(raw[:len(raw) // 2])
try:
    load_checkpoint("/tmp/ck_trunc.bin")
    print("FAIL: truncated load did not raise")
except Exception as exc:
    print("truncated load raises:", type(exc).__name__, str(exc)[:60])
