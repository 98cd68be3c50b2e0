"""Anatomy of the ViT forward pass at desk scale.

Patchify -> embed (+CLS, +positions) -> pre-norm encoder layers -> final
norm -> classification head. Also shows the two structural symmetries:
attention rows are probability distributions, and the CLS logits ignore the
order of patch tokens.
"""

import numpy as np

from vitforge import Tensor, ViT, ViTConfig, attention
from vitforge.model import embed, encode_tokens, patchify

cfg = ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                mlp_dim=32, num_classes=3)
print("config:", cfg)
print("patches per image:", cfg.num_patches, " patch vector length:", cfg.patch_len)

model = ViT.init(cfg, seed=0, class_names=["clear_cell", "mucinous", "serous"])
rng = np.random.default_rng(1)
batch = Tensor(rng.random((2, 3, 8, 8), dtype=np.float32))

patches = patchify(batch, cfg.patch_size)
print("\npatchify:", batch.shape, "->", patches.shape)

tokens = embed(patches, model.params)
print("embed (+CLS +positions):", tokens.shape)

encoded = encode_tokens(tokens, model.params)
print("after", cfg.depth, "encoder layers + final norm:", encoded.shape)

logits = model.forward(batch)
print("logits:", logits.shape, "\n", logits.data)
print("predictions:", model.predict(batch))

print("\n== attention is a weighted average ==")
q = Tensor(np.zeros((4, 8)))
k = Tensor(rng.random((4, 8), dtype=np.float32))
v = Tensor(rng.random((4, 8), dtype=np.float32))
out = attention(q, k, v)
print("zero queries give uniform weights; output row == column mean of V:",
      np.allclose(out.data[0], v.data.mean(axis=0), atol=1e-6))

print("\n== CLS logits ignore patch-token order ==")
perm = np.concatenate([[0], 1 + rng.permutation(cfg.num_patches)])
shuffled = Tensor(tokens.data[:, perm])
logits_perm = ((encode_tokens(shuffled, model.params)[:, 0]
                @ model.params["head.weight"]) + model.params["head.bias"])
print("max |difference| after permuting tokens:",
      float(np.abs(logits_perm.data - logits.data).max()))
