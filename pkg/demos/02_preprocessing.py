"""The preprocessing pipeline on a synthetic dataset.

Normalize to [0, 1], permute to channel-first, bilinear-resize to the model
side, split 85:15 per class, and stack batches.
"""

import numpy as np

from vitforge import ImageSample, LabeledDataset, make_batches, normalize, \
    permute_hwc_to_chw, resize, stratified_split

rng = np.random.default_rng(0)

# 60 bright "benign" and 40 dark "malignant" fake tissue tiles, 20x14 pixels
samples = []
for cls, (n, mean) in enumerate([(60, 180), (40, 70)]):
    for k in range(n):
        px = np.clip(mean + 30 * rng.standard_normal((14, 20, 3)), 0, 255)
        samples.append(ImageSample(px.astype(np.uint8), cls, f"tile-{cls}-{k}"))
ds = LabeledDataset(samples, 2, ["benign", "malignant"])

raw = ds.samples[0].pixels
print("raw pixels:", raw.shape, raw.dtype, " range", raw.min(), "-", raw.max())

norm = normalize(raw)
print("normalized:", norm.dtype, " range %.3f - %.3f" % (norm.min(), norm.max()))

chw = permute_hwc_to_chw(norm)
print("permuted:", chw.shape)

small = resize(chw, 8)
print("resized:", small.shape, " values stay within the input range:",
      small.min() >= norm.min() and small.max() <= norm.max())

train, test = stratified_split(ds, 0.85, seed=7)
print("\nsplit 85:15 ->", len(train), "train /", len(test), "test")
print("train per class:", [(train.labels() == c).sum() for c in (0, 1)])
print("test per class: ", [(test.labels() == c).sum() for c in (0, 1)])

batches = make_batches(train, 32, side=8, shuffle_seed=7, epoch=0)
print("\nbatches of 32:", [len(b) for b in batches])
first = batches[0]
print("batch images:", first.images.shape, " labels:", first.labels[:8], "...")
