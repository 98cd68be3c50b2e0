"""Training loop with Adam and patience-based early stopping.

Overfits a tiny ViT on 32 synthetic images (two class-conditional mean
patterns plus noise) and prints the epoch log; artifacts land in a run
directory exactly as the CLI writes them.
"""

import tempfile
from pathlib import Path

import numpy as np

from vitforge import TensorDataset, TrainConfig, ViT, ViTConfig, evaluate, fit

rng = np.random.default_rng(0)
base = rng.random((2, 3, 8, 8))
images, labels = [], []
for cls in range(2):
    for _ in range(16):
        img = 0.55 * base[cls] + 0.2 + 0.06 * rng.standard_normal((3, 8, 8))
        images.append(np.clip(img, 0, 1).astype(np.float32))
        labels.append(cls)
data = TensorDataset(np.stack(images), np.array(labels), 2, ["benign", "malignant"])

cfg = ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                mlp_dim=32, num_classes=2)
model = ViT.init(cfg, seed=0, class_names=data.class_names)
train_cfg = TrainConfig(epochs=60, batch_size=32, lr=1e-3, patience=10, seed=1)

run_dir = Path(tempfile.mkdtemp(prefix="vitforge-demo-"))
best, logs = fit(model, data, data, train_cfg, run_dir=run_dir)

print(f"{'epoch':>5} {'train loss':>11} {'train acc':>10} {'test loss':>10} {'test acc':>9}")
for log in logs:
    print(f"{log.epoch:>5} {log.train_loss:>11.4f} {log.train_accuracy:>9.1f}% "
          f"{log.test_loss:>10.4f} {log.test_accuracy:>8.1f}%")

print("\nstopped after", len(logs), "of", train_cfg.epochs, "epochs")
print("run directory:", sorted(p.name for p in run_dir.iterdir()))

loss, report = evaluate(model, data)
print("\nfinal evaluation: loss %.4f, accuracy %.2f%%, AUC %.2f%%"
      % (loss, report.accuracy, report.auc))
