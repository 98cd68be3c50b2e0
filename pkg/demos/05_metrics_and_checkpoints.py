"""The metrics suite and the binary checkpoint container.

Builds a confusion matrix by hand, derives every reported metric from it,
computes tie-aware AUC, and round-trips named tensors through the
bit-exact container.
"""

import tempfile
from pathlib import Path

import numpy as np

from vitforge import checkpoint, compute_report
from vitforge.metrics import accuracy, balanced_accuracy, precision_recall, \
    roc_auc, sensitivity_specificity

print("== metrics from a hand confusion matrix ==")
cm = np.array([[9, 1],
               [4, 6]])
print("confusion:\n", cm)
print("accuracy:          %.2f%%" % accuracy(cm))
print("balanced accuracy: %.2f%%" % balanced_accuracy(cm))
pr = precision_recall(cm)
print("precision per class:", ["%.2f%%" % p for p in pr.precision])
print("recall per class:   ", ["%.2f%%" % r for r in pr.recall])
sens, spec = sensitivity_specificity(cm, positive_class=1)
print("sensitivity %.2f%% / specificity %.2f%%  (positive = class 1)" % (sens, spec))

print("\n== tie-aware AUC ==")
rng = np.random.default_rng(0)
scores = np.round(rng.random(40), 1)  # coarse scores force ties
labels = rng.integers(0, 2, size=40)
probs = np.stack([1 - scores, scores], axis=1)
print("AUC: %.2f%%" % roc_auc(probs, labels))

print("\n== full report as the CLI emits it ==")
report = compute_report(labels, (scores > 0.5).astype(int), probs, 2)
print(report.to_json())

print("\n== checkpoint round-trip ==")
path = Path(tempfile.mkdtemp(prefix="vitforge-demo-")) / "weights.ckpt"
tensors = {
    "embedding": rng.normal(size=(5, 8)).astype(np.float32),
    "steps": np.arange(10, dtype=np.int64),
}
checkpoint.save(path, tensors, {"note": "demo", "epoch": 3})
loaded, meta = checkpoint.load(path)
print("metadata:", meta)
for name in tensors:
    same = loaded[name].tobytes() == tensors[name].tobytes()
    print(f"{name}: {loaded[name].shape} {loaded[name].dtype}  bit-exact: {same}")
