"""
Mixture-model classifier
========================

One GMM per class, trained under each regime, then test points go to the
class whose fitted mixture gives them the highest log-density.
"""
import tempfile

import numpy as np

from avi import PointSet, synth_gmm
from avi.harness import classify_eval, train_class_models

# two classes, each itself a three-cluster mixture
parts = []
for label, seed in ((0, 21), (1, 22)):
    pts, _ = synth_gmm(K=3, d=2, N=600, separation=2.5, seed=seed)
    parts.append((pts.X + 2.0 * label, np.full(len(pts.X), label)))
X = np.vstack([p[0] for p in parts])
y = np.concatenate([p[1] for p in parts])

rng = np.random.default_rng(0)
idx = rng.permutation(len(X))
train, test = idx[:900], idx[900:]

with tempfile.TemporaryDirectory() as tmp:
    train_class_models(PointSet(X[train], y[train]), 3, ["vi", "det", "stoch"], tmp)
    acc = classify_eval(tmp, PointSet(X[test], y[test]), 3)

for regime, a in acc.items():
    print(f"{regime:>5}  accuracy {a:.3f}")
