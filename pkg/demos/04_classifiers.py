"""
Three classifiers
=================

Stacked RBF SVMs, a dropout MLP and a Gini random forest on a toy problem.
"""
import numpy as np

from echolatent.classifiers import predict, train_classifier

rng = np.random.default_rng(0)
y = np.arange(80) % 2
X = rng.normal(size=(80, 5))
X[:, 0] += 2.0 * y
X[:, 1] += np.where(y == 1, 1.0, -1.0) * X[:, 2]  # a bit of interaction

train, test = np.arange(60), np.arange(60, 80)
for kind in ("SVMC", "MLP", "RFC"):
    model = train_classifier(kind, X[train], y[train], seed=0)
    pred, score = predict(model, X[test])
    print(kind, "test accuracy %.2f" % (pred == y[test]).mean(), "scores", np.round(score[:4], 2))
