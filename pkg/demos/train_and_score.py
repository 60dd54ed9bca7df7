"""Train the small vehicle classifier on synthetic patches and print a score report.

Run:  python demos/train_and_score.py
"""

import sys

import numpy as np

from driveperc import imaging, metrics, models, synth
from driveperc.nn.optim import OptimizerState
from driveperc.nn.train import predict, train_epoch
from driveperc.tensor_core import Prng


def patches(n, seed):
    p = Prng(seed)
    pairs = [synth.vehicle_image(k % 2, p) for k in range(n)]
    x = np.stack([imaging.normalize(img) for img in pairs])
    y = (np.arange(n) % 2).astype(np.float64)[:, None]
    return x, y


def main():
    xtr, ytr = patches(64, 1)
    xte, yte = patches(32, 2)
    model = models.build_binary_vehicle_cnn(seed=0)
    state = OptimizerState("adam", lr=0.001)
    prng = Prng(3)
    for epoch in range(1, 9):
        loss = train_epoch(model, xtr, ytr, "binary_ce", state, prng, batch_size=8)
        print(f"epoch {epoch} loss {loss:.4f}")

    scores = predict(model, xte)[:, 0]
    truth = yte[:, 0].astype(int)
    cm = metrics.ConfusionMatrix.from_labels(truth, (scores >= 0.5).astype(int), classes=2)
    row = {"model": model.name, **metrics.classification_scores(cm, 1), "auc": metrics.roc_auc(scores, truth)[1]}
    sys.stdout.flush()
    metrics.write_report([row], "/dev/stdout")


if __name__ == "__main__":
    main()
