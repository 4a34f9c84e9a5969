"""Regenerate the CSV files under src/lexidate/data/.

``separable`` is synthetic; the others are exported from the copies bundled
with scikit-learn (needed only to run this script).
"""

import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "src" / "lexidate" / "data"


def write(name, X, y, columns):
    with (OUT / f"{name}.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns + ["class"])
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [label])


def separable(n_per_class=100, seed=20240501):
    """Two Gaussian blobs at (-2,-2) and (2,2) plus two noise columns; points
    within 0.5 of the separating line x0 + x1 = 0 are rejected."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for label, centre in (("neg", -2.0), ("pos", 2.0)):
        kept = 0
        while kept < n_per_class:
            x = rng.normal(size=4)
            x[:2] += centre
            if np.sign(x[0] + x[1]) == np.sign(centre) and abs(x[0] + x[1]) / np.sqrt(2) >= 0.5:
                rows.append(np.round(x, 6))
                labels.append(label)
                kept += 1
    order = rng.permutation(len(rows))
    return np.array(rows)[order], np.array(labels)[order]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    X, y = separable()
    write("separable", X, y, ["x0", "x1", "noise0", "noise1"])

    from sklearn import datasets

    for name, loader in (("iris", datasets.load_iris), ("wine", datasets.load_wine),
                         ("breast_cancer", datasets.load_breast_cancer)):
        bunch = loader()
        names = [n.replace(" ", "_").replace("(", "").replace(")", "").replace("/", "_")
                 for n in bunch.feature_names]
        write(name, bunch.data, [bunch.target_names[t] for t in bunch.target], names)


if __name__ == "__main__":
    main()
