"""Accuracy, AUC and KL Fragility Index of the two bundled toy classifiers."""

from importlib.resources import files

import numpy as np

from fragility.core import ErrorSample, auc, threshold_accuracy
from fragility.fi import empirical_var, fi_kl, var_bound


def main():
    data = files("fragility") / "data"
    fis = {}
    for name in ("classifier_a", "classifier_b"):
        rows = np.genfromtxt(data / f"{name}.csv", delimiter=",", names=True)
        pos, neg = rows["score"][rows["label"] == 1], rows["score"][rows["label"] == 0]
        sample = ErrorSample.from_scores(pos, neg)
        fis[name] = fi = fi_kl(sample)
        print(f"{name}: accuracy {threshold_accuracy(pos, neg):.2f}  auc {auc(pos, neg):.2f}  "
              f"FI {fi:.6f}  VaR_0.95 {empirical_var(sample, 0.05):.3f} <= {var_bound(fi, 0.0, 0.05):.3f}")
    print(f"FI ratio b / a = {fis['classifier_b'] / fis['classifier_a']:.4f}")


if __name__ == "__main__":
    main()
