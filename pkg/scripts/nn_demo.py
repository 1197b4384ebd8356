"""Median test FI of a small network with and without the last-layer fragility penalty."""

import argparse
import math
from dataclasses import replace

import numpy as np

from fragility.experiments import SyntheticSpec, gen_gaussian_clusters
from fragility.nn import NnTrainSpec, evaluate_nn, train_nn_fi


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--lambda0", type=float, default=10.0)
    ap.add_argument("--alpha", type=float, default=10.0)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()

    data = SyntheticSpec(class_count=4, samples_per_class=100, test_per_class=500)
    results = {"baseline": [], "fi": []}
    for seed in range(args.seeds):
        train, test = gen_gaussian_clusters(replace(data, seed=seed))
        spec = NnTrainSpec(lambda0=args.lambda0, alpha=args.alpha, epochs=args.epochs, seed=seed)
        for name, s in (("baseline", replace(spec, lambda0=math.inf, alpha=0.0)), ("fi", spec)):
            model, _ = train_nn_fi(train, s, record_metrics=False)
            results[name].append(evaluate_nn(model, test))
    for name, rows in results.items():
        med = {m: float(np.median([r[m] for r in rows])) for m in ("accuracy", "auc", "fi")}
        print(f"{name:>8}: median accuracy {med['accuracy']:.4f}  auc {med['auc']:.4f}  fi {med['fi']:.5f}")


if __name__ == "__main__":
    main()
