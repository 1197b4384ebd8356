"""Sweep sample size and flip rate on Gaussian clusters and write plot-ready curves."""

import argparse

from fragility.experiments import BenchSpec, SyntheticSpec, default_models, run_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/trends")
    ap.add_argument("--repetitions", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cv", action="store_true", help="pick the regularizer by 5-fold CV on ERM")
    args = ap.parse_args()

    settings = [{"samples_per_class": n // 2, "p_flip": 0.0} for n in (20, 50, 100, 200)]
    settings += [{"samples_per_class": 25, "p_flip": p} for p in (0.1, 0.2, 0.3, 0.4)]
    spec = BenchSpec(data=SyntheticSpec(test_per_class=1000), models=tuple(default_models()),
                     settings=tuple(settings), repetitions=args.repetitions, master_seed=args.seed,
                     cross_validate=args.cv)
    report = run_comparison(spec)
    for path in report.write(args.out):
        print("wrote", path)
    for row in report.rows():
        print(f"n={2 * row['samples_per_class']:4d} p={row['p_flip']:.1f} {row['model']:>12}: "
              f"acc {row['accuracy_mean']:.3f}  auc {row['auc_mean']:.3f}  fi {row['fi_mean']:.4f}"
              f"  (inf {row['fi_infinite']}, failed {row['failures']})")


if __name__ == "__main__":
    main()
