"""Run the desk-scale guidance comparison and check the expected ordering.

    python scripts/directional_experiment.py --out runs/directional.json
"""

import argparse
import sys

from bridgekit.experiment import SCHEMES, ExperimentSettings, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    d = ExperimentSettings()
    ap.add_argument("--seeds", type=int, nargs="+", default=list(d.seeds))
    ap.add_argument("--schemes", nargs="+", default=list(SCHEMES), choices=SCHEMES)
    ap.add_argument("--epochs", type=int, default=d.epochs)
    ap.add_argument("--n-samples", type=int, default=d.n_samples)
    ap.add_argument("--lr", type=float, default=d.lr)
    ap.add_argument("--batch-size", type=int, default=d.batch_size)
    ap.add_argument("--n-train", type=int, default=d.n_train)
    ap.add_argument("--n-test", type=int, default=d.n_test)
    ap.add_argument("--out", help="write the full result as JSON")
    args = ap.parse_args(argv)
    st = ExperimentSettings(n_train=args.n_train, n_test=args.n_test, seeds=tuple(args.seeds),
                            schemes=tuple(args.schemes), epochs=args.epochs, n_samples=args.n_samples,
                            lr=args.lr, batch_size=args.batch_size)
    res = run_experiment(st, progress=lambda m: print(m, flush=True))
    print(res.summary())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(res.to_json())
    if set(args.schemes) != set(SCHEMES):
        return 0
    ok = True
    for name, passed in res.checks().items():
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
