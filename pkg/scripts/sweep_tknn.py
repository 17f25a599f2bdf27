"""Retrain and evaluate at several temporal-kNN sizes, writing sweep.csv.

    python3 scripts/sweep_tknn.py --dataset icews14 --data-dir data/icews14 --k 5 10 15 20 30
"""
import argparse

from topoagent import cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dataset", default="synthetic")
    ap.add_argument("--data-dir", default="data/synthetic")
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--k", type=int, nargs="+", default=[5, 10, 15, 20, 30])
    # anything else is passed through as RunConfig flags
    args, extra = ap.parse_known_args()
    argv = ["sweep", "--dataset", args.dataset, "--data-dir", args.data_dir,
            "--out-dir", args.out, "--k-values", ",".join(map(str, args.k)), *extra]
    raise SystemExit(cli.main(argv))


if __name__ == "__main__":
    main()
