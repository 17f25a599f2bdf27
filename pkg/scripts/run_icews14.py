"""Full-scale ICEWS14 run with the default configuration (long; hours on a CPU).

Expects train.txt/valid.txt/test.txt in tab-separated form under --data-dir.

    python3 scripts/run_icews14.py --data-dir data/icews14 --out runs/icews14
"""
import argparse

from topoagent import cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data-dir", default="data/icews14")
    ap.add_argument("--out", default="runs/icews14")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=1)
    args = ap.parse_args()
    common = ["--dataset", "icews14", "--data-dir", args.data_dir, "--out-dir", args.out,
              "--seed", str(args.seed), "--epochs", str(args.epochs)]
    for verb in ("train", "eval"):
        rc = cli.main(["-v", verb, *common])
        if rc:
            raise SystemExit(rc)


if __name__ == "__main__":
    main()
