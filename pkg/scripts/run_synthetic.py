"""Generate the planted-rule dataset, train on it and evaluate, for several seeds.

    python3 scripts/run_synthetic.py --seeds 0 1 2 --out runs/synthetic
"""
import argparse
import json
from pathlib import Path

from topoagent import cli

# settings that let the agent find the 2-hop rules within the time budget
SYNTH_FLAGS = ["--tknn", "5", "--lr", "1e-3", "--eps-decay", "5e-4", "--gamma", "0.7",
               "--epochs", "1000", "--max-episodes", "8000", "--max-seconds", "300"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/synthetic")
    ap.add_argument("--data-dir", default="data/synthetic")
    args = ap.parse_args()

    if cli.main(["synth", "--out-dir", args.data_dir]) != 0:
        raise SystemExit(2)
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        common = ["--dataset", "synthetic", "--data-dir", args.data_dir, "--out-dir", str(out),
                  "--seed", str(seed), *SYNTH_FLAGS]
        for verb in ("train", "eval"):
            rc = cli.main([verb, *common])
            if rc:
                raise SystemExit(rc)
        report = json.loads((out / "report.json").read_text())
        print(f"seed {seed}: mrr={report['mrr']:.4f} hits@1={report['hits_at']['1']:.3f}")


if __name__ == "__main__":
    main()
