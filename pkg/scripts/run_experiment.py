"""Run a config from scripts/configs and print a per-horizon summary.

    python scripts/run_experiment.py scripts/configs/deterministic.json --out runs/det
"""
import argparse
import json
import logging
from pathlib import Path

from visbeam.experiment import run_experiment


def summarize(report_path: Path) -> None:
    doc = json.loads(report_path.read_text())
    print(f"{'model':<11}{'|F|':>4}  {'horizon':<8}{'top-1':>8}{'top-5':>8}{'NRP@1':>9}")
    for rep in doc["reports"]:
        nrp = rep["normalized_receive_power"]
        for h, per_k in rep["top_k_accuracy"].items():
            top5 = "" if "5" not in per_k else f"{per_k['5']:.4f}"
            power = "n/a" if nrp is None else f"{nrp[h]['1']:.5f}"
            print(f"{rep['model']:<11}{rep['codebook_size']:>4}  {h:<8}{per_k['1']:>8.4f}{top5:>8}{power:>9}")
    print("\noverhead (vision / baseline measurements):")
    for row in doc["overhead"]:
        print(f"  k={row['k']}: {row['vision']} / {row['baseline']} = {row['ratio']:.5f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run_experiment(args.config, args.out)
    summarize(Path(args.out) / "report.json")


if __name__ == "__main__":
    main()
