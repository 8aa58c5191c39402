"""1-NN oracle future-beam-1 accuracy of a scene config over several seeds.

Cheap (no training): use it to check that a scenario is learnable before
spending minutes on the trackers.

    python scripts/oracle_accuracy.py --seeds 0 1 2 --codebook-size 64
"""
import argparse

import numpy as np

from visbeam.datasets import SplitSpec, make_samples, select, split_by_sequence
from visbeam.evaluation import evaluate_oracle
from visbeam.physics import ArrayGeometry, SignalConfig, build_codebook
from visbeam.scenegen import CameraModel, SceneConfig, generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scene", help="SceneConfig JSON (defaults otherwise)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--codebook-size", type=int, default=64)
    ap.add_argument("--power-noise-std", type=float, default=0.0)
    args = ap.parse_args()

    base = SceneConfig.from_json(args.scene) if args.scene else SceneConfig()
    geom = ArrayGeometry()
    cb = build_codebook(geom, args.codebook_size, max(1, args.codebook_size // geom.elements_horizontal))
    signal = SignalConfig(power_measurement_noise_std=args.power_noise_std)
    scores = []
    for seed in args.seeds:
        cfg = SceneConfig.from_dict({**base.to_dict(), "rng_seed": seed})
        seqs = generate_dataset(cfg, CameraModel(), geom, cb, signal)
        tr, va, _ = split_by_sequence(seqs, SplitSpec())
        train, val = make_samples(select(seqs, tr)), make_samples(select(seqs, va))
        rep = evaluate_oracle(train, val, 8, 5, args.codebook_size)
        scores.append(rep.top_k_accuracy["1"]["1"])
        print(f"seed {seed}: {len(train)} train / {len(val)} val samples, "
              f"oracle top-1 {scores[-1]:.4f}, mean length {np.mean([len(s) for s in seqs]):.1f}")
    print(f"mean oracle top-1 {np.mean(scores):.4f}")


if __name__ == "__main__":
    main()
