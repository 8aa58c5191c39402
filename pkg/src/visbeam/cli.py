"""Command line entry point: ``visbeam <gen|train|eval|overhead|report|experiment>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .datasets import SplitSpec, make_samples, read_jsonl, select, split_by_sequence, write_jsonl
from .experiment import ExperimentConfig, run_experiment
from .physics import ArrayGeometry, SignalConfig, build_codebook
from .scenegen import CameraModel, SceneConfig, generate_dataset
from .tracker import TrainConfig, load_checkpoint, make_model, save_checkpoint, train

log = logging.getLogger("visbeam")


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split(seqs, args):
    return split_by_sequence(seqs, SplitSpec(seed=args.split_seed))


def cmd_gen(args) -> int:
    out = _out(args)
    if args.ingest:
        seqs = read_jsonl(args.ingest, index_base=args.index_base, num_beams=args.codebook_size)
    else:
        scene = SceneConfig.from_json(args.config) if args.config else SceneConfig()
        if args.seed is not None:
            scene = replace(scene, rng_seed=args.seed)
        geometry = ArrayGeometry()
        codebook = build_codebook(geometry, args.codebook_size, max(1, args.codebook_size // 8))
        signal = SignalConfig(power_measurement_noise_std=args.power_noise_std)
        seqs = generate_dataset(scene, CameraModel(), geometry, codebook, signal)
    path = out / "dataset.jsonl"
    write_jsonl(seqs, path)
    print(f"wrote {len(seqs)} sequences to {path}")
    return 0


def cmd_train(args) -> int:
    out = _out(args)
    cfg = TrainConfig.from_dict(_load_json(args.config)) if args.config else TrainConfig()
    seqs = read_jsonl(args.data, num_beams=args.codebook_size)
    num_beams = next((s.num_beams for s in seqs if s.num_beams), args.codebook_size)
    tr, va, te = _split(seqs, args)
    train_s = make_samples(select(seqs, tr), cfg.window)
    val_s = make_samples(select(seqs, va), cfg.window)
    seed = args.seed if args.seed is not None else 0
    model = make_model(args.model, num_beams=num_beams, seed=seed)
    report = train(model, train_s, val_s, replace(cfg, shuffle_seed=seed) if args.seed is not None else cfg)
    save_checkpoint(model, out / f"{args.model}.ckpt")
    (out / "train_report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "split.json").write_text(json.dumps({"train": tr, "val": va, "test": te}, indent=2), encoding="utf-8")
    print(f"trained {args.model} on {len(train_s)} samples; best epoch {report.best_epoch}")
    return 0


def cmd_eval(args) -> int:
    out = _out(args)
    model = load_checkpoint(args.checkpoint)
    doc = _load_json(args.config) if args.config else {}
    unknown = sorted(set(doc) - {"i", "xi", "ks", "window"})
    if unknown:
        raise ValueError(f"unknown eval config key(s): {', '.join(unknown)}")
    i, xi, ks, window = doc.get("i", 8), doc.get("xi", 5), doc.get("ks", [1, 2, 3, 4, 5]), doc.get("window", 13)
    seqs = read_jsonl(args.data, num_beams=model.num_beams)
    if args.split != "all":
        tr, va, te = _split(seqs, args)
        seqs = select(seqs, {"train": tr, "val": va, "test": te}[args.split])
    if args.closed_loop:
        acc = ev.closed_loop_accuracy(model, seqs, i, args.recalibrate_every)
        with open(out / "closed_loop.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["steps_since_calibration", "top1"])
            w.writerows([n + 1, a] for n, a in enumerate(acc))
        print(f"closed loop: top-1 {acc[0]:.4f} one step after calibration, "
              f"{np.nanmean(acc):.4f} averaged over {len(acc)} offsets")
        return 0
    samples = make_samples(seqs, window)
    if not samples:
        raise ValueError(f"no complete {window}-step window in the {args.split} split")
    report = ev.evaluate_model(model, samples, i, xi, ks)
    for note in report.notes:
        print(f"note: {note}", file=sys.stderr)
    ev.write_report_json([report], out / "eval_report.json")
    ev.write_report_csv([report], out / "eval_report.csv")
    print(f"future beam 1: top-1 {report.top_k_accuracy['1']['1']:.4f}"
          + ("" if report.normalized_receive_power is None
             else f", NRP {report.normalized_receive_power['1']['1']:.4f}"))
    return 0


def cmd_overhead(args) -> int:
    out = _out(args)
    rows = ev.overhead_table(args.i, args.codebook_size, args.k)
    ev.write_overhead_csv(rows, out / "overhead.csv")
    for r in rows:
        print(f"k={r['k']}: vision {r['vision']}, baseline {r['baseline']}, ratio {r['ratio']:.5f}")
    return 0


def cmd_report(args) -> int:
    out = _out(args)
    rows = [row for path in args.inputs for row in ev.read_report_csv(path)]
    with open(out / "combined.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=ev.CSV_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    print(f"merged {len(rows)} rows from {len(args.inputs)} file(s)")
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.model_seed = args.seed
    if args.codebook_size is not None:
        cfg.codebook_sizes = [args.codebook_size]
    if args.model is not None:
        cfg.models = [args.model]
    run_experiment(cfg, _out(args))
    print(f"reports written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="visbeam", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="scene config -> dataset JSONL, or normalise an existing JSONL")
    g.add_argument("--config", help="SceneConfig JSON")
    g.add_argument("--ingest", help="existing JSONL (e.g. DeepSense-style) to validate and re-index")
    g.add_argument("--index-base", type=int, default=1, help="beam index base of --ingest input (default 1)")
    g.add_argument("--seed", type=int)
    g.add_argument("--codebook-size", type=int, default=64)
    g.add_argument("--power-noise-std", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="dataset + train config -> checkpoint + TrainReport JSON")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON")
    t.add_argument("--model", choices=["vision", "baseline"], default="vision")
    t.add_argument("--seed", type=int, help="model init and shuffle seed")
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--codebook-size", type=int, default=64, help="used when the data is labels-only")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="checkpoint + dataset -> EvalReport JSON/CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config", help="JSON with optional i, xi, ks, window")
    e.add_argument("--split", choices=["all", "train", "val", "test"], default="val")
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--closed-loop", action="store_true",
                   help="baseline only: feed the model its own predicted beams instead of measured ones")
    e.add_argument("--recalibrate-every", type=int, help="with --closed-loop, reset to measured beams every N steps")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("overhead", help="beam-training overhead table -> CSV")
    o.add_argument("--i", type=int, default=8)
    o.add_argument("--codebook-size", type=int, default=64)
    o.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_overhead)

    r = sub.add_parser("report", help="merge report CSVs -> combined CSV")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    x = sub.add_parser("experiment", help="full config-driven experiment")
    x.add_argument("--config")
    x.add_argument("--seed", type=int)
    x.add_argument("--model", choices=["vision", "baseline"])
    x.add_argument("--codebook-size", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"visbeam {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
