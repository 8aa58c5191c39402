"""Config-driven experiment: data, training of both trackers, evaluation,
overhead table and an optional codebook-size sweep.

A config is a JSON object; unknown keys are rejected at every level.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .datasets import SplitSpec, is_labels_only, make_samples, read_jsonl, select, split_by_sequence
from .neuralkit import OptimizerConfig
from .physics import ArrayGeometry, SignalConfig, build_codebook
from .scenegen import CameraModel, SceneConfig, generate_dataset
from .tracker import TrainConfig, make_model, save_checkpoint, train

log = logging.getLogger(__name__)


class ExperimentConfigError(ValueError):
    pass


def _strict(cls, doc, where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ExperimentConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ExperimentConfigError(f"{where}: unknown key(s): {', '.join(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ExperimentConfigError(f"{where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    array: ArrayGeometry = field(default_factory=ArrayGeometry)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    codebook_sizes: list[int] = field(default_factory=lambda: [64])
    sector_degrees: float = 60.0
    models: list[str] = field(default_factory=lambda: ["vision", "baseline"])
    ks: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    eval_split: str = "val"
    oracle: bool = True
    model_seed: int = 0
    dataset: str | None = None  # JSONL path; replaces scene generation
    index_base: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ExperimentConfigError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ExperimentConfigError(f"unknown key(s): {', '.join(unknown)}")
        doc = dict(doc)
        scene = doc.pop("scene", None)
        train_doc = dict(doc.pop("train", None) or {})
        opt = train_doc.pop("optimizer", None)
        cfg = cls(
            scene=_strict(SceneConfig, scene, "scene"),
            signal=_strict(SignalConfig, doc.pop("signal", None), "signal"),
            array=_strict(ArrayGeometry, doc.pop("array", None), "array"),
            split=_strict(SplitSpec, doc.pop("split", None), "split"),
            train=_strict(TrainConfig, {**train_doc, "optimizer": _strict(OptimizerConfig, opt, "train.optimizer")}, "train"),
            **doc,
        )
        bad = [m for m in cfg.models if m not in ("vision", "baseline")]
        if bad:
            raise ExperimentConfigError(f"unknown model(s): {bad}")
        if cfg.eval_split not in ("train", "val", "test"):
            raise ExperimentConfigError(f"eval_split must be train, val or test, not {cfg.eval_split!r}")
        if not cfg.codebook_sizes or min(cfg.codebook_sizes) < 1:
            raise ExperimentConfigError("codebook_sizes must be positive")
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def codebook_for(cfg: ExperimentConfig, size: int):
    # the oversampling factor follows from the horizontal element count
    over = max(1, size // cfg.array.elements_horizontal)
    sector = np.deg2rad(cfg.sector_degrees)
    return build_codebook(cfg.array, size, over, sector=(-sector, sector))


def load_or_generate(cfg: ExperimentConfig, codebook_size: int):
    if cfg.dataset is not None:
        path = Path(cfg.dataset)
        if not path.exists():
            raise FileNotFoundError(f"dataset {path} does not exist")
        return read_jsonl(path, index_base=cfg.index_base, num_beams=codebook_size)
    return generate_dataset(
        cfg.scene, CameraModel(), cfg.array, codebook_for(cfg, codebook_size), cfg.signal)


@dataclass
class RunResult:
    codebook_size: int
    reports: list = field(default_factory=list)
    train_reports: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)


def run_single(cfg: ExperimentConfig, codebook_size: int, out_dir: Path | None = None) -> RunResult:
    seqs = load_or_generate(cfg, codebook_size)
    tr_ids, va_ids, te_ids = split_by_sequence(seqs, cfg.split)
    parts = {"train": tr_ids, "val": va_ids, "test": te_ids}
    window = cfg.train.window
    train_s = make_samples(select(seqs, tr_ids), window)
    val_s = make_samples(select(seqs, va_ids), window)
    eval_s = make_samples(select(seqs, parts[cfg.eval_split]), window)
    if not eval_s:
        raise ValueError(f"the {cfg.eval_split} split holds no complete window")
    result = RunResult(codebook_size=codebook_size, split=parts)
    for kind in cfg.models:
        t0 = time.perf_counter()
        model = make_model(kind, num_beams=codebook_size, seed=cfg.model_seed)
        rep = train(model, train_s, val_s, cfg.train)
        result.train_reports[kind] = asdict(rep)
        report = ev.evaluate_model(model, eval_s, cfg.train.i, cfg.train.xi, cfg.ks)
        if is_labels_only(seqs):
            report.notes.append("dataset is labels-only")
        result.reports.append(report)
        log.info("|F|=%d %s trained in %.1fs, future-beam-1 top-1 %.4f", codebook_size, kind,
                 time.perf_counter() - t0, report.top_k_accuracy["1"]["1"])
        if out_dir is not None:
            save_checkpoint(model, out_dir / f"{kind}_F{codebook_size}.ckpt")
    if cfg.oracle:
        result.reports.append(ev.evaluate_oracle(train_s, eval_s, cfg.train.i, cfg.train.xi, codebook_size))
    return result


def run_experiment(cfg: ExperimentConfig | str | Path, out_dir) -> list[RunResult]:
    """Run every codebook size and write report.json, report.csv and overhead.csv."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_json(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = [run_single(cfg, size, out) for size in cfg.codebook_sizes]
    reports = [r for res in results for r in res.reports]
    overhead = ev.overhead_table(cfg.train.i, max(cfg.codebook_sizes), cfg.ks)
    ev.write_report_json(reports, out / "report.json", extra={
        "train_reports": {str(res.codebook_size): res.train_reports for res in results},
        "splits": {str(res.codebook_size): res.split for res in results},
        "overhead": overhead,
    })
    ev.write_report_csv(reports, out / "report.csv")
    ev.write_overhead_csv(overhead, out / "overhead.csv")
    return results
