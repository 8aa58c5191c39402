"""Sequences, sliding-window samples, sequence-level splits and JSONL I/O.

JSONL schema, one pass per line::

    {"sequence_id": str,
     "steps": [{"bbox": [xc, yc, w, h], "powers": [...] | null, "beam": int}, ...]}

``powers`` may be omitted or null on every step of a sequence; such data is
"labels-only" and cannot be scored by normalized receive power. Beam
indices are 0-based in memory; ``index_base=1`` shifts on read.
"""
from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WINDOW_SIZE = 13


class DataIntegrityError(ValueError):
    pass


class DataParseError(ValueError):
    pass


@dataclass(eq=False)
class DataSequence:
    sequence_id: str
    bboxes: np.ndarray  # T x 4
    beams: np.ndarray  # T
    powers: np.ndarray | None = None  # T x |F|, None when labels-only

    def __post_init__(self):
        self.bboxes = np.asarray(self.bboxes, dtype=float).reshape(-1, 4)
        self.beams = np.asarray(self.beams, dtype=np.int64).reshape(-1)
        if len(self.bboxes) != len(self.beams):
            raise DataIntegrityError(f"{self.sequence_id}: bbox and beam counts differ")
        if len(self.beams) == 0:
            raise DataIntegrityError(f"{self.sequence_id}: a sequence needs at least one step")
        if np.any(self.beams < 0):
            raise DataIntegrityError(f"{self.sequence_id}: negative beam index")
        if self.powers is not None:
            self.powers = np.asarray(self.powers, dtype=float)
            if self.powers.ndim != 2 or len(self.powers) != len(self.beams):
                raise DataIntegrityError(f"{self.sequence_id}: power profiles must be T x |F|")
            if np.any(self.powers < 0):
                raise DataIntegrityError(f"{self.sequence_id}: negative receive power")
            best = np.argmax(self.powers, axis=1)
            bad = np.flatnonzero(best != self.beams)
            if bad.size:
                t = int(bad[0])
                raise DataIntegrityError(
                    f"{self.sequence_id} step {t}: beam {self.beams[t]} is not the argmax {best[t]}"
                )

    def __len__(self):
        return len(self.beams)

    @property
    def labels_only(self) -> bool:
        return self.powers is None

    @property
    def num_beams(self) -> int | None:
        return None if self.powers is None else self.powers.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DataSequence):
            return NotImplemented
        if (self.powers is None) != (other.powers is None):
            return False
        return (
            self.sequence_id == other.sequence_id
            and np.array_equal(self.bboxes, other.bboxes)
            and np.array_equal(self.beams, other.beams)
            and (self.powers is None or np.array_equal(self.powers, other.powers))
        )


@dataclass(eq=False)
class DataSample:
    """A window of consecutive steps cut from one sequence."""

    source_sequence: str
    start: int
    bboxes: np.ndarray
    beams: np.ndarray
    powers: np.ndarray | None = None

    def __len__(self):
        return len(self.beams)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.2
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        parts = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0 <= p <= 1 for p in parts):
            raise ValueError("split fractions must lie in [0, 1]")
        if abs(sum(parts) - 1) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(parts)}, not 1")


@dataclass(eq=False)
class ModelInput:
    observation: np.ndarray  # i x 4 bboxes, or i beam indices
    targets: np.ndarray  # xi beam indices
    powers: np.ndarray | None = None  # xi x |F| profiles at the target steps


def sliding_window(seq: DataSequence, window: int = WINDOW_SIZE, stride: int = 1) -> list[DataSample]:
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    out = []
    for s in range(0, len(seq) - window + 1, stride):
        out.append(DataSample(
            source_sequence=seq.sequence_id,
            start=s,
            bboxes=seq.bboxes[s:s + window],
            beams=seq.beams[s:s + window],
            powers=None if seq.powers is None else seq.powers[s:s + window],
        ))
    return out


def make_samples(seqs, window: int = WINDOW_SIZE, stride: int = 1) -> list[DataSample]:
    return [s for seq in seqs for s in sliding_window(seq, window, stride)]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_by_sequence(seqs, spec: SplitSpec = SplitSpec()) -> tuple[list[str], list[str], list[str]]:
    """Partition sequence ids into train/val/test.

    Ids are sorted before the seeded shuffle, so the result does not depend
    on input order. Val and test sizes are rounded; train takes what is left.
    """
    ids = sorted({s.sequence_id if isinstance(s, DataSequence) else str(s) for s in seqs})
    if not ids:
        raise ValueError("cannot split an empty dataset")
    n = len(ids)
    n_val = _round_half_up(spec.val_fraction * n)
    n_test = min(_round_half_up(spec.test_fraction * n), n - n_val)
    n_train = n - n_val - n_test
    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train:n_train + n_val],
        shuffled[n_train + n_val:],
    )


def select(seqs, ids) -> list[DataSequence]:
    wanted = set(ids)
    return [s for s in seqs if s.sequence_id in wanted]


def make_model_input(sample: DataSample, i: int = 8, xi: int = 5, modality: str = "vision") -> ModelInput:
    if i < 1 or xi < 1:
        raise ValueError("observation window and horizon must be positive")
    if i + xi > len(sample):
        raise ValueError(f"i + xi = {i + xi} exceeds the window of {len(sample)} steps")
    if modality == "vision":
        obs = sample.bboxes[:i]
    elif modality == "baseline":
        obs = sample.beams[:i]
    else:
        raise ValueError(f"unknown modality {modality!r}")
    return ModelInput(
        observation=obs,
        targets=sample.beams[i:i + xi],
        powers=None if sample.powers is None else sample.powers[i:i + xi],
    )


def stack_inputs(samples, i: int, xi: int, modality: str):
    """Batch arrays (observations, targets, powers-or-None) for a list of samples."""
    inputs = [make_model_input(s, i, xi, modality) for s in samples]
    obs = np.stack([m.observation for m in inputs]) if inputs else np.empty((0, i))
    targets = np.stack([m.targets for m in inputs]) if inputs else np.empty((0, xi), dtype=np.int64)
    if inputs and all(m.powers is not None for m in inputs):
        powers = np.stack([m.powers for m in inputs])
    else:
        powers = None
    return obs, targets, powers


def is_labels_only(seqs) -> bool:
    return any(s.labels_only for s in seqs)


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_jsonl(seqs, path) -> None:
    with _open(path, "w") as fh:
        for seq in seqs:
            steps = []
            for t in range(len(seq)):
                step = {"bbox": seq.bboxes[t].tolist(), "beam": int(seq.beams[t])}
                if seq.powers is not None:
                    step["powers"] = seq.powers[t].tolist()
                steps.append(step)
            fh.write(json.dumps({"sequence_id": seq.sequence_id, "steps": steps}) + "\n")


def _parse_record(rec, lineno: int, index_base: int, num_beams: int | None) -> DataSequence:
    try:
        sid = str(rec["sequence_id"])
        steps = rec["steps"]
        bboxes = [s["bbox"] for s in steps]
        beams = [int(s["beam"]) - index_base for s in steps]
        powers = [s.get("powers") for s in steps]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataParseError(f"line {lineno}: malformed record ({exc!r})") from exc
    if any(len(b) != 4 for b in bboxes):
        raise DataParseError(f"line {lineno}: every bbox needs 4 values")
    have = [p is not None for p in powers]
    if any(have) and not all(have):
        raise DataIntegrityError(f"{sid}: power profiles present on some steps only")
    prof = np.array(powers, dtype=float) if all(have) and steps else None
    if prof is not None and len({len(p) for p in powers}) != 1:
        raise DataIntegrityError(f"{sid}: power profiles differ in length")
    seq = DataSequence(sid, np.array(bboxes, dtype=float), np.array(beams, dtype=np.int64), prof)
    limit = num_beams if num_beams is not None else seq.num_beams
    if limit is not None and np.any(seq.beams >= limit):
        raise DataIntegrityError(f"{sid}: beam index beyond codebook size {limit}")
    return seq


def read_jsonl(path, index_base: int = 0, num_beams: int | None = None) -> list[DataSequence]:
    """Read and validate every record; raises on the first bad line."""
    seqs = []
    widths = set()
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataParseError(f"line {lineno}: {exc.msg}") from exc
            seq = _parse_record(rec, lineno, index_base, num_beams)
            if seq.num_beams is not None:
                widths.add(seq.num_beams)
            seqs.append(seq)
    if len(widths) > 1:
        raise DataIntegrityError(f"sequences disagree on codebook size: {sorted(widths)}")
    return seqs
