"""Top-k metrics, beam-training overhead and a nearest-neighbour oracle.

Prediction arrays are ``(S, xi, k)`` beam indices (best first), optima are
``(S, xi)`` and power profiles ``(S, xi, |F|)``. Horizon steps are 1-based
as in "future beam 1".
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import stack_inputs
from .tracker import predict_topk

CSV_COLUMNS = ["horizon", "k", "metric", "value", "model", "codebook_size"]


class MetricUnavailableError(RuntimeError):
    """Receive-power metrics requested on labels-only data."""


def _check(predictions, optima, k, horizon_step):
    predictions = np.asarray(predictions)
    optima = np.asarray(optima)
    if predictions.ndim != 3 or optima.shape != predictions.shape[:2]:
        raise ValueError(f"predictions {predictions.shape} do not match optima {optima.shape}")
    if not 1 <= k <= predictions.shape[2]:
        raise ValueError(f"k={k} but only {predictions.shape[2]} predictions per step")
    if horizon_step is not None and not 1 <= horizon_step <= predictions.shape[1]:
        raise ValueError(f"horizon step {horizon_step} outside 1..{predictions.shape[1]}")
    sl = slice(None) if horizon_step is None else slice(horizon_step - 1, horizon_step)
    return predictions[:, sl, :k], optima[:, sl]


def topk_accuracy(predictions, optima, k: int, horizon_step: int | None = None) -> float:
    """Fraction of steps whose top-k set contains the optimal beam.

    ``horizon_step=None`` pools every horizon step.
    """
    pred, opt = _check(predictions, optima, k, horizon_step)
    if opt.size == 0:
        return float("nan")
    return float(np.mean(np.any(pred == opt[..., None], axis=-1)))


def normalized_receive_power(
    predictions, powers, optima, k: int, horizon_step: int | None = None, return_excluded: bool = False,
):
    """Mean of ``max(profile[top-k]) / profile[optimum]`` over steps.

    Steps whose optimal power is zero are skipped and counted.
    """
    if powers is None:
        raise MetricUnavailableError("normalized receive power needs power profiles; the dataset is labels-only")
    pred, opt = _check(predictions, optima, k, horizon_step)
    powers = np.asarray(powers, dtype=float)
    sl = slice(None) if horizon_step is None else slice(horizon_step - 1, horizon_step)
    powers = powers[:, sl]
    if powers.shape[:2] != opt.shape:
        raise ValueError(f"powers {powers.shape} do not match optima {opt.shape}")
    best_pred = np.take_along_axis(powers, pred, axis=-1).max(axis=-1)
    optimal = np.take_along_axis(powers, opt[..., None], axis=-1)[..., 0]
    live = optimal > 0
    excluded = int(np.sum(~live))
    if excluded:
        warnings.warn(f"{excluded} step(s) with zero optimal power excluded from normalized receive power")
    value = float(np.mean(best_pred[live] / optimal[live])) if live.any() else float("nan")
    return (value, excluded) if return_excluded else value


# ---- overhead ---------------------------------------------------------------

@dataclass(frozen=True)
class OverheadInputs:
    observation_window: int = 8
    codebook_size: int = 64
    k: int = 1

    def __post_init__(self):
        if min(self.observation_window, self.codebook_size, self.k) < 1:
            raise ValueError("overhead inputs must be positive")
        if self.k > self.codebook_size:
            raise ValueError(f"k={self.k} exceeds codebook size {self.codebook_size}")


def training_overhead(inputs: OverheadInputs, approach: str) -> int:
    """Beam measurements over the i observed steps plus the predicted step.

    Both approaches sweep the top-k beams at the predicted step when k >= 2;
    the baseline also needs a full sweep at each observed step to know its
    input beams.
    """
    predicted = 0 if inputs.k == 1 else inputs.k
    if approach == "vision":
        return predicted
    if approach == "baseline":
        return inputs.observation_window * inputs.codebook_size + predicted
    raise ValueError(f"unknown approach {approach!r}")


def overhead_ratio(inputs: OverheadInputs) -> float:
    return training_overhead(inputs, "vision") / training_overhead(inputs, "baseline")


def overhead_table(observation_window: int = 8, codebook_size: int = 64, ks=(1, 2, 3, 4, 5)) -> list[dict]:
    rows = []
    for k in ks:
        inp = OverheadInputs(observation_window, codebook_size, k)
        rows.append({
            "i": observation_window,
            "codebook_size": codebook_size,
            "k": k,
            "vision": training_overhead(inp, "vision"),
            "baseline": training_overhead(inp, "baseline"),
            "ratio": overhead_ratio(inp),
        })
    return rows


def write_overhead_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["i", "codebook_size", "k", "vision", "baseline", "ratio"])
        w.writeheader()
        w.writerows(rows)


# ---- nearest-neighbour oracle -----------------------------------------------

def knn_oracle_predict(train_obs, train_targets, query, k_neighbors: int = 1, chunk: int = 128) -> np.ndarray:
    """Copy the future beams of the nearest training windows.

    Distance is Euclidean on the flattened bbox windows. With several
    neighbours each horizon step takes a majority vote; every tie (in
    distance or in votes) goes to the earlier training sample.
    Returns ``(xi,)`` for a single query window or ``(Q, xi)`` for a batch.
    """
    train_obs = np.asarray(train_obs, dtype=float)
    train_targets = np.asarray(train_targets)
    if len(train_obs) == 0:
        raise ValueError("oracle needs a non-empty training set")
    if not 1 <= k_neighbors <= len(train_obs):
        raise ValueError(f"k_neighbors={k_neighbors} outside [1, {len(train_obs)}]")
    query = np.asarray(query, dtype=float)
    single = query.ndim == train_obs.ndim - 1
    if single:
        query = query[None]
    A = train_obs.reshape(len(train_obs), -1)
    Q = query.reshape(len(query), -1)
    if Q.shape[1] != A.shape[1]:
        raise ValueError(f"query windows have {Q.shape[1]} features, training windows {A.shape[1]}")
    out = np.empty((len(Q), train_targets.shape[1]), dtype=train_targets.dtype)
    for s in range(0, len(Q), chunk):
        d = np.sum((Q[s:s + chunk, None, :] - A[None]) ** 2, axis=-1)
        if k_neighbors == 1:
            out[s:s + chunk] = train_targets[np.argmin(d, axis=1)]
            continue
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k_neighbors]
        for r, idx in enumerate(nearest):
            for j in range(train_targets.shape[1]):
                labels = train_targets[idx, j]
                values, counts = np.unique(labels, return_counts=True)
                winners = set(values[counts == counts.max()])
                out[s + r, j] = next(l for l in labels if l in winners)
    return out[0] if single else out


# ---- reports ----------------------------------------------------------------

@dataclass
class EvalReport:
    model: str
    codebook_size: int
    horizon: int
    ks: list[int]
    sample_count: int
    # keys: "1".."xi" per horizon step and "all" pooled; inner keys are str(k)
    top_k_accuracy: dict = field(default_factory=dict)
    normalized_receive_power: dict | None = None
    excluded_steps: int = 0
    notes: list[str] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for metric in ("top_k_accuracy", "normalized_receive_power"):
            table = getattr(self, metric)
            if table is None:
                continue
            for h, per_k in table.items():
                for k, value in per_k.items():
                    out.append({
                        "horizon": h, "k": int(k), "metric": metric, "value": value,
                        "model": self.model, "codebook_size": self.codebook_size,
                    })
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def score_predictions(predictions, optima, powers, ks, model: str, codebook_size: int) -> EvalReport:
    """Build a report from ``(S, xi, max_k)`` top-k predictions."""
    predictions = np.asarray(predictions)
    optima = np.asarray(optima)
    xi = optima.shape[1]
    ks = [k for k in ks if k <= predictions.shape[2]]
    horizons = [str(h) for h in range(1, xi + 1)] + ["all"]
    report = EvalReport(model=model, codebook_size=codebook_size, horizon=xi, ks=ks, sample_count=len(optima))

    def hstep(h):
        return None if h == "all" else int(h)

    report.top_k_accuracy = {
        h: {str(k): topk_accuracy(predictions, optima, k, hstep(h)) for k in ks} for h in horizons
    }
    if powers is None:
        report.notes.append("normalized receive power unavailable: labels-only dataset")
    else:
        nrp, excluded = {}, 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for h in horizons:
                nrp[h] = {}
                for k in ks:
                    nrp[h][str(k)], ex = normalized_receive_power(
                        predictions, powers, optima, k, hstep(h), return_excluded=True)
                    if h == "all":
                        excluded = max(excluded, ex)
        report.normalized_receive_power = nrp
        report.excluded_steps = excluded
        if excluded:
            report.notes.append(f"{excluded} step(s) with zero optimal power excluded")
    return report


def evaluate_model(model, samples, i: int, xi: int, ks=(1, 2, 3, 4, 5), batch: int = 512) -> EvalReport:
    obs, optima, powers = stack_inputs(samples, i, xi, model.modality)
    kmax = min(max(ks), model.num_beams)
    preds = []
    for s in range(0, len(obs), batch):
        preds.append(predict_topk(model.forward(obs[s:s + batch], xi), kmax))
    predictions = np.concatenate(preds) if preds else np.empty((0, xi, kmax), dtype=np.int64)
    return score_predictions(predictions, optima, powers, ks, model.kind, model.num_beams)


def closed_loop_accuracy(model, sequences, i: int, recalibrate_every: int | None = None) -> np.ndarray:
    """Top-1 accuracy of a beam-sequence model fed its own predictions.

    Each sequence starts from its first ``i`` true optimal beams. After that
    every predicted future beam 1 replaces the measured beam in the input
    history; every ``recalibrate_every`` steps the history is reset to the
    true beams. Entry ``n`` of the result is the accuracy ``n + 1`` steps
    after the last calibration, pooled over sequences (NaN when no sequence
    reaches that far); with recalibration the result stops at that period.
    """
    if model.modality != "baseline":
        raise ValueError("closed-loop evaluation needs a beam-sequence model")
    if recalibrate_every is not None and recalibrate_every < 1:
        raise ValueError("recalibrate_every must be positive")
    longest = max(max((len(s) - i for s in sequences), default=0), 0)
    if recalibrate_every is not None:
        longest = min(longest, recalibrate_every)
    hits, counts = np.zeros(longest), np.zeros(longest)
    for seq in sequences:
        history = list(seq.beams[:i])
        since = 0
        for t in range(i, len(seq)):
            if recalibrate_every is not None and since == recalibrate_every:
                history[-i:] = seq.beams[t - i:t]
                since = 0
            pred = int(np.argmax(model.forward(np.array(history[-i:]), 1)[0]))
            hits[since] += pred == seq.beams[t]
            counts[since] += 1
            history.append(pred)
            since += 1
    with np.errstate(invalid="ignore"):
        return hits / counts


def evaluate_oracle(train_samples, eval_samples, i: int, xi: int, codebook_size: int, k_neighbors: int = 1) -> EvalReport:
    tr_obs, tr_targets, _ = stack_inputs(train_samples, i, xi, "vision")
    obs, optima, powers = stack_inputs(eval_samples, i, xi, "vision")
    pred = knn_oracle_predict(tr_obs, tr_targets, obs, k_neighbors)[..., None]
    return score_predictions(pred, optima, powers, [1], "knn_oracle", codebook_size)


def write_report_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerows(r.rows() if isinstance(r, EvalReport) else [r])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
        return list(reader)


def write_report_json(reports, path, extra: dict | None = None) -> None:
    doc = {"reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
