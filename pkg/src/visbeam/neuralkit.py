"""Small hand-differentiated building blocks on numpy arrays.

Every layer is a pair of functions: a forward that returns its output (and
a cache when backward needs intermediates) and a backward that returns
gradients. Inputs may carry a leading batch axis. Arrays are float64
throughout so finite-difference checks are meaningful.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    """Unreadable, truncated or mismatched parameter file."""


class Parameter:
    """A named trainable array with its gradient and optimizer moments."""

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---- linear -----------------------------------------------------------------

def linear_forward(W, b, x):
    W, x = np.asarray(W), np.asarray(x)
    if x.shape[-1] != W.shape[1] or np.shape(b) != (W.shape[0],):
        raise ShapeError(f"linear: W {W.shape}, b {np.shape(b)}, x {x.shape}")
    return x @ W.T + b


def linear_backward(W, x, dy):
    """Returns (dW, db, dx) for ``y = x W^T + b``."""
    x2 = np.asarray(x).reshape(-1, W.shape[1])
    dy2 = np.asarray(dy).reshape(-1, W.shape[0])
    dW = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = (dy2 @ W).reshape(np.shape(x))
    return dW, db, dx


# ---- embedding --------------------------------------------------------------

def _check_indices(table, index):
    index = np.asarray(index)
    if not np.issubdtype(index.dtype, np.integer):
        raise ShapeError("embedding indices must be integers")
    if np.any(index < 0) or np.any(index >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    return index


def embedding_lookup(table, index):
    index = _check_indices(table, index)
    return table[index]


def embedding_backward(table_shape, index, dy):
    """Scatter-add upstream gradients into the looked-up rows."""
    grad = np.zeros(table_shape)
    np.add.at(grad, np.asarray(index), dy)
    return grad


# ---- GRU --------------------------------------------------------------------

def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruCellParams:
    """Gate blocks are stacked in the order update, reset, candidate.

    ``input_weights`` is ``3H x in``, ``recurrent_weights`` is ``3H x H``
    and ``biases`` is ``3H``.
    """

    input_weights: Parameter
    recurrent_weights: Parameter
    biases: Parameter

    def __post_init__(self):
        H3, n_in = self.input_weights.shape
        if H3 % 3 or self.recurrent_weights.shape != (H3, H3 // 3) or self.biases.shape != (H3,):
            raise ShapeError("inconsistent GRU parameter shapes")

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[1]

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.input_weights, self.recurrent_weights, self.biases]

    @classmethod
    def init(cls, prefix: str, input_size: int, hidden_size: int = 64, rng=None) -> "GruCellParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        H = hidden_size
        return cls(
            Parameter(f"{prefix}.input_weights", uniform_init(rng, (3 * H, input_size), input_size)),
            Parameter(f"{prefix}.recurrent_weights", uniform_init(rng, (3 * H, H), H)),
            Parameter(f"{prefix}.biases", uniform_init(rng, (3 * H,), H)),
        )


def gru_cell_forward(x, h_prev, p: GruCellParams):
    """One GRU step.

    z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
    n = tanh(Wn x + Un (r * h) + bn), h_new = (1 - z) * h + z * n.
    Returns ``(h_new, cache)``.
    """
    W, U, b = p.input_weights.value, p.recurrent_weights.value, p.biases.value
    H = p.hidden_size
    if np.shape(x)[-1] != W.shape[1] or np.shape(h_prev)[-1] != H:
        raise ShapeError(f"gru: x {np.shape(x)}, h {np.shape(h_prev)}, expected in={W.shape[1]}, H={H}")
    gx = x @ W.T + b
    gh = h_prev @ U[:2 * H].T
    z = sigmoid(gx[..., :H] + gh[..., :H])
    r = sigmoid(gx[..., H:2 * H] + gh[..., H:])
    rh = r * h_prev
    n = np.tanh(gx[..., 2 * H:] + rh @ U[2 * H:].T)
    h_new = (1 - z) * h_prev + z * n
    return h_new, (x, h_prev, z, r, rh, n)


def gru_cell_backward(dh_new, cache, p: GruCellParams, accumulate: bool = True):
    """Backprop one step; returns ``(dx, dh_prev)``.

    Parameter gradients are added to ``p``'s ``.grad`` arrays when
    ``accumulate`` is set, otherwise returned as a third element.
    """
    x, h_prev, z, r, rh, n = cache
    U = p.recurrent_weights.value
    H = p.hidden_size
    dn = dh_new * z
    dz = dh_new * (n - h_prev)
    dh = dh_new * (1 - z)
    dn_pre = dn * (1 - n * n)
    drh = dn_pre @ U[2 * H:]
    dr = drh * h_prev
    dh = dh + drh * r
    dz_pre = dz * z * (1 - z)
    dr_pre = dr * r * (1 - r)
    dgates = np.concatenate([dz_pre, dr_pre, dn_pre], axis=-1)
    dh = dh + np.concatenate([dz_pre, dr_pre], axis=-1) @ U[:2 * H]
    dx = dgates @ p.input_weights.value

    x2 = np.reshape(x, (-1, x.shape[-1]))
    dg2 = dgates.reshape(-1, 3 * H)
    dW = dg2.T @ x2
    db = dg2.sum(axis=0)
    dU = np.empty_like(U)
    dU[:2 * H] = dg2[:, :2 * H].T @ np.reshape(h_prev, (-1, H))
    dU[2 * H:] = dg2[:, 2 * H:].T @ np.reshape(rh, (-1, H))
    if accumulate:
        p.input_weights.grad += dW
        p.recurrent_weights.grad += dU
        p.biases.grad += db
        return dx, dh
    return dx, dh, (dW, dU, db)


# ---- classifier head --------------------------------------------------------

def softmax(logits, axis: int = -1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(scores, dscores, axis: int = -1):
    return scores * (dscores - np.sum(dscores * scores, axis=axis, keepdims=True))


def _pick(scores, targets):
    targets = np.asarray(targets)
    if scores.shape[:-1] != targets.shape:
        raise ShapeError(f"scores {scores.shape} do not match targets {targets.shape}")
    return np.take_along_axis(scores, targets[..., None], axis=-1)[..., 0]


def cross_entropy(scores, targets) -> float:
    """Mean negative natural log of the target score over all steps (and samples)."""
    scores = np.asarray(scores, dtype=np.float64)
    picked = _pick(scores, targets)
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))


def cross_entropy_backward(scores, targets):
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    picked = _pick(scores, targets)
    count = targets.size
    grad = np.zeros_like(scores)
    live = (picked > LOG_FLOOR).astype(float)
    np.put_along_axis(grad, targets[..., None], (-live / (np.maximum(picked, LOG_FLOOR) * count))[..., None], axis=-1)
    return grad


def softmax_cross_entropy_backward(scores, targets):
    """Fused gradient of the mean cross-entropy with respect to the logits."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    grad = scores.copy()
    np.put_along_axis(grad, targets[..., None], _pick(scores, targets)[..., None] - 1.0, axis=-1)
    return grad / targets.size


# ---- optimizer --------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decay rates must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def adam_step(params, cfg: OptimizerConfig, step_count: int) -> None:
    """In-place Adam update; ``step_count`` starts at 1."""
    c1 = 1 - cfg.beta1 ** step_count
    c2 = 1 - cfg.beta2 ** step_count
    for p in params:
        p.m *= cfg.beta1
        p.m += (1 - cfg.beta1) * p.grad
        p.v *= cfg.beta2
        p.v += (1 - cfg.beta2) * p.grad * p.grad
        p.value -= cfg.learning_rate * (p.m / c1) / (np.sqrt(p.v / c2) + cfg.epsilon)


# ---- gradient oracle --------------------------------------------------------

def finite_difference_check(loss_fn, params, epsilon: float = 1e-6, floor: float = 1e-7) -> float:
    """Worst relative error between ``p.grad`` and central differences.

    ``loss_fn()`` must recompute the loss from the current parameter values;
    the analytic gradients must already sit in each ``p.grad``. The relative
    error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = loss_fn()
            flat[k] = orig - epsilon
            down = loss_fn()
            flat[k] = orig
            numeric = (up - down) / (2 * epsilon)
            a = analytic[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# ---- checkpoint file --------------------------------------------------------

MAGIC = b"VBEAMCKP"
VERSION = 1
_HEADER = struct.Struct("<8sII")


def save_parameters(path, params, meta: dict | None = None) -> None:
    """Write magic, version, a JSON manifest, then float64 LE values in manifest order."""
    manifest = {
        "meta": meta or {},
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_parameters(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns ``(manifest, {name: array})``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = _HEADER.size + mlen
    if len(data) < start:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    arrays = {}
    offset = start
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return manifest, arrays
