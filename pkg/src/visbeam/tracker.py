"""Encoder-decoder beam trackers and their training loop.

Both variants share the wiring: embed each observation, run it through
the encoder GRU from a zero state, hand the final state to the decoder GRU,
feed the decoder ``xi`` zero vectors, and classify every decoder state into
beam scores. They differ only in the embedding: a linear map of the
bounding box (vision) or a lookup table over beam indices (baseline).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import neuralkit as nk
from .datasets import WINDOW_SIZE, stack_inputs


class ManifestError(nk.CheckpointError):
    pass


class EncoderDecoderTracker:
    kind = ""

    def __init__(self, num_beams: int = 64, embed_size: int = 64, hidden_size: int = 64, seed: int = 0):
        self.num_beams = num_beams
        self.embed_size = embed_size
        self.hidden_size = hidden_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._init_embedding(rng)
        self.encoder = nk.GruCellParams.init("encoder", embed_size, hidden_size, rng)
        self.decoder = nk.GruCellParams.init("decoder", embed_size, hidden_size, rng)
        self.classifier_weights = nk.Parameter(
            "classifier.weights", nk.uniform_init(rng, (num_beams, hidden_size), hidden_size))
        self.classifier_bias = nk.Parameter(
            "classifier.bias", nk.uniform_init(rng, (num_beams,), hidden_size))

    # subclasses provide the front end
    def _init_embedding(self, rng): raise NotImplementedError
    def _embedding_params(self) -> list[nk.Parameter]: raise NotImplementedError
    def _embed(self, obs): raise NotImplementedError
    def _embed_backward(self, obs, de): raise NotImplementedError
    def _check_observation(self, obs): raise NotImplementedError

    def parameters(self) -> list[nk.Parameter]:
        return [
            *self._embedding_params(),
            *self.encoder.parameters(),
            *self.decoder.parameters(),
            self.classifier_weights,
            self.classifier_bias,
        ]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "num_beams": self.num_beams,
            "embed_size": self.embed_size,
            "hidden_size": self.hidden_size,
            "seed": self.seed,
        }

    def forward(self, obs, xi: int, keep_cache: bool = False):
        """Scores of shape ``(B, xi, |F|)`` for a batch of observation windows.

        An unbatched window gives ``(xi, |F|)``.
        """
        if xi < 1:
            raise ValueError("horizon must be at least 1")
        obs, single = self._check_observation(obs)
        B, i = obs.shape[0], obs.shape[1]
        if i < 1:
            raise ValueError("observation window must hold at least one step")
        emb = self._embed(obs)  # B x i x E
        h = np.zeros((B, self.hidden_size))
        enc_caches, dec_caches, states = [], [], []
        for t in range(i):
            h, c = nk.gru_cell_forward(emb[:, t], h, self.encoder)
            enc_caches.append(c)
        pad = np.zeros((B, self.embed_size))
        for _ in range(xi):
            h, c = nk.gru_cell_forward(pad, h, self.decoder)
            dec_caches.append(c)
            states.append(h)
        states = np.stack(states, axis=1)  # B x xi x H
        logits = nk.linear_forward(self.classifier_weights.value, self.classifier_bias.value, states)
        scores = nk.softmax(logits)
        out = scores[0] if single else scores
        if keep_cache:
            return out, (obs, enc_caches, dec_caches, states)
        return out

    def backward(self, cache, dlogits) -> None:
        """Accumulate parameter gradients from ``dL/dlogits`` (``B x xi x |F|``)."""
        obs, enc_caches, dec_caches, states = cache
        dW, db, dstates = nk.linear_backward(self.classifier_weights.value, states, dlogits)
        self.classifier_weights.grad += dW
        self.classifier_bias.grad += db
        dh = np.zeros_like(states[:, 0])
        for j in reversed(range(len(dec_caches))):
            dh = dh + dstates[:, j]
            _, dh = nk.gru_cell_backward(dh, dec_caches[j], self.decoder)
        de = np.empty((obs.shape[0], len(enc_caches), self.embed_size))
        for t in reversed(range(len(enc_caches))):
            de[:, t], dh = nk.gru_cell_backward(dh, enc_caches[t], self.encoder)
        self._embed_backward(obs, de)

    def loss_and_grad(self, obs, targets) -> float:
        """Cross-entropy over all decoder steps; gradients land in ``.grad``."""
        targets = np.asarray(targets)
        scores, cache = self.forward(obs, targets.shape[-1], keep_cache=True)
        if scores.ndim == 2:
            scores, targets = scores[None], targets[None]
        loss = nk.cross_entropy(scores, targets)
        self.backward(cache, nk.softmax_cross_entropy_backward(scores, targets))
        return loss

    def loss(self, obs, targets) -> float:
        targets = np.asarray(targets)
        return nk.cross_entropy(self.forward(obs, targets.shape[-1]), targets)


class VisionTracker(EncoderDecoderTracker):
    kind = "vision"
    modality = "vision"

    def _init_embedding(self, rng):
        self.embedding_weights = nk.Parameter(
            "embedding.weights", nk.uniform_init(rng, (self.embed_size, 4), 4))
        self.embedding_bias = nk.Parameter(
            "embedding.bias", nk.uniform_init(rng, (self.embed_size,), 4))

    def _embedding_params(self):
        return [self.embedding_weights, self.embedding_bias]

    def _check_observation(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 2
        if single:
            obs = obs[None]
        if obs.ndim != 3 or obs.shape[-1] != 4:
            raise nk.ShapeError(f"vision observations must be (B, i, 4), got {obs.shape}")
        return obs, single

    def _embed(self, obs):
        return nk.linear_forward(self.embedding_weights.value, self.embedding_bias.value, obs)

    def _embed_backward(self, obs, de):
        dW, db, _ = nk.linear_backward(self.embedding_weights.value, obs, de)
        self.embedding_weights.grad += dW
        self.embedding_bias.grad += db


class BaselineTracker(EncoderDecoderTracker):
    kind = "baseline"
    modality = "baseline"

    def _init_embedding(self, rng):
        # a lookup is a one-hot product, so fan_in is 1
        self.embedding_table = nk.Parameter(
            "embedding.table", nk.uniform_init(rng, (self.num_beams, self.embed_size), 1))

    def _embedding_params(self):
        return [self.embedding_table]

    def _check_observation(self, obs):
        obs = np.asarray(obs)
        single = obs.ndim == 1
        if single:
            obs = obs[None]
        if obs.ndim != 2:
            raise nk.ShapeError(f"baseline observations must be (B, i), got {obs.shape}")
        if not np.issubdtype(obs.dtype, np.integer):
            if not np.all(np.mod(obs, 1) == 0):
                raise nk.ShapeError("beam indices must be integers")
            obs = obs.astype(np.int64)
        if np.any(obs < 0) or np.any(obs >= self.num_beams):
            raise IndexError(f"beam index outside [0, {self.num_beams})")
        return obs, single

    def _embed(self, obs):
        return nk.embedding_lookup(self.embedding_table.value, obs)

    def _embed_backward(self, obs, de):
        self.embedding_table.grad += nk.embedding_backward(self.embedding_table.shape, obs, de)


MODELS = {"vision": VisionTracker, "baseline": BaselineTracker}


def make_model(kind: str, **kwargs) -> EncoderDecoderTracker:
    try:
        return MODELS[kind](**kwargs)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


def vision_forward(model: VisionTracker, observation, xi: int):
    return model.forward(observation, xi)


def baseline_forward(model: BaselineTracker, observation, xi: int):
    return model.forward(observation, xi)


def predict_topk(scores, k: int):
    """Indices of the ``k`` largest scores per row, best first, ties to the lower index."""
    scores = np.asarray(scores)
    if not 1 <= k <= scores.shape[-1]:
        raise ValueError(f"k={k} outside [1, {scores.shape[-1]}]")
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


# ---- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    optimizer: nk.OptimizerConfig = field(default_factory=nk.OptimizerConfig)
    i: int = 8
    xi: int = 5
    shuffle_seed: int = 0
    window: int = WINDOW_SIZE
    lr_decay: float = 1.0  # learning rate multiplier applied after every epoch

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = nk.OptimizerConfig(**self.optimizer)
        if self.epochs < 1 or self.batch_size < 1 or self.i < 1 or self.xi < 1:
            raise ValueError("epochs, batch_size, i and xi must be positive")
        if self.i + self.xi > self.window:
            raise ValueError(f"i + xi = {self.i + self.xi} exceeds window {self.window}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown train config key(s): {', '.join(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    initial_train_loss: float
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_top1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    steps_per_sample: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _batched_loss(model, obs, targets, batch: int = 512) -> float:
    total = 0.0
    for s in range(0, len(obs), batch):
        total += model.loss(obs[s:s + batch], targets[s:s + batch]) * len(obs[s:s + batch])
    return total / len(obs)


def _top1(model, obs, targets, batch: int = 512) -> float:
    hits = 0
    for s in range(0, len(obs), batch):
        scores = model.forward(obs[s:s + batch], targets.shape[-1])
        hits += int(np.sum(np.argmax(scores[:, 0], axis=-1) == targets[s:s + batch, 0]))
    return hits / len(obs)


def train(model: EncoderDecoderTracker, train_samples, val_samples, cfg: TrainConfig) -> TrainReport:
    """Minibatch Adam on the step-averaged cross-entropy.

    The model ends with the parameters of the epoch with the lowest
    validation loss (training loss when no validation samples are given).
    """
    if not train_samples:
        raise ValueError("empty training set")
    x_tr, y_tr, _ = stack_inputs(train_samples, cfg.i, cfg.xi, model.modality)
    has_val = bool(val_samples)
    if has_val:
        x_va, y_va, _ = stack_inputs(val_samples, cfg.i, cfg.xi, model.modality)
    params = model.parameters()
    report = TrainReport(initial_train_loss=_batched_loss(model, x_tr, y_tr), steps_per_sample=y_tr.shape[1])
    best = np.inf
    best_values = [p.value.copy() for p in params]
    step = 0
    for epoch in range(cfg.epochs):
        opt = replace(cfg.optimizer, learning_rate=cfg.optimizer.learning_rate * cfg.lr_decay ** epoch)
        order = np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(len(x_tr))
        batch_losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            model.zero_grad()
            batch_losses.append(model.loss_and_grad(x_tr[idx], y_tr[idx]) * len(idx))
            step += 1
            nk.adam_step(params, opt, step)
        report.train_loss.append(float(np.sum(batch_losses) / len(order)))
        if has_val:
            vloss = _batched_loss(model, x_va, y_va)
            report.val_loss.append(vloss)
            report.val_top1.append(_top1(model, x_va, y_va))
        else:
            vloss = report.train_loss[-1]
        if vloss < best:
            best = vloss
            report.best_epoch = epoch
            best_values = [p.value.copy() for p in params]
    for p, v in zip(params, best_values):
        p.value[...] = v
    return report


# ---- checkpoints ------------------------------------------------------------

def save_checkpoint(model: EncoderDecoderTracker, path) -> None:
    nk.save_parameters(path, model.parameters(), meta=model.config())


def load_checkpoint(path, model: EncoderDecoderTracker | None = None) -> EncoderDecoderTracker:
    """Load into ``model`` (manifest must match) or into a freshly built one."""
    manifest, arrays = nk.load_parameters(path)
    meta = manifest.get("meta", {})
    if model is None:
        cfg = dict(meta)
        kind = cfg.pop("kind", None)
        if kind not in MODELS:
            raise ManifestError(f"{path}: unknown model kind {kind!r}")
        model = make_model(kind, **cfg)
    expected = [{"name": p.name, "shape": list(p.shape)} for p in model.parameters()]
    if meta.get("kind") != model.kind or manifest["params"] != expected:
        raise ManifestError(
            f"{path}: checkpoint holds a {meta.get('kind')!r} model, "
            f"incompatible with {model.kind!r} {model.config()}"
        )
    for p in model.parameters():
        p.value[...] = arrays[p.name]
    return model
