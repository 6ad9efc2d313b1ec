"""Teacher-forced mini-batch training, checkpoints and loss curves."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DivergenceError, FormatError, InvalidInputError
from .model import BOS_ID, EOS_ID, PAD_ID, FeatureScaler, ModelDims, ToyModelParams, caption_loss, forward, init_params, loss_and_grad
from .optim import AdamWState, adamw_step
from .vocab import Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "semiq-toy-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 15
    batch_size: int = 96
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")


@dataclass
class Example:
    """One training pair: standardised features, prompt ids, caption ids (no BOS/EOS)."""

    features: np.ndarray
    prompt_ids: list
    caption_ids: list


def collate(examples) -> tuple:
    """Pad a list of :class:`Example` into ``(features, prompts, caption_in, caption_out)``.

    ``caption_in`` is ``<bos> c_1..c_l`` and ``caption_out`` is ``c_1..c_l <eos>``.
    """
    B = len(examples)
    lp = max(len(e.prompt_ids) for e in examples)
    lc = max(len(e.caption_ids) for e in examples) + 1
    feats = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
    prompts = np.full((B, max(lp, 1)), PAD_ID, dtype=np.int64)
    cin = np.full((B, lc), PAD_ID, dtype=np.int64)
    cout = np.full((B, lc), PAD_ID, dtype=np.int64)
    for i, e in enumerate(examples):
        prompts[i, : len(e.prompt_ids)] = e.prompt_ids
        c = list(e.caption_ids)
        cin[i, : len(c) + 1] = [BOS_ID] + c
        cout[i, : len(c) + 1] = c + [EOS_ID]
    return feats, prompts, cin, cout


def dataset_loss(params: ToyModelParams, examples, batch_size=256) -> float:
    """Mean per-example summed caption loss."""
    if not examples:
        return float("nan")
    total = 0.0
    for i in range(0, len(examples), batch_size):
        f, p, cin, cout = collate(examples[i : i + batch_size])
        total += caption_loss(forward(params, f, p, cin), cout)
    return total / len(examples)


@dataclass
class TrainResult:
    params: ToyModelParams
    best_epoch: int
    curve: list = field(default_factory=list)  # (epoch, train_loss, val_loss); epoch 0 is before training
    final_params: ToyModelParams | None = None

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for row in self.curve:
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def train(train_set, val_set, dims: ModelDims, config: TrainConfig, params: ToyModelParams | None = None) -> TrainResult:
    """Train with AdamW on summed caption loss; keep the lowest-validation-loss weights."""
    if not train_set:
        raise InvalidInputError("empty training set")
    rng = np.random.default_rng([config.seed, 1])
    params = init_params(dims, seed=config.seed) if params is None else params.copy()
    state = AdamWState.zeros_like(params.arrays)

    val0 = dataset_loss(params, val_set)
    curve = [(0, dataset_loss(params, train_set), val0)]
    best, best_epoch, best_val = params.copy(), 0, val0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        running = 0.0
        for i in range(0, len(order), config.batch_size):
            batch = collate([train_set[j] for j in order[i : i + config.batch_size]])
            try:
                loss, grads = loss_and_grad(params, batch)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", checkpoint=best) from exc
            if not math.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: non-finite loss", checkpoint=best)
            running += loss
            adamw_step(params.arrays, grads, state, config.learning_rate, config.weight_decay)
        val = dataset_loss(params, val_set)
        curve.append((epoch, running / len(train_set), val))
        log.info("epoch %d train %.4f val %.4f", epoch, running / len(train_set), val)
        if val < best_val:
            best, best_epoch, best_val = params.copy(), epoch, val
    return TrainResult(best, best_epoch, curve, params)


# ------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: ToyModelParams
    vocab: Vocabulary
    scaler: FeatureScaler | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write an ``.npz`` archive.

    Layout: ``header`` is a JSON string with ``format``, ``version``, ``dims``,
    ``vocab`` and ``meta``; every parameter is stored row-major as
    ``param/<name>``; the feature scaler as ``scaler/mean`` and ``scaler/std``.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": asdict(ckpt.params.dims),
        "vocab": ckpt.vocab.tokens,
        "meta": ckpt.meta,
    }
    arrays = {f"param/{k}": np.ascontiguousarray(v) for k, v in ckpt.params.arrays.items()}
    if ckpt.scaler is not None:
        arrays["scaler/mean"] = ckpt.scaler.mean
        arrays["scaler/std"] = ckpt.scaler.std
    path = Path(path)
    tmp = path.with_name(path.name + ".partial.npz")
    np.savez(tmp, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        try:
            header = json.loads(str(z["header"]))
        except KeyError:
            raise FormatError(f"{path}: missing checkpoint header") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: not a semiq checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {k[len("param/") :]: z[k].copy() for k in z.files if k.startswith("param/")}
        scaler = FeatureScaler(z["scaler/mean"].copy(), z["scaler/std"].copy()) if "scaler/mean" in z.files else None
    params = ToyModelParams(ModelDims(**header["dims"]), arrays)
    return Checkpoint(params, Vocabulary(header["vocab"]), scaler, header.get("meta", {}))
