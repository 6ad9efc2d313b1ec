"""Glue between labelled records and the toy captioner.

Records become ``(features, prompt, caption)`` training examples; a trained
checkpoint turns records back into ``{id, caption, value}`` predictions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .audio import PIPELINE_RATE, AudioBuffer, fix_length, mel_spectrogram, read_wav, resample
from .errors import InvalidInputError, NoDataError, ParseError
from .labelcodec import DEFAULT_TEMPLATES, Templates, parse_caption, render
from .simulate import ExampleRecord
from .toymodel.model import FeatureScaler, ModelDims, encode_audio, generate
from .toymodel.train import Checkpoint, Example, TrainConfig, TrainResult, train
from .toymodel.vocab import Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = PIPELINE_RATE
    seconds: float | None = None  # None keeps the native length
    n_mels: int = 64


def buffer_features(buf: AudioBuffer, fc: FeatureConfig = FeatureConfig()) -> np.ndarray:
    if buf.sample_rate != fc.sample_rate:
        buf = resample(buf, fc.sample_rate)
    if fc.seconds is not None:
        buf = fix_length(buf, fc.seconds, policy="head")
    return encode_audio(mel_spectrogram(buf, n_mels=fc.n_mels))


def record_features(records, fc: FeatureConfig = FeatureConfig(), loader=read_wav) -> np.ndarray:
    """Feature matrix ``[N, 2 * n_mels]`` for ``records`` (loaded from ``audio_path``)."""
    return np.stack([buffer_features(loader(r.audio_path), fc) for r in records]) if records else np.zeros((0, 2 * fc.n_mels))


def _as_records(rows):
    return [r if isinstance(r, ExampleRecord) else ExampleRecord.from_dict(r) for r in rows]


def task_of(records) -> str:
    tasks = {r.task for r in records}
    if len(tasks) != 1:
        raise InvalidInputError(f"records mix tasks {sorted(tasks)}")
    return tasks.pop()


def prompt_ids(vocab: Vocabulary, task, class_name, fixed_prompt=False, templates: Templates = DEFAULT_TEMPLATES) -> list:
    cls = templates.fixed_class if fixed_prompt else class_name
    return vocab.tokenize(templates.prompt(task).format(class_name=cls))


def make_examples(records, features, vocab, scaler, strategy, fixed_prompt=False, templates=DEFAULT_TEMPLATES) -> list:
    out = []
    for r, f in zip(records, features):
        pair = render(r.task, r.class_name, r.target, strategy, fixed_prompt=fixed_prompt, templates=templates)
        out.append(Example(scaler(f), vocab.tokenize(pair.prompt), vocab.tokenize(pair.label)))
    return out


def default_dims(feat_dim, vocab_size, **overrides) -> ModelDims:
    return ModelDims(feat_dim=feat_dim, vocab_size=vocab_size, **overrides)


def train_toy(
    records,
    features,
    strategy="numeric",
    fixed_prompt=False,
    dims: dict | None = None,
    config: TrainConfig = TrainConfig(),
    templates: Templates = DEFAULT_TEMPLATES,
    feature_config: FeatureConfig | None = None,
) -> tuple:
    """Train on the ``train`` split, select on ``val``. Returns ``(Checkpoint, TrainResult)``.

    ``features`` is aligned with ``records`` (see :func:`record_features`).
    The scaler is fitted on training features only.
    """
    records = _as_records(records)
    features = np.asarray(features, dtype=np.float64)
    if len(records) != len(features):
        raise InvalidInputError("records and features differ in length")
    task = task_of(records)
    tr = [i for i, r in enumerate(records) if r.split == "train"]
    va = [i for i, r in enumerate(records) if r.split == "val"]
    if not tr:
        raise NoDataError("no training records")
    vocab = Vocabulary.build(sorted({r.class_name for r in records}), templates)
    scaler = FeatureScaler.fit(features[tr])
    pick = lambda idx: make_examples([records[i] for i in idx], features[idx], vocab, scaler, strategy, fixed_prompt, templates)
    train_set, val_set = pick(tr), pick(va)
    if not val_set:
        log.warning("no validation records; keeping the final epoch")
    longest = max(len(e.caption_ids) for e in train_set + val_set) + 1
    dims = dict(dims or {})
    dims.setdefault("max_len", max(16, longest))
    md = default_dims(features.shape[1], len(vocab), **dims)
    result: TrainResult = train(train_set, val_set, md, config)
    params = result.params if val_set else result.final_params
    meta = {
        "task": task,
        "strategy": strategy,
        "fixed_prompt": bool(fixed_prompt),
        "best_epoch": result.best_epoch,
        "templates": asdict(templates),
        "train_config": asdict(config),
    }
    if feature_config is not None:
        meta["features"] = asdict(feature_config)
    return Checkpoint(params, vocab, scaler, meta), result


def predict(ckpt: Checkpoint, records, features, fixed_prompt=None, batch_size=256) -> list:
    """Greedy captions parsed back to values: ``[{id, caption, value}]``.

    ``value`` is ``None`` when the caption does not parse. ``fixed_prompt``
    defaults to the setting the checkpoint was trained with.
    """
    records = _as_records(records)
    meta = ckpt.meta
    task, strategy = meta.get("task", "snr"), meta.get("strategy", "numeric")
    templates = Templates(**meta["templates"]) if "templates" in meta else DEFAULT_TEMPLATES
    fixed = meta.get("fixed_prompt", False) if fixed_prompt is None else fixed_prompt
    feats = np.asarray(features, dtype=np.float64)
    if ckpt.scaler is not None:
        feats = ckpt.scaler(feats)
    out = []
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        prompts = [prompt_ids(ckpt.vocab, task, r.class_name, fixed, templates) for r in chunk]
        width = max(len(p) for p in prompts)
        padded = np.array([p + [Vocabulary.pad_id] * (width - len(p)) for p in prompts], dtype=np.int64)
        caps = generate(ckpt.params, ckpt.vocab, feats[i : i + len(chunk)], padded)
        for r, cap in zip(chunk, caps):
            try:
                value = parse_caption(cap, task, strategy)
                value = value if math.isfinite(value) else None
            except ParseError:
                value = None
            out.append({"id": r.id, "caption": cap, "value": value})
    return out
