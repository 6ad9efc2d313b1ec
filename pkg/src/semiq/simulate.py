"""Labelled dataset simulation: SNR mixtures and pseudo-labelled quality pairs."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import augment
from .audio import PIPELINE_RATE, AudioBuffer, fix_length, read_wav, resample, rms, write_wav
from .errors import DegenerateInputError, InfeasibleError, InvalidInputError, SemiqError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_SNR_RANGE = (-20.0, 20.0)
ESC50_FOLD_MAP = {"train": [1, 2, 3], "val": [4], "test": [5]}
ESC50_COUNTS = {"train": 72000, "val": 4000, "test": 4000}
FMA_COUNTS = {"train": 2000, "val": 500}
QUALITY_SECONDS = 7.0
SNR_SECONDS = 5.0


@dataclass
class ExampleRecord:
    id: str
    audio_path: str
    class_name: str
    split: str
    task: str
    target: float
    aux_path: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_name:
            raise InvalidInputError(f"record {self.id}: empty class_name")
        if self.split not in SPLITS:
            raise InvalidInputError(f"record {self.id}: unknown split {self.split!r}")
        if self.task not in ("mos", "snr"):
            raise InvalidInputError(f"record {self.id}: unknown task {self.task!r}")
        if self.task == "mos" and not 1.0 <= self.target <= 5.0:
            raise InvalidInputError(f"record {self.id}: MOS target {self.target} outside [1, 5]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExampleRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    class_name: str
    fold: int | None = None


@dataclass(frozen=True)
class MixturePlan:
    id: str
    split: str
    target_path: str
    interferer_path: str
    target_class: str
    interferer_class: str
    snr_db: float
    seed: int

    def __post_init__(self):
        if self.target_class == self.interferer_class:
            raise InvalidInputError(f"plan {self.id}: target and interferer share class {self.target_class!r}")


# ---------------------------------------------------------------- manifests


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(path, rows) -> None:
    """Write rows atomically (temp file + rename), one sorted-key JSON object per line."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w") as fh:
        for row in rows:
            if hasattr(row, "to_dict"):
                row = row.to_dict()
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    tmp.replace(path)


def load_corpus(path_or_rows, root=None) -> list:
    """Corpus manifest rows ``{path, class, fold}``; relative paths resolve against ``root``."""
    rows = read_jsonl(path_or_rows) if isinstance(path_or_rows, (str, Path)) else list(path_or_rows)
    if root is None and isinstance(path_or_rows, (str, Path)):
        root = Path(path_or_rows).parent
    out = []
    for r in rows:
        p = Path(r["path"])
        if root is not None and not p.is_absolute():
            p = Path(root) / p
        out.append(CorpusEntry(str(p), str(r.get("class", r.get("class_name", ""))), r.get("fold")))
    return out


# ------------------------------------------------------------------ mixing


class MixResult(NamedTuple):
    mixture: AudioBuffer
    gain: float
    scale: float
    target: AudioBuffer
    interferer: AudioBuffer


def mix_at_snr(target: AudioBuffer, interferer: AudioBuffer, snr_db: float) -> MixResult:
    """Scale ``interferer`` so target-to-interferer RMS ratio is ``snr_db``, then add.

    ``gain`` is the interferer gain before any peak normalisation; ``scale``
    (<= 1) is the joint factor applied to both components if the sum would
    clip. ``target`` and ``interferer`` in the result are the components as
    they appear in the mixture.
    """
    if target.sample_rate != interferer.sample_rate or len(target) != len(interferer):
        raise InvalidInputError("target and interferer must share rate and length")
    rt, ri = rms(target), rms(interferer)
    if rt == 0.0 or ri == 0.0:
        raise DegenerateInputError("cannot mix a silent signal at a finite SNR")
    gain = rt / (ri * 10.0 ** (snr_db / 20.0))
    s = target.samples
    n = gain * interferer.samples
    mix = s + n
    peak = float(np.max(np.abs(mix)))
    scale = 1.0 if peak <= 1.0 else 1.0 / peak
    if scale != 1.0:
        s, n, mix = s * scale, n * scale, mix * scale
    rate = target.sample_rate
    return MixResult(AudioBuffer(np.clip(mix, -1.0, 1.0), rate), gain, scale, AudioBuffer(s, rate), AudioBuffer(n, rate))


def measured_snr(result: MixResult) -> float:
    return 20.0 * math.log10(rms(result.target) / rms(result.interferer))


# ------------------------------------------------------------ SNR planning


def plan_snr_dataset(manifest, fold_map=None, counts=None, snr_range=DEFAULT_SNR_RANGE, seed=0) -> list:
    """Draw mixture plans per split.

    Each plan picks two distinct classes uniformly among those present in the
    split's folds, one file per class uniformly, and an SNR uniform on
    ``snr_range``. Splits are seeded independently so changing one split's
    count leaves the others untouched.
    """
    fold_map = ESC50_FOLD_MAP if fold_map is None else fold_map
    counts = ESC50_COUNTS if counts is None else counts
    lo, hi = snr_range
    if not lo < hi:
        raise InvalidInputError(f"snr_range must satisfy lo < hi, got {snr_range}")
    entries = [e if isinstance(e, CorpusEntry) else CorpusEntry(e["path"], e["class"], e.get("fold")) for e in manifest]
    present = {e.fold for e in entries}
    plans = []
    for split_idx, split in enumerate(SPLITS):
        if split not in counts:
            continue
        folds = set(fold_map[split])
        missing = folds - present
        if missing:
            raise InvalidInputError(f"folds {sorted(missing)} for split {split!r} not in manifest")
        by_class = {}
        for e in entries:
            if e.fold in folds:
                by_class.setdefault(e.class_name, []).append(e.path)
        classes = sorted(by_class)
        if len(classes) < 2:
            raise InfeasibleError(f"split {split!r} has {len(classes)} class(es); need at least 2")
        files = [sorted(by_class[c]) for c in classes]
        sizes = np.array([len(f) for f in files])

        n = int(counts[split])
        rng = np.random.default_rng([int(seed), split_idx])
        ci = rng.integers(0, len(classes), n)
        cj = rng.integers(0, len(classes) - 1, n)
        cj = cj + (cj >= ci)
        fi = (rng.random(n) * sizes[ci]).astype(np.int64)
        fj = (rng.random(n) * sizes[cj]).astype(np.int64)
        snr = rng.uniform(lo, hi, n)
        seeds = rng.integers(0, 2**31 - 1, n)
        for k in range(n):
            a, b = ci[k], cj[k]
            plans.append(
                MixturePlan(
                    id=f"{split}-{k:06d}",
                    split=split,
                    target_path=files[a][fi[k]],
                    interferer_path=files[b][fj[k]],
                    target_class=classes[a],
                    interferer_class=classes[b],
                    snr_db=float(snr[k]),
                    seed=int(seeds[k]),
                )
            )
    return plans


def _shape(buf: AudioBuffer, rate, seconds, seed):
    if buf.sample_rate != rate:
        buf = resample(buf, rate)
    return fix_length(buf, seconds, policy="random", seed=seed)


def mix_plan(plan: MixturePlan, rate=PIPELINE_RATE, seconds=SNR_SECONDS, loader=read_wav) -> MixResult:
    """Load, resample, length-fix and mix one plan in memory."""
    try:
        tgt = _shape(loader(plan.target_path), rate, seconds, [plan.seed, 0])
        itf = _shape(loader(plan.interferer_path), rate, seconds, [plan.seed, 1])
    except (OSError, SemiqError) as exc:
        raise type(exc)(f"plan {plan.id}: {exc}") from exc
    return mix_at_snr(tgt, itf, plan.snr_db)


def realize_snr_example(plan: MixturePlan, out_root, rate=PIPELINE_RATE, seconds=SNR_SECONDS, loader=read_wav) -> ExampleRecord:
    res = mix_plan(plan, rate, seconds, loader)
    out = Path(out_root) / plan.split / f"{plan.id}.wav"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, res.mixture, "float32")
    return ExampleRecord(
        id=plan.id,
        audio_path=str(out),
        class_name=plan.target_class,
        split=plan.split,
        task="snr",
        target=plan.snr_db,
        aux_path=plan.interferer_path,
        meta={
            "target_path": plan.target_path,
            "interferer_class": plan.interferer_class,
            "gain": res.gain,
            "scale": res.scale,
            "seed": plan.seed,
        },
    )


# -------------------------------------------------------- quality pairs


@dataclass
class SimulationResult:
    records: list
    skipped: int = 0
    skipped_ids: list = field(default_factory=list)


def _draw_files(pool, n, rng):
    picks = []
    while len(picks) < n:
        picks.extend(rng.permutation(len(pool)).tolist())
    return picks[:n]


def simulate_quality_pairs(
    clean_manifest,
    augmentation_menu,
    per_augmentation_counts,
    metric,
    seed,
    out_root,
    rate=PIPELINE_RATE,
    seconds=QUALITY_SECONDS,
    templates=None,
    loader=read_wav,
) -> SimulationResult:
    """Degrade clean files and pseudo-label each pair with ``metric``.

    For every augmentation name in ``augmentation_menu`` and every split in
    ``per_augmentation_counts``, clean files are drawn from the pool (without
    replacement until it is exhausted; train and validation draws come from
    one permutation so they are disjoint whenever the pool allows it).
    Distortion parameters are drawn per record. A failing codec or metric
    skips the record and increments ``skipped``.
    """
    pool = [e if isinstance(e, CorpusEntry) else CorpusEntry(e["path"], e["class"], e.get("fold")) for e in clean_manifest]
    if not pool:
        raise InvalidInputError("empty clean manifest")
    out_root = Path(out_root)
    result = SimulationResult([])
    for a_idx, aug_name in enumerate(augmentation_menu):
        rng = np.random.default_rng([int(seed), a_idx])
        splits = [s for s in SPLITS if s in per_augmentation_counts]
        total = sum(int(per_augmentation_counts[s]) for s in splits)
        picks = _draw_files(pool, total, rng)
        param_seeds = rng.integers(0, 2**31 - 1, total)
        k = 0
        for split in splits:
            (out_root / split).mkdir(parents=True, exist_ok=True)
            for j in range(int(per_augmentation_counts[split])):
                entry = pool[picks[k]]
                spec = augment.sample_spec(aug_name, int(param_seeds[k]), templates)
                k += 1
                rec_id = f"{aug_name}-{split}-{j:05d}"
                clean = loader(entry.path)
                if clean.sample_rate != rate:
                    clean = resample(clean, rate)
                clean = fix_length(clean, seconds, policy="head")
                try:
                    degraded = augment.apply(spec, clean)
                    y = metric.pseudo_mos(clean, degraded)
                    if not math.isfinite(y):
                        raise DegenerateInputError("metric returned a non-finite score")
                except SemiqError as exc:
                    log.warning("record %s skipped: %s", rec_id, exc)
                    result.skipped += 1
                    result.skipped_ids.append(rec_id)
                    continue
                out = out_root / split / f"{rec_id}.wav"
                write_wav(out, degraded, "float32")
                result.records.append(
                    ExampleRecord(
                        id=rec_id,
                        audio_path=str(out),
                        class_name=entry.class_name,
                        split=split,
                        task="mos",
                        target=float(min(max(y, 1.0), 5.0)),
                        aux_path=entry.path,
                        meta={"augmentation": spec.describe(), "metric": metric.name, "raw_score": y},
                    )
                )
    return result
