"""Synthetic class-labelled corpus for desk-scale SNR experiments.

Two classes that occupy disjoint frequency regions, so the per-class level of
a mixture is recoverable from its spectrum:

* ``low``  - clusters of partials between 300 and 800 Hz
* ``high`` - clusters of partials between 2 and 6 kHz
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .simulate import CorpusEntry, write_jsonl

TWO_CLASS_BANDS = {"low": (300.0, 800.0), "high": (2000.0, 6000.0)}


def band_limited_tones(rng, band, seconds=1.0, sample_rate=16000, n_partials=(3, 7), peak_db=(-30.0, -3.0)) -> AudioBuffer:
    """Sum of a few random partials in ``band`` with a slow amplitude wobble.

    The peak level is drawn uniformly in dBFS from ``peak_db`` so that loudness
    alone does not identify a source once it is mixed.
    """
    lo, hi = band
    n = int(rng.integers(n_partials[0], n_partials[1] + 1))
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    freqs = rng.uniform(lo, hi, n)
    amps = rng.uniform(0.3, 1.0, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    x *= 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi))
    peak = 10.0 ** (rng.uniform(*peak_db) / 20.0)
    return AudioBuffer(peak * x / np.max(np.abs(x)), sample_rate)


def two_class_corpus(n_per_class=200, seconds=1.0, sample_rate=16000, seed=0, n_folds=5, bands=TWO_CLASS_BANDS):
    """In-memory corpus: ``(entries, buffers)`` with ``buffers[path] -> AudioBuffer``.

    Paths are synthetic keys (``<class>/<class>_<idx>.wav``); folds cycle
    ``1..n_folds`` within each class.
    """
    rng = np.random.default_rng(seed)
    entries, buffers = [], {}
    for cls, band in bands.items():
        for i in range(n_per_class):
            path = f"{cls}/{cls}_{i:04d}.wav"
            buffers[path] = band_limited_tones(rng, band, seconds, sample_rate)
            entries.append(CorpusEntry(path, cls, i % n_folds + 1))
    return entries, buffers


def write_two_class_corpus(root, **kwargs) -> Path:
    """Write the corpus as WAV files plus ``manifest.jsonl`` under ``root``."""
    root = Path(root)
    entries, buffers = two_class_corpus(**kwargs)
    for e in entries:
        out = root / e.path
        out.parent.mkdir(parents=True, exist_ok=True)
        write_wav(out, buffers[e.path], "float32")
    manifest = root / "manifest.jsonl"
    write_jsonl(manifest, [{"path": e.path, "class": e.class_name, "fold": e.fold} for e in entries])
    return manifest
