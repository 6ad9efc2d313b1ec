"""Intrusive metrics f(clean, degraded) used to pseudo-label simulated pairs.

Two metrics are computed in-process (log-spectral distance and residual SNR);
anything else, such as VISQOL or PESQ builds, is reached through
:func:`external_metric`, which runs a command and reads a number off stdout.
"""

from __future__ import annotations

import math
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .audio import LOG_FLOOR, PIPELINE_RATE, AudioBuffer, power_spectrogram, read_wav, resample, write_wav
from .augment import _tmp_root
from .errors import AlignmentError, DegenerateInputError, ExternalToolError, InvalidParameterError, SemiqError
from .evalharness import pearson

SNR_CAP_DB = 100.0
DEFAULT_CALIBRATION = (1.0, 12.0)

_NUMERIC_TOKEN = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def _aligned(clean: AudioBuffer, degraded: AudioBuffer):
    if len(clean) != len(degraded) or clean.sample_rate != degraded.sample_rate:
        raise AlignmentError(
            f"clean ({len(clean)} @ {clean.sample_rate} Hz) and degraded "
            f"({len(degraded)} @ {degraded.sample_rate} Hz) are not aligned"
        )


def log_spectral_distance(clean: AudioBuffer, degraded: AudioBuffer) -> float:
    """Mean over frames of the RMS (over bins) dB difference of power spectra."""
    _aligned(clean, degraded)
    pc = np.maximum(power_spectrogram(clean), LOG_FLOOR)
    pd = np.maximum(power_spectrogram(degraded), LOG_FLOOR)
    diff = 10.0 * np.log10(pc / pd)
    return float(np.mean(np.sqrt(np.mean(diff * diff, axis=1))))


def residual_snr_metric(clean: AudioBuffer, degraded: AudioBuffer) -> float:
    _aligned(clean, degraded)
    s = clean.samples
    e = s - degraded.samples
    ps = float(np.dot(s, s))
    if ps == 0.0:
        raise DegenerateInputError("clean signal is silent")
    pe = float(np.dot(e, e))
    if pe == 0.0:
        return SNR_CAP_DB
    return min(10.0 * math.log10(ps / pe), SNR_CAP_DB)


def distance_to_pseudo_mos(d: float, calibration=DEFAULT_CALIBRATION) -> float:
    """Affine map from a distance to [1, 5]: ``d <= d0`` gives 5, ``d >= d1`` gives 1."""
    d0, d1 = calibration
    if not 0 <= d0 < d1:
        raise InvalidParameterError(f"calibration needs 0 <= d0 < d1, got {calibration}")
    t = (d - d0) / (d1 - d0)
    return float(5.0 - 4.0 * min(max(t, 0.0), 1.0))


def last_numeric_token(text: str) -> float:
    found = _NUMERIC_TOKEN.findall(text)
    if not found:
        raise ValueError("no numeric token")
    return float(found[-1])


def external_metric(clean_path, degraded_path, command_template, native_rate=None, timeout=600.0, bit_depth=16) -> float:
    """Run an external intrusive metric and parse the last number it prints.

    Both inputs are resampled to ``native_rate`` (when given) into a private
    scratch directory that is removed on success and failure alike.
    """
    clean = read_wav(clean_path)
    degraded = read_wav(degraded_path)
    with tempfile.TemporaryDirectory(prefix="semiq-metric-", dir=_tmp_root()) as tmp:
        paths = {}
        for tag, buf in (("clean", clean), ("degraded", degraded)):
            if native_rate and buf.sample_rate != native_rate:
                buf = resample(buf, native_rate)
            paths[tag] = Path(tmp) / f"{tag}.wav"
            write_wav(paths[tag], buf, bit_depth)
        cmd = command_template.format(clean=shlex.quote(str(paths["clean"])), degraded=shlex.quote(str(paths["degraded"])))
        try:
            proc = subprocess.run(cmd, shell=True, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired as exc:
            raise ExternalToolError(f"metric command timed out: {cmd}", str(exc)) from exc
    diagnostics = (proc.stdout or "") + (proc.stderr or "")
    if proc.returncode != 0:
        raise ExternalToolError(f"metric command exited with status {proc.returncode}: {cmd}", diagnostics)
    try:
        return last_numeric_token(proc.stdout or "")
    except ValueError:
        raise ExternalToolError(f"metric command printed no number: {cmd}", diagnostics) from None


@dataclass(frozen=True)
class IntrusiveMetricDescriptor:
    """A named metric in the registry.

    ``output_kind`` is ``mos_like``, ``distance`` or ``snr_db``. Distances are
    turned into pseudo-MOS with ``calibration`` (d0, d1).
    """

    name: str
    native_rate: int
    output_kind: str
    fn: Callable = field(compare=False, repr=False)
    calibration: tuple = DEFAULT_CALIBRATION

    def __post_init__(self):
        if self.native_rate <= 0:
            raise InvalidParameterError("native_rate must be positive")
        if self.output_kind not in ("mos_like", "distance", "snr_db"):
            raise InvalidParameterError(f"unknown output kind {self.output_kind!r}")

    def __call__(self, clean: AudioBuffer, degraded: AudioBuffer) -> float:
        if clean.sample_rate != self.native_rate:
            clean = resample(clean, self.native_rate)
        if degraded.sample_rate != self.native_rate:
            degraded = resample(degraded, self.native_rate)
        return float(self.fn(clean, degraded))

    def pseudo_mos(self, clean: AudioBuffer, degraded: AudioBuffer) -> float:
        value = self(clean, degraded)
        if self.output_kind == "mos_like":
            return value
        if self.output_kind == "distance":
            return distance_to_pseudo_mos(value, self.calibration)
        raise InvalidParameterError(f"metric {self.name!r} reports SNR, not a quality score")


def _external_fn(template, native_rate, bit_depth=16):
    def run(clean, degraded):
        with tempfile.TemporaryDirectory(prefix="semiq-pair-", dir=_tmp_root()) as tmp:
            c, d = Path(tmp) / "c.wav", Path(tmp) / "d.wav"
            write_wav(c, clean, "float32")
            write_wav(d, degraded, "float32")
            return external_metric(c, d, template, native_rate, bit_depth=bit_depth)

    return run


class MetricRegistry(dict):
    def register(self, descriptor: IntrusiveMetricDescriptor) -> IntrusiveMetricDescriptor:
        if descriptor.name in self:
            raise InvalidParameterError(f"metric {descriptor.name!r} already registered")
        self[descriptor.name] = descriptor
        return descriptor

    def register_external(self, name, template, native_rate, output_kind="mos_like", calibration=DEFAULT_CALIBRATION):
        return self.register(IntrusiveMetricDescriptor(name, int(native_rate), output_kind, _external_fn(template, native_rate), calibration))

    def get_metric(self, name) -> IntrusiveMetricDescriptor:
        try:
            return self[name]
        except KeyError:
            raise InvalidParameterError(f"unknown intrusive metric {name!r}; registered: {sorted(self)}") from None


def default_registry() -> MetricRegistry:
    reg = MetricRegistry()
    reg.register(IntrusiveMetricDescriptor("lsd", PIPELINE_RATE, "distance", log_spectral_distance))
    reg.register(IntrusiveMetricDescriptor("residual_snr", PIPELINE_RATE, "snr_db", residual_snr_metric))
    return reg


DEFAULT_METRIC = "lsd"


def benchmark_metrics(triples, metrics) -> list:
    """Pearson correlation of each metric with human scores.

    ``triples`` yields ``(clean, degraded, human_score)`` buffers; ``metrics``
    is an iterable of descriptors. With ``pseudo_mos`` in mind, distance metrics
    are reported both raw and after calibration. Returns rows sorted by r,
    best first.
    """
    triples = list(triples)
    human = np.array([t[2] for t in triples], dtype=np.float64)
    rows = []
    for m in metrics:
        variants = [(m.name, m)]
        if m.output_kind == "distance":
            variants.append((f"{m.name}->mos", m.pseudo_mos))
        for label, fn in variants:
            values, keep, failures = [], [], 0
            for i, (clean, degraded, _) in enumerate(triples):
                try:
                    values.append(fn(clean, degraded))
                    keep.append(i)
                except SemiqError:
                    failures += 1
            try:
                r = pearson(values, human[keep])
            except SemiqError:
                r = None
            rows.append({"metric": label, "pearson_r": r, "n": len(keep), "failures": failures})
    rows.sort(key=lambda row: -np.inf if row["pearson_r"] is None else row["pearson_r"], reverse=True)
    return rows
