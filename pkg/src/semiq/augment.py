"""Coding-style distortions used to simulate degraded music.

Internal augmentations (mu-law quantisation, FIR low-pass) run in-process.
Lossy codecs (MP3, Vorbis, Opus) run through :func:`external_codec`, which
shells out to whatever encoder/decoder the operator configures.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioBuffer, fix_length, hz_mel, mel_hz, read_wav, resample, write_wav
from .errors import AdapterError, ExternalToolError, InvalidParameterError

MU = 255.0
LOWPASS_TAPS = 513
LOWPASS_ATTENUATION_DB = 80.0
LOWPASS_RANGE = (1000.0, 6000.0)

# parameter grids per distortion; mu-law values are used as quantiser levels
MP3_KBPS = (8, 16, 24, 32, 48, 56)
VORBIS_QSCALE = (-1, 1, 2)
MU_LAW_LEVELS = (24, 28, 32, 36)
OPUS_KBPS = (8, 12, 14, 16)

CODEC_VALUES = {"mp3": MP3_KBPS, "vorbis": VORBIS_QSCALE, "opus": OPUS_KBPS}

# ffmpeg round trips; {dir} is the per-call scratch directory
DEFAULT_CODEC_TEMPLATES = {
    "mp3": "ffmpeg -v error -y -i {in} -c:a libmp3lame -b:a {param}k {dir}/enc.mp3 && ffmpeg -v error -y -i {dir}/enc.mp3 -c:a pcm_f32le {out}",
    "vorbis": "ffmpeg -v error -y -i {in} -c:a libvorbis -q:a {param} {dir}/enc.ogg && ffmpeg -v error -y -i {dir}/enc.ogg -c:a pcm_f32le {out}",
    "opus": "ffmpeg -v error -y -i {in} -c:a libopus -b:a {param}k {dir}/enc.opus && ffmpeg -v error -y -i {dir}/enc.opus -c:a pcm_f32le {out}",
}

AUGMENTATION_KINDS = ("mp3", "vorbis", "mu_law", "opus", "lowpass")


def _guard(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1.0, 1.0)


def mu_compress(x):
    return np.sign(x) * np.log1p(MU * np.abs(x)) / np.log1p(MU)


def mu_expand(y):
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(MU)) / MU


def mu_law_distort(buf: AudioBuffer, levels: int) -> AudioBuffer:
    """Compand with mu=255, quantise to ``levels`` uniform levels on [-1, 1], expand."""
    if int(levels) != levels or levels < 2:
        raise InvalidParameterError(f"levels must be an integer >= 2, got {levels}")
    steps = int(levels) - 1
    y = mu_compress(_guard(buf.samples))
    q = np.round((y + 1.0) * (steps / 2.0)) * (2.0 / steps) - 1.0
    return buf.with_samples(_guard(mu_expand(q)))


def lowpass_kernel(cutoff: float, sample_rate: int) -> np.ndarray:
    beta = signal.kaiser_beta(LOWPASS_ATTENUATION_DB)
    return signal.firwin(LOWPASS_TAPS, cutoff, window=("kaiser", beta), fs=sample_rate)


def lowpass(buf: AudioBuffer, cutoff: float) -> AudioBuffer:
    """Linear-phase 513-tap Kaiser FIR, delay-compensated so length is preserved."""
    if not 0 < cutoff < buf.sample_rate / 2:
        raise InvalidParameterError(f"cutoff {cutoff} Hz outside (0, {buf.sample_rate / 2})")
    h = lowpass_kernel(float(cutoff), buf.sample_rate)
    y = signal.fftconvolve(buf.samples, h, mode="same")
    return buf.with_samples(_guard(y))


def sample_lowpass_cutoff(seed=None, size=None):
    """Cutoff(s) in Hz, uniform on the mel scale between 1 and 6 kHz."""
    rng = np.random.default_rng(seed)
    lo, hi = mel_hz(LOWPASS_RANGE[0]), mel_hz(LOWPASS_RANGE[1])
    u = rng.uniform(lo, hi, size=size)
    f = np.clip(hz_mel(u), *LOWPASS_RANGE)
    return float(f) if size is None else f


def _tmp_root():
    return os.environ.get("SEMIQ_TMPDIR") or None


def external_codec(buf: AudioBuffer, command_template: str, param, timeout=300.0, bit_depth="float32") -> AudioBuffer:
    """Round-trip ``buf`` through an external encoder/decoder.

    The template is run by ``/bin/sh`` after substituting ``{in}``, ``{out}``,
    ``{param}`` and ``{dir}`` (a private scratch directory). The decoded file is
    resampled back to the input rate and trimmed/padded to the input length.
    """
    with tempfile.TemporaryDirectory(prefix="semiq-codec-", dir=_tmp_root()) as tmp:
        src = Path(tmp) / "in.wav"
        dst = Path(tmp) / "out.wav"
        write_wav(src, buf, bit_depth)
        cmd = command_template.format(
            **{"in": shlex.quote(str(src)), "out": shlex.quote(str(dst)), "param": shlex.quote(str(param)), "dir": shlex.quote(tmp)}
        )
        try:
            proc = subprocess.run(cmd, shell=True, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired as exc:
            raise ExternalToolError(f"codec command timed out after {timeout}s: {cmd}", str(exc)) from exc
        diagnostics = (proc.stdout or "") + (proc.stderr or "")
        if proc.returncode != 0:
            raise ExternalToolError(f"codec command exited with status {proc.returncode}: {cmd}", diagnostics)
        if not dst.exists():
            raise ExternalToolError(f"codec command produced no output file: {cmd}", diagnostics)
        out = read_wav(dst)
    if out.sample_rate != buf.sample_rate:
        out = resample(out, buf.sample_rate)
    n = len(buf)
    if abs(len(out) - n) > 0.1 * n:
        raise AdapterError(f"decoded length {len(out)} differs from input length {n} by more than 10%")
    out = fix_length(out, n / buf.sample_rate, policy="head") if len(out) != n else out
    return out.with_samples(_guard(out.samples))


@dataclass(frozen=True)
class AugmentationSpec:
    """One distortion instance.

    ``params`` by kind:
      * ``mu_law``: ``{"levels": int}``
      * ``lowpass``: ``{"cutoff": Hz}``
      * ``external_codec``: ``{"codec": name, "template": str, "value": param}``
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        p = self.params
        if self.kind == "mu_law":
            lv = p.get("levels")
            if lv is None or int(lv) != lv or lv < 2:
                raise InvalidParameterError(f"mu_law levels must be an integer >= 2, got {lv}")
        elif self.kind == "lowpass":
            c = p.get("cutoff")
            if c is None or not LOWPASS_RANGE[0] <= c <= LOWPASS_RANGE[1]:
                raise InvalidParameterError(f"lowpass cutoff must lie in {LOWPASS_RANGE}, got {c}")
        elif self.kind == "external_codec":
            if "template" not in p or "value" not in p:
                raise InvalidParameterError("external_codec needs 'template' and 'value'")
            allowed = CODEC_VALUES.get(p.get("codec"))
            if allowed is not None and p["value"] not in allowed:
                raise InvalidParameterError(f"{p['codec']} value {p['value']} not in {allowed}")
        else:
            raise InvalidParameterError(f"unknown augmentation kind {self.kind!r}")

    def describe(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        d.update({k: v for k, v in self.params.items() if k != "template"})
        return d


def sample_spec(name: str, seed: int, templates=None) -> AugmentationSpec:
    """Draw parameters for the distortion ``name`` (one of :data:`AUGMENTATION_KINDS`)."""
    rng = np.random.default_rng(seed)
    if name == "lowpass":
        return AugmentationSpec("lowpass", {"cutoff": sample_lowpass_cutoff(rng)}, seed)
    if name == "mu_law":
        return AugmentationSpec("mu_law", {"levels": int(rng.choice(MU_LAW_LEVELS))}, seed)
    templates = {**DEFAULT_CODEC_TEMPLATES, **(templates or {})}
    if name not in templates:
        raise InvalidParameterError(f"no command template for codec {name!r}")
    values = CODEC_VALUES.get(name)
    value = values[int(rng.integers(len(values)))] if values else None
    return AugmentationSpec("external_codec", {"codec": name, "template": templates[name], "value": value}, seed)


def apply(spec: AugmentationSpec, buf: AudioBuffer) -> AudioBuffer:
    if spec.kind == "mu_law":
        return mu_law_distort(buf, spec.params["levels"])
    if spec.kind == "lowpass":
        return lowpass(buf, spec.params["cutoff"])
    return external_codec(buf, spec.params["template"], spec.params["value"])
