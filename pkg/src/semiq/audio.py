"""Audio primitives: WAV I/O, resampling, fixed-length shaping, mel front-end.

Everything here is a pure function of its inputs. Randomised helpers take an
explicit ``seed``.
"""

from __future__ import annotations

import functools
import math
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import FormatError, InvalidInputError, UnsupportedError

PIPELINE_RATE = 44100
LOG_FLOOR = 1e-10
POWER_DB_FLOOR = -200.0

RESAMPLE_BETA = 8.0
RESAMPLE_TAPS_PER_PHASE = 64


@dataclass(frozen=True)
class AudioBuffer:
    """Mono float64 samples in [-1, 1] plus the sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidInputError(f"expected mono 1-D samples, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("samples contain non-finite values")
        if int(self.sample_rate) <= 0 or int(self.sample_rate) != self.sample_rate:
            raise InvalidInputError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # [n_frames, n_mels], dB-like
    n_mels: int
    hop_seconds: float
    win_seconds: float
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def _require_nonempty(buf: AudioBuffer):
    if len(buf) == 0:
        raise InvalidInputError("empty audio buffer")


# --------------------------------------------------------------------- WAV I/O

_PCM16_SCALE = 32768.0
_PCM24_MAX = 2**23


def read_wav(path) -> AudioBuffer:
    """Read a RIFF WAV file (PCM 16/24-bit or IEEE float32), downmixing to mono."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated file") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32
        x = data.astype(np.float64) / 2.0**31
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedError(f"{path}: unsupported sample encoding {data.dtype}")

    if x.ndim == 2:
        if x.shape[1] > 2:
            raise UnsupportedError(f"{path}: {x.shape[1]} channels (only 1-2 supported)")
        x = x.mean(axis=1)
    return AudioBuffer(x, rate)


def write_wav(path, buf: AudioBuffer, bit_depth="float32") -> None:
    """Write ``buf`` as a mono WAV. ``bit_depth`` is 16, 24 or ``"float32"``."""
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"parent directory missing: {path.parent}")
    x = buf.samples
    if bit_depth in ("float32", "float", 32):
        wavfile.write(path, buf.sample_rate, x.astype(np.float32))
    elif bit_depth == 16:
        q = np.clip(np.round(x * _PCM16_SCALE), -32768, 32767).astype("<i2")
        wavfile.write(path, buf.sample_rate, q)
    elif bit_depth == 24:
        q = np.clip(np.round(x * _PCM24_MAX), -_PCM24_MAX, _PCM24_MAX - 1).astype("<i4")
        packed = q.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(3)
            w.setframerate(buf.sample_rate)
            w.writeframes(packed)
    else:
        raise UnsupportedError(f"unsupported bit depth {bit_depth!r}")


# ------------------------------------------------------------------ resampling


@functools.lru_cache(maxsize=32)
def _resample_filter(up: int, down: int) -> np.ndarray:
    rate = max(up, down)
    numtaps = RESAMPLE_TAPS_PER_PHASE * rate + 1
    return signal.firwin(numtaps, 1.0 / rate, window=("kaiser", RESAMPLE_BETA))


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc kernel."""
    if target_rate <= 0:
        raise InvalidInputError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buf.sample_rate:
        return buf
    ratio = Fraction(target_rate, buf.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    n_out = int(round(len(buf) * target_rate / buf.sample_rate))
    if len(buf) == 0:
        return AudioBuffer(np.zeros(0), target_rate)
    y = signal.resample_poly(buf.samples, up, down, window=_resample_filter(up, down))
    if y.shape[0] < n_out:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return AudioBuffer(y[:n_out], target_rate)


# ---------------------------------------------------------------- fixed length


def fix_length(buf: AudioBuffer, seconds: float, policy: str = "random", seed=None) -> AudioBuffer:
    """Crop or zero-pad to ``round(seconds * sample_rate)`` samples.

    ``policy="head"`` keeps/places the signal at sample 0. ``policy="random"``
    picks a uniform crop start (long input) or pad offset (short input) from
    ``seed``; the signal is never split.
    """
    if seconds <= 0:
        raise InvalidInputError(f"seconds must be positive, got {seconds}")
    _require_nonempty(buf)
    if policy not in ("random", "head"):
        raise InvalidInputError(f"unknown fix_length policy {policy!r}")
    target = int(round(seconds * buf.sample_rate))
    n = len(buf)
    if n == target:
        return buf
    offset = 0
    if policy == "random":
        offset = int(np.random.default_rng(seed).integers(0, abs(n - target) + 1))
    if n > target:
        return buf.with_samples(buf.samples[offset : offset + target])
    out = np.zeros(target)
    out[offset : offset + n] = buf.samples
    return buf.with_samples(out)


# ------------------------------------------------------------------- mel scale


def mel_hz(f):
    """HTK mel value of frequency ``f`` (Hz)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidInputError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def hz_mel(m):
    """Inverse of :func:`mel_hz`."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise InvalidInputError("mel value must be non-negative")
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


@functools.lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = 64, fmin: float = 0.0, fmax=None) -> np.ndarray:
    """Triangular HTK filterbank, unity peak, shape ``[n_mels, n_fft // 2 + 1]``.

    Adjacent triangles share edges, so every column sums to at most one.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = hz_mel(np.linspace(mel_hz(fmin), mel_hz(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (ctr - lo)
    falling = (hi - bins[None, :]) / (hi - ctr)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    fb.setflags(write=False)
    return fb


def mel_band_centers(sample_rate: int, n_mels: int = 64, fmin: float = 0.0, fmax=None) -> np.ndarray:
    fmax = sample_rate / 2 if fmax is None else fmax
    return hz_mel(np.linspace(mel_hz(fmin), mel_hz(fmax), n_mels + 2))[1:-1]


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_frames = (x.shape[0] - win) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]


def power_spectrogram(buf: AudioBuffer, win_seconds=0.032, hop_seconds=0.010) -> np.ndarray:
    """Hann-windowed |STFT|^2, shape ``[n_frames, win // 2 + 1]``, no centering."""
    win = int(round(win_seconds * buf.sample_rate))
    hop = int(round(hop_seconds * buf.sample_rate))
    if len(buf) < win:
        raise InvalidInputError(f"buffer of {len(buf)} samples is shorter than one {win}-sample window")
    frames = frame_signal(buf.samples, win, hop) * signal.get_window("hann", win, fftbins=False)
    return np.abs(np.fft.rfft(frames, axis=1)) ** 2


def mel_spectrogram(buf: AudioBuffer, n_mels=64, win_seconds=0.032, hop_seconds=0.010) -> MelSpectrogram:
    power = power_spectrogram(buf, win_seconds, hop_seconds)
    n_fft = int(round(win_seconds * buf.sample_rate))
    fb = mel_filterbank(buf.sample_rate, n_fft, n_mels)
    mel = power @ fb.T
    frames = 10.0 * np.log10(np.maximum(mel, LOG_FLOOR))
    return MelSpectrogram(frames, n_mels, hop_seconds, win_seconds, buf.sample_rate)


# ------------------------------------------------------------------ level


def rms(buf) -> float:
    x = buf.samples if isinstance(buf, AudioBuffer) else np.asarray(buf, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("empty audio buffer")
    return float(np.sqrt(np.mean(x * x)))


def power_db(buf) -> float:
    r = rms(buf)
    if r <= 0.0:
        return POWER_DB_FLOOR
    return max(20.0 * math.log10(r), POWER_DB_FLOOR)


def tone(freq, seconds, sample_rate=PIPELINE_RATE, amplitude=1.0, phase=0.0) -> AudioBuffer:
    """Pure sine helper used by tests, demos and the synthetic corpus."""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)
