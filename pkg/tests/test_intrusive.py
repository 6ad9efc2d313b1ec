import dataclasses
import math
import os

import numpy as np
import pytest

from semiq.audio import AudioBuffer, tone, write_wav
from semiq.augment import lowpass
from semiq.errors import AlignmentError, DegenerateInputError, ExternalToolError, InvalidParameterError
from semiq.evalharness import pearson
from semiq.intrusive import (
    SNR_CAP_DB,
    IntrusiveMetricDescriptor,
    MetricRegistry,
    benchmark_metrics,
    default_registry,
    distance_to_pseudo_mos,
    external_metric,
    last_numeric_token,
    log_spectral_distance,
    residual_snr_metric,
)

SR = 16000


def noise(n=SR, seed=0, scale=0.2):
    return AudioBuffer(np.random.default_rng(seed).normal(0, scale, n), SR)


def test_lsd_closed_form_for_gain():
    x = noise()
    assert log_spectral_distance(x, x) == 0.0
    # halving the amplitude shifts every bin by 20 log10 2 dB
    assert log_spectral_distance(x, x.with_samples(0.5 * x.samples)) == pytest.approx(20 * math.log10(2), rel=1e-9)


def test_lsd_requires_alignment():
    with pytest.raises(AlignmentError):
        log_spectral_distance(noise(1000), noise(1001))


def test_residual_snr_closed_form():
    x = noise()
    assert residual_snr_metric(x, x) == SNR_CAP_DB
    assert residual_snr_metric(x, x.with_samples(0.9 * x.samples)) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(DegenerateInputError):
        residual_snr_metric(AudioBuffer(np.zeros(100), SR), noise(100))


def test_pseudo_mos_calibration():
    assert distance_to_pseudo_mos(0.0) == 5.0
    assert distance_to_pseudo_mos(1.0) == 5.0
    assert distance_to_pseudo_mos(12.0) == 1.0
    assert distance_to_pseudo_mos(100.0) == 1.0
    assert distance_to_pseudo_mos(6.5) == pytest.approx(3.0)
    ds = np.linspace(0, 20, 200)
    ys = [distance_to_pseudo_mos(d) for d in ds]
    assert all(a >= b for a, b in zip(ys, ys[1:]))
    with pytest.raises(InvalidParameterError):
        distance_to_pseudo_mos(1.0, (5.0, 2.0))


def test_distance_sign_flips_after_calibration():
    # stronger low-pass degradation: both a simulated human score and LSD move monotonically
    x = noise(SR, seed=3)
    cutoffs = np.linspace(1000, 6000, 8)
    human = np.linspace(1.5, 4.5, 8)
    lsd = [log_spectral_distance(x, lowpass(x, c)) for c in cutoffs]
    mos = [distance_to_pseudo_mos(d, (1.0, 120.0)) for d in lsd]
    assert pearson(lsd, human) < 0
    assert pearson(mos, human) > 0


def test_last_numeric_token():
    assert last_numeric_token("4.2") == 4.2
    assert last_numeric_token("MOS-LQO: 3.71\n") == 3.71
    assert last_numeric_token("pass 2 of 2, score=1e-1") == 0.1
    with pytest.raises(ValueError):
        last_numeric_token("no numbers here")


@pytest.fixture
def wav_pair(tmp_path):
    c, d = tmp_path / "c.wav", tmp_path / "d.wav"
    write_wav(c, tone(440.0, 0.5, 44100, 0.3), "float32")
    write_wav(d, tone(440.0, 0.5, 44100, 0.2), "float32")
    return c, d


def test_external_metric_stub_outputs(wav_pair, tmp_path, monkeypatch):
    scratch = tmp_path / "scratch"
    scratch.mkdir()
    monkeypatch.setenv("SEMIQ_TMPDIR", str(scratch))
    assert external_metric(*wav_pair, "echo 4.2") == 4.2
    assert external_metric(*wav_pair, "echo 'MOS-LQO: 3.71'") == 3.71
    assert os.listdir(scratch) == []


def test_external_metric_resamples_to_native_rate(wav_pair, tmp_path):
    cmd = "python3 -c \"import sys; from scipy.io import wavfile; print(wavfile.read(sys.argv[1])[0])\" {clean}"
    assert external_metric(*wav_pair, cmd, native_rate=16000) == 16000


def test_external_metric_failures(wav_pair, tmp_path, monkeypatch):
    scratch = tmp_path / "scratch"
    scratch.mkdir()
    monkeypatch.setenv("SEMIQ_TMPDIR", str(scratch))
    with pytest.raises(ExternalToolError):
        external_metric(*wav_pair, "echo nothing useful")
    with pytest.raises(ExternalToolError) as ei:
        external_metric(*wav_pair, "echo oops >&2; exit 2")
    assert "oops" in ei.value.diagnostics
    with pytest.raises(ExternalToolError):
        external_metric(*wav_pair, "no-such-metric-binary-xyz {clean} {degraded}")
    assert os.listdir(scratch) == []


def test_registry():
    reg = default_registry()
    assert set(reg) >= {"lsd", "residual_snr"}
    with pytest.raises(InvalidParameterError):
        reg.get_metric("visqol")
    with pytest.raises(InvalidParameterError):
        reg.register(reg["lsd"])
    m = reg.register_external("stub", "echo 4.5", 16000)
    x = noise(4000)
    assert m.pseudo_mos(x, x) == 4.5
    assert reg["lsd"].pseudo_mos(x, x) == 5.0
    with pytest.raises(InvalidParameterError):
        reg["residual_snr"].pseudo_mos(x, x)


def test_descriptor_resamples_inputs():
    seen = []
    d = IntrusiveMetricDescriptor("rate", 8000, "mos_like", lambda c, g: seen.append((c.sample_rate, g.sample_rate)) or 3.0)
    d(noise(1600), noise(1600, seed=1))
    assert seen == [(8000, 8000)]
    with pytest.raises(InvalidParameterError):
        IntrusiveMetricDescriptor("bad", 8000, "loudness", lambda c, g: 0.0)


def test_benchmark_metrics_orders_rows():
    x = noise(SR, seed=4)
    triples = []
    for i, c in enumerate(np.linspace(1000, 6000, 6)):
        triples.append((x, lowpass(x, c), 1.0 + 0.6 * i))
    reg = default_registry()
    # low-pass LSD runs far past the default 12 dB saturation point
    lsd = dataclasses.replace(reg["lsd"], calibration=(1.0, 120.0))
    rows = benchmark_metrics(triples, [lsd, reg["residual_snr"]])
    names = [r["metric"] for r in rows]
    assert set(names) == {"lsd", "lsd->mos", "residual_snr"}
    rs = [r["pearson_r"] for r in rows]
    assert rs == sorted(rs, reverse=True)
    assert dict(zip(names, rs))["lsd"] < 0


def test_benchmark_counts_failures():
    reg = MetricRegistry()
    reg.register_external("broken", "exit 1", 16000)
    rows = benchmark_metrics([(noise(800), noise(800, 1), 3.0)] * 3, [reg["broken"]])
    assert rows == [{"metric": "broken", "pearson_r": None, "n": 0, "failures": 3}]
