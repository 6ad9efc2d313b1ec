import numpy as np
import pytest

from semiq.audio import AudioBuffer, mel_spectrogram
from semiq.errors import InvalidInputError, NoDataError
from semiq.experiment import build_desk_dataset
from semiq.pipeline import FeatureConfig, buffer_features, predict, train_toy
from semiq.simulate import ExampleRecord
from semiq.synthetic import TWO_CLASS_BANDS, two_class_corpus
from semiq.toymodel.train import TrainConfig


def test_synthetic_corpus_layout():
    entries, bufs = two_class_corpus(10, 0.5, 16000, seed=1)
    assert len(entries) == 20 and {e.class_name for e in entries} == set(TWO_CLASS_BANDS)
    assert sorted({e.fold for e in entries}) == [1, 2, 3, 4, 5]
    peaks = [np.max(np.abs(bufs[e.path].samples)) for e in entries]
    assert np.ptp(20 * np.log10(peaks)) > 10  # levels vary, so loudness alone is no class cue


def test_synthetic_bands():
    entries, bufs = two_class_corpus(3, 0.5, 16000, seed=0)
    for e in entries:
        x = bufs[e.path].samples
        spec = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(len(x), 1 / 16000)
        lo, hi = TWO_CLASS_BANDS[e.class_name]
        inside = spec[(f > lo - 50) & (f < hi + 50)].sum()
        assert inside / spec.sum() > 0.95


def test_buffer_features_shape():
    fc = FeatureConfig(16000, 1.0, 32)
    feat = buffer_features(AudioBuffer(np.random.default_rng(0).normal(0, 0.1, 8000), 8000), fc)
    assert feat.shape == (64,)


def test_train_and_predict_small():
    records, feats = build_desk_dataset(n_per_class=10, counts={"train": 40, "val": 10, "test": 10})
    assert feats.shape == (60, 128)
    ckpt, res = train_toy(records, feats, dims={"d": 8, "mapper_hidden": 4, "ff_hidden": 16}, config=TrainConfig(1e-3, 0.0, 2, 16))
    assert ckpt.meta["task"] == "snr" and ckpt.meta["fixed_prompt"] is False
    test = [i for i, r in enumerate(records) if r.split == "test"]
    preds = predict(ckpt, [records[i] for i in test], feats[test])
    assert [p["id"] for p in preds] == [records[i].id for i in test]
    assert all(p["value"] is None or np.isfinite(p["value"]) for p in preds)


def test_train_toy_errors():
    r = [ExampleRecord("a", "a.wav", "x", "val", "snr", 1.0)]
    with pytest.raises(NoDataError):
        train_toy(r, np.zeros((1, 4)))
    with pytest.raises(InvalidInputError):
        train_toy(r, np.zeros((2, 4)))
    mixed = [ExampleRecord("a", "a.wav", "x", "train", "snr", 1.0), ExampleRecord("b", "b.wav", "x", "train", "mos", 1.0)]
    with pytest.raises(InvalidInputError):
        train_toy(mixed, np.zeros((2, 4)))
