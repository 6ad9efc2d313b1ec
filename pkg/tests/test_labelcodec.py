import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semiq.errors import InvalidInputError, ParseError, RangeError, UnsupportedError
from semiq.labelcodec import (
    DEFAULT_TEMPLATES,
    load_templates,
    mushra_to_mos,
    parse_caption,
    quantize,
    quantized_value,
    render,
    round_one_decimal,
)


@pytest.mark.parametrize(
    "value,word,number",
    [(1.3242, "Bad", "1.3"), (3.3345, "Fair", "3.3"), (4.798, "Excellent", "4.8")],
)
def test_quantization_reference_rows(value, word, number):
    assert quantize(value, "text") == word
    assert quantize(value, "numeric") == number


def test_rounding_half_up():
    assert str(round_one_decimal(1.25)) == "1.3"
    assert str(round_one_decimal(2.45)) == "2.5"
    assert str(round_one_decimal(-0.04)) == "0.0"
    assert str(round_one_decimal(-3.25)) == "-3.3"
    assert quantize(2.5, "text") == "Fair"
    assert quantize(4.5, "text") == "Excellent"
    assert quantize(4.49, "text") == "Good"


def test_render_templates():
    p = render("mos", "speech", 3.3345, "text")
    assert p.prompt == "Paying attention to the speech assess the audio quality"
    assert p.label == "The audio quality is fair"
    p = render("snr", "dog bark", -7.26, "numeric")
    assert p.prompt == "Paying attention to the dog bark estimate the SNR"
    assert p.label == "The SNR is -7.3"
    p = render("snr", "dog", 3.0, "numeric", fixed_prompt=True)
    assert p.prompt == "Paying attention to the audio estimate the SNR"


def test_render_errors():
    with pytest.raises(UnsupportedError):
        render("snr", "dog", 3.0, "text")
    with pytest.raises(InvalidInputError):
        render("mos", "", 3.0, "text")
    with pytest.raises(RangeError):
        quantize(5.6, "text")
    with pytest.raises(RangeError):
        quantize(float("nan"), "numeric", "snr")
    with pytest.raises(InvalidInputError):
        render("pesq", "x", 1.0, "numeric")


def test_parse_caption():
    assert parse_caption("The audio quality is Good", "mos", "text") == 4.0
    assert parse_caption("The audio quality is excellent.", "mos", "text") == 5.0
    assert parse_caption("The SNR is -12.5", "snr", "numeric") == -12.5
    for bad in ("", "The SNR is", "The SNR is 1.2.3", "The SNR is -"):
        with pytest.raises(ParseError):
            parse_caption(bad, "snr", "numeric")
    with pytest.raises(ParseError):
        parse_caption("The audio quality is superb", "mos", "text")


@given(st.floats(1.0, 5.0))
def test_round_trip_mos(v):
    for strategy in ("text", "numeric"):
        pair = render("mos", "music", v, strategy)
        assert parse_caption(pair.label, "mos", strategy) == quantized_value(v, strategy)
    assert abs(parse_caption(render("mos", "music", v, "numeric").label, "mos", "numeric") - v) <= 0.05 + 1e-12


@given(st.floats(-40.0, 40.0))
def test_round_trip_snr(v):
    out = parse_caption(render("snr", "rain", v, "numeric").label, "snr", "numeric")
    assert abs(out - v) <= 0.05 + 1e-12


def test_text_quantization_is_nearest_category():
    v = np.random.default_rng(0).uniform(1, 5, 2000)
    for x in v:
        q = quantized_value(x, "text")
        assert abs(q - x) <= 0.5 + 1e-12


def test_templates_file(tmp_path):
    p = tmp_path / "t.ini"
    p.write_text("[templates]\nsnr_prompt = Listen to the {class_name} and give the SNR\n")
    t = load_templates(p)
    assert t.snr_prompt.startswith("Listen")
    assert t.mos_label == DEFAULT_TEMPLATES.mos_label
    p.write_text("[templates]\nnope = x\n")
    with pytest.raises(InvalidInputError):
        load_templates(p)


def test_mushra_mapping():
    assert mushra_to_mos(0) == 1.0 and mushra_to_mos(100) == 5.0
    assert math.isclose(mushra_to_mos(50), 3.0)
    with pytest.raises(RangeError):
        mushra_to_mos(101)
