"""Prompt/label templates, label quantisation and caption parsing."""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal

from .errors import InvalidInputError, ParseError, RangeError, UnsupportedError

ACR_WORDS = ("Bad", "Poor", "Fair", "Good", "Excellent")
_ACR_LOOKUP = {w.lower(): i + 1 for i, w in enumerate(ACR_WORDS)}

TASKS = ("mos", "snr")
STRATEGIES = ("text", "numeric")
FIXED_PROMPT_CLASS = "audio"

_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)")


@dataclass(frozen=True)
class Templates:
    mos_prompt: str = "Paying attention to the {class_name} assess the audio quality"
    mos_label: str = "The audio quality is {label}"
    snr_prompt: str = "Paying attention to the {class_name} estimate the SNR"
    snr_label: str = "The SNR is {label}"
    fixed_class: str = FIXED_PROMPT_CLASS

    def prompt(self, task):
        return self.mos_prompt if task == "mos" else self.snr_prompt

    def label(self, task):
        return self.mos_label if task == "mos" else self.snr_label


DEFAULT_TEMPLATES = Templates()


def load_templates(path) -> Templates:
    """Read template overrides from an INI file with a ``[templates]`` section."""
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        cp.read_file(fh)
    if not cp.has_section("templates"):
        return DEFAULT_TEMPLATES
    known = set(Templates.__dataclass_fields__)
    overrides = dict(cp.items("templates"))
    unknown = set(overrides) - known
    if unknown:
        raise InvalidInputError(f"unknown template keys: {sorted(unknown)}")
    return replace(DEFAULT_TEMPLATES, **overrides)


@dataclass(frozen=True)
class PromptLabelPair:
    prompt: str
    label: str
    task: str
    class_name: str
    value: float
    strategy: str


def _check(task, strategy):
    if task not in TASKS:
        raise InvalidInputError(f"unknown task {task!r}")
    if strategy not in STRATEGIES:
        raise InvalidInputError(f"unknown strategy {strategy!r}")
    if task == "snr" and strategy == "text":
        raise UnsupportedError("SNR labels only support the numeric strategy")


def round_one_decimal(value: float) -> Decimal:
    # str() gives the shortest repr, so 1.25 rounds to 1.3 as written
    d = Decimal(repr(float(value))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return d + Decimal("0.0")  # folds -0.0 into 0.0


def quantize(value: float, strategy: str, task: str = "mos") -> str:
    """Quantised label text: an ACR word (``text``) or a one-decimal number (``numeric``)."""
    _check(task, strategy)
    if not math.isfinite(value):
        raise RangeError(f"non-finite value {value}")
    if strategy == "text":
        if not 0.5 <= value < 5.5:
            raise RangeError(f"MOS {value} outside [0.5, 5.5) cannot map to an ACR word")
        return ACR_WORDS[math.floor(value + 0.5) - 1]
    return str(round_one_decimal(value))


def quantized_value(value: float, strategy: str, task: str = "mos") -> float:
    """The number a perfect caption for ``value`` parses back to."""
    q = quantize(value, strategy, task)
    return float(_ACR_LOOKUP[q.lower()]) if strategy == "text" else float(q)


def render(task, class_name, value, strategy, fixed_prompt=False, templates=DEFAULT_TEMPLATES) -> PromptLabelPair:
    _check(task, strategy)
    if not class_name or not str(class_name).strip():
        raise InvalidInputError("class_name must be non-empty")
    q = quantize(value, strategy, task)
    if strategy == "text":
        q = q.lower()
    shown = templates.fixed_class if fixed_prompt else class_name
    return PromptLabelPair(
        prompt=templates.prompt(task).format(class_name=shown),
        label=templates.label(task).format(label=q),
        task=task,
        class_name=class_name,
        value=float(value),
        strategy=strategy,
    )


def parse_caption(caption: str, task: str, strategy: str) -> float:
    """Extract the numeric prediction from a generated caption."""
    _check(task, strategy)
    words = caption.strip().split()
    if not words:
        raise ParseError("empty caption")
    last = words[-1].rstrip(".!,;:") if strategy == "text" else words[-1]
    if strategy == "text":
        try:
            return float(_ACR_LOOKUP[last.lower()])
        except KeyError:
            raise ParseError(f"{last!r} is not an ACR category word") from None
    if not _NUMBER.fullmatch(last):
        raise ParseError(f"{last!r} is not a decimal number")
    return float(last)


def mushra_to_mos(score: float) -> float:
    """Map a 0-100 MUSHRA score linearly onto the 1-5 ACR scale."""
    if not 0.0 <= score <= 100.0:
        raise RangeError(f"MUSHRA score {score} outside [0, 100]")
    return 1.0 + 4.0 * score / 100.0
