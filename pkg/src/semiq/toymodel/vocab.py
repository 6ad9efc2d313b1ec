"""Word-level vocabulary with digit-level number tokens."""

from __future__ import annotations

import re

from ..errors import TokenizationError
from ..labelcodec import ACR_WORDS, DEFAULT_TEMPLATES, Templates

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)
NUMBER_CHARS = tuple("0123456789") + (".", "-")

_NUMERIC = re.compile(r"[-+]?[0-9.]+")


def _split_word(word):
    if _NUMERIC.fullmatch(word):
        return list(word.lstrip("+"))
    return [word]


def split_text(text: str) -> list:
    out = []
    for w in text.split():
        out.extend(_split_word(w))
    return out


def _template_words(templates: Templates):
    words = []
    for t in (templates.mos_prompt, templates.mos_label, templates.snr_prompt, templates.snr_label):
        for w in t.replace("{class_name}", " ").replace("{label}", " ").split():
            words.append(w)
    words.extend(templates.fixed_class.split())
    return words


class Vocabulary:
    """Dense token ids; ``<pad>``=0, ``<bos>``=1, ``<eos>``=2."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:3] != list(SPECIALS):
            raise ValueError("vocabulary must start with <pad>, <bos>, <eos>")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    pad_id, bos_id, eos_id = 0, 1, 2

    @classmethod
    def build(cls, class_names=(), templates: Templates = DEFAULT_TEMPLATES) -> "Vocabulary":
        ordered = list(SPECIALS)
        seen = set(ordered)
        words = _template_words(templates) + [w.lower() for w in ACR_WORDS] + list(ACR_WORDS) + list(NUMBER_CHARS)
        for c in class_names:
            words.extend(c.split())
        for w in words:
            if w not in seen:
                seen.add(w)
                ordered.append(w)
        return cls(ordered)

    def __len__(self):
        return len(self.tokens)

    def tokenize(self, text: str) -> list:
        ids = []
        for piece in split_text(text):
            try:
                ids.append(self.token_to_id[piece])
            except KeyError:
                raise TokenizationError(f"out-of-vocabulary token {piece!r}") from None
        return ids

    def detokenize(self, ids) -> str:
        words = []
        prev_numeric = False
        for i in ids:
            tok = self.tokens[int(i)]
            if tok in SPECIALS:
                continue
            numeric = tok in NUMBER_CHARS
            if numeric and prev_numeric:
                words[-1] += tok
            else:
                words.append(tok)
            prev_numeric = numeric
        return " ".join(words)
