"""Run configuration: a flat INI file with an explicit schema.

The ``[semiq]`` section holds run settings; an optional ``[templates]``
section overrides prompt/label templates. Unknown sections or keys are
rejected, and every value is validated before any file is touched.

Example::

    [semiq]
    task = snr
    sample_rate = 16000
    seconds = 1
    corpus = corpus/manifest.jsonl
    count_train = 720
    count_val = 40
    count_test = 40
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .augment import AUGMENTATION_KINDS
from .errors import ConfigError
from .labelcodec import DEFAULT_TEMPLATES, STRATEGIES, TASKS, Templates

SECTION = "semiq"
POLICIES = ("exclude", "midpoint-impute")
OUTPUT_KINDS = ("mos_like", "distance", "snr_db")


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _names(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _groups(s):
    """``speech: a, b; mixed: c`` -> ``{"speech": ("a", "b"), "mixed": ("c",)}``."""
    out = {}
    for part in s.split(";"):
        if not part.strip():
            continue
        name, _, members = part.partition(":")
        if not name.strip() or not members.strip():
            raise ValueError(f"bad group spec {part!r}")
        out[name.strip()] = _names(members)
    return out


_PARSERS = {int: int, float: float, str: str, bool: _bool}


@dataclass(frozen=True)
class RunConfig:
    # audio
    sample_rate: int = 44100
    seconds: float | None = None  # None: 7 s for quality data, 5 s for SNR data
    n_mels: int = 64
    seed: int = 0
    # labels
    task: str = "snr"
    strategy: str = "numeric"
    fixed_prompt: bool = False
    snr_range: tuple = (-20.0, 20.0)
    # paths
    corpus: str = ""
    input: str = ""
    references: str = ""
    predictions: str = ""
    checkpoint: str = ""
    out: str = ""
    split: str = ""
    # SNR simulation
    folds_train: tuple = (1, 2, 3)
    folds_val: tuple = (4,)
    folds_test: tuple = (5,)
    count_train: int = 72000
    count_val: int = 4000
    count_test: int = 4000
    # quality simulation and pseudo-labelling
    augmentations: tuple = AUGMENTATION_KINDS
    quality_count_train: int = 2000
    quality_count_val: int = 500
    codec_mp3: str = ""
    codec_vorbis: str = ""
    codec_opus: str = ""
    metric: str = "lsd"
    metric_command: str = ""
    metric_rate: int = 48000
    metric_kind: str = "mos_like"
    calibration: tuple = (1.0, 12.0)
    benchmark: tuple = ("lsd",)
    # toy model and training
    d: int = 32
    prefix_audio: int = 4
    prefix_text: int = 4
    mapper_hidden: int = 64
    ff_hidden: int = 128
    n_layers: int = 1
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 15
    batch_size: int = 96
    # evaluation
    policy: str = "exclude"
    dataset_key: str = ""
    groups: dict = field(default_factory=dict)
    templates: Templates = DEFAULT_TEMPLATES

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.sample_rate > 0, "sample_rate must be positive")
        need(self.seconds is None or self.seconds > 0, "seconds must be positive")
        need(self.n_mels >= 1, "n_mels must be >= 1")
        need(self.task in TASKS, f"task must be one of {TASKS}")
        need(self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}")
        need(not (self.task == "snr" and self.strategy == "text"), "the text strategy is only defined for MOS")
        need(len(self.snr_range) == 2 and self.snr_range[0] < self.snr_range[1], "snr_range must be 'lo, hi' with lo < hi")
        need(self.split in ("", "train", "val", "test"), "split must be train, val, test or empty")
        for name in ("count_train", "count_val", "count_test", "quality_count_train", "quality_count_val"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0")
        unknown = set(self.augmentations) - set(AUGMENTATION_KINDS)
        need(not unknown, f"unknown augmentations {sorted(unknown)}")
        need(self.metric_rate > 0, "metric_rate must be positive")
        need(self.metric_kind in OUTPUT_KINDS, f"metric_kind must be one of {OUTPUT_KINDS}")
        need(len(self.calibration) == 2 and self.calibration[0] < self.calibration[1], "calibration must be 'd0, d1' with d0 < d1")
        for name in ("d", "prefix_audio", "prefix_text", "mapper_hidden", "ff_hidden", "n_layers", "batch_size"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1")
        need(self.epochs >= 0, "epochs must be >= 0")
        need(self.learning_rate > 0, "learning_rate must be positive")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.policy in POLICIES, f"policy must be one of {POLICIES}")

    # derived values

    def fold_map(self) -> dict:
        return {"train": list(self.folds_train), "val": list(self.folds_val), "test": list(self.folds_test)}

    def snr_counts(self) -> dict:
        return {"train": self.count_train, "val": self.count_val, "test": self.count_test}

    def quality_counts(self) -> dict:
        return {"train": self.quality_count_train, "val": self.quality_count_val}

    def codec_templates(self) -> dict:
        return {k: getattr(self, f"codec_{k}") for k in ("mp3", "vorbis", "opus") if getattr(self, f"codec_{k}")}

    def model_dims(self) -> dict:
        names = ("d", "prefix_audio", "prefix_text", "mapper_hidden", "ff_hidden", "n_layers")
        return {n: getattr(self, n) for n in names}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["templates"] = asdict(self.templates)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


_SPECIAL = {
    "seconds": _opt_float,
    "snr_range": _floats,
    "calibration": _floats,
    "folds_train": _ints,
    "folds_val": _ints,
    "folds_test": _ints,
    "augmentations": _names,
    "benchmark": _names,
    "groups": _groups,
}

KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "templates")


def _parse_value(key, raw):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parser = _SPECIAL.get(key)
    if parser is None:
        parser = _PARSERS[type(getattr(RunConfig, key))]
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` -> typed dict."""
    out = {}
    for p in pairs or ():
        key, sep, raw = p.partition("=")
        if not sep:
            raise ConfigError(f"override {p!r} is not key=value")
        out[key.strip()] = _parse_value(key.strip(), raw.strip())
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    templates = DEFAULT_TEMPLATES
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        extra = set(cp.sections()) - {SECTION, "templates"}
        if extra:
            raise ConfigError(f"unknown config sections {sorted(extra)}")
        if cp.has_section(SECTION):
            for key, raw in cp.items(SECTION):
                values[key] = _parse_value(key, raw)
        if cp.has_section("templates"):
            known = set(Templates.__dataclass_fields__)
            tpl = dict(cp.items("templates"))
            if set(tpl) - known:
                raise ConfigError(f"unknown template keys {sorted(set(tpl) - known)}")
            templates = replace(DEFAULT_TEMPLATES, **tpl)
    values.update(overrides or {})
    try:
        return RunConfig(templates=templates, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
