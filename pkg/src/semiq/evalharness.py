"""Pearson / RMSE metrics, random baselines and grouped evaluation reports."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AlignmentError, DegenerateInputError, InvalidInputError, NoDataError


def _pair(x, y, min_len):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise AlignmentError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise InvalidInputError(f"need at least {min_len} values, got {x.size}")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("Pearson correlation undefined for a constant vector")
    r = np.dot(dx, dy) / (math.sqrt(sxx) * math.sqrt(syy))
    return float(np.clip(r, -1.0, 1.0))


def rmse(x, y) -> float:
    x, y = _pair(x, y, 1)
    d = x - y
    return float(math.sqrt(np.dot(d, d) / d.size))


def random_baseline_closed_form(snr_range) -> float:
    """RMSE of independent uniform guesses against uniform targets on one range."""
    lo, hi = snr_range
    return (hi - lo) / math.sqrt(6.0)


def random_baseline_rmse(snr_range, n, seed=None) -> float:
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    lo, hi = snr_range
    rng = np.random.default_rng(seed)
    return rmse(rng.uniform(lo, hi, n), rng.uniform(lo, hi, n))


@dataclass
class DatasetScore:
    pearson_r: float | None
    rmse: float | None
    n: int
    parse_failures: int


@dataclass
class MetricReport:
    per_dataset: dict = field(default_factory=dict)
    group_averages: dict = field(default_factory=dict)
    overall: float | None = None
    overall_rmse: float | None = None
    parse_failures: int = 0
    n: int = 0
    n_joined: int = 0

    @property
    def parse_failure_rate(self) -> float:
        return self.parse_failures / self.n_joined if self.n_joined else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["parse_failure_rate"] = self.parse_failure_rate
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        def fmt(v):
            return "   n/a" if v is None else f"{v:6.3f}"

        width = max([len("dataset")] + [len(k) for k in self.per_dataset] + [len(k) for k in self.group_averages])
        lines = [f"{'dataset':<{width}}  pearson    rmse      n  fail"]
        for name, s in self.per_dataset.items():
            lines.append(f"{name:<{width}}  {fmt(s.pearson_r)}  {fmt(s.rmse)}  {s.n:5d}  {s.parse_failures:4d}")
        for name, r in self.group_averages.items():
            lines.append(f"{name:<{width}}  {fmt(r)}")
        lines.append(f"{'overall':<{width}}  {fmt(self.overall)}  {fmt(self.overall_rmse)}  {self.n:5d}  {self.parse_failures:4d}")
        return "\n".join(lines)


def _dataset_of(ref, dataset_key):
    if callable(dataset_key):
        return dataset_key(ref)
    if dataset_key:
        if dataset_key.startswith("meta."):
            return str(ref.get("meta", {})[dataset_key[5:]])
        return str(ref[dataset_key])
    meta = ref.get("meta") or {}
    return str(meta.get("dataset", ref.get("class_name", "all")))


def _safe_pearson(x, y):
    try:
        return pearson(x, y)
    except (DegenerateInputError, InvalidInputError):
        return None


def evaluate_run(predictions, references, groups=None, dataset_key=None, policy="exclude", value_range=(1.0, 5.0)) -> MetricReport:
    """Join predictions ``{id, value}`` to references ``{id, target, ...}`` and score them.

    ``value`` of ``None`` (or NaN) marks a caption that failed to parse. With
    ``policy="exclude"`` those pairs are dropped from the metrics but counted;
    ``"midpoint-impute"`` substitutes the midpoint of ``value_range``.

    ``groups`` maps a group name to the dataset names it averages (unweighted).
    ``overall`` is the mean of the group averages when groups are given,
    otherwise the mean over datasets.
    """
    if policy not in ("exclude", "midpoint-impute"):
        raise InvalidInputError(f"unknown parse-failure policy {policy!r}")
    # rows without a "value" key (e.g. a reference manifest) fall back to "target"
    preds = {str(p["id"]): p["value"] if "value" in p else p.get("target") for p in predictions}
    joined = OrderedDict()
    for ref in references:
        rid = str(ref["id"])
        if rid not in preds:
            continue
        joined.setdefault(_dataset_of(ref, dataset_key), []).append((rid, preds[rid], float(ref["target"])))
    if not joined:
        raise NoDataError("no prediction ids matched the references")

    midpoint = 0.5 * (value_range[0] + value_range[1])
    report = MetricReport()
    all_p, all_t = [], []
    for name in sorted(joined):
        ps, ts, failures = [], [], 0
        report.n_joined += len(joined[name])
        # id order makes the floating-point sums independent of input order
        for _, value, target in sorted(joined[name], key=lambda t: t[0]):
            if value is None or not math.isfinite(float(value)):
                failures += 1
                if policy == "exclude":
                    continue
                value = midpoint
            ps.append(float(value))
            ts.append(target)
        report.parse_failures += failures
        if not ps:
            report.per_dataset[name] = DatasetScore(None, None, 0, failures)
            continue
        report.per_dataset[name] = DatasetScore(_safe_pearson(ps, ts), rmse(ps, ts), len(ps), failures)
        all_p += ps
        all_t += ts
    report.n = len(all_p)

    def mean_r(names):
        rs = [report.per_dataset[n].pearson_r for n in names if n in report.per_dataset]
        rs = [r for r in rs if r is not None]
        return float(np.mean(rs)) if rs else None

    if groups:
        for g, names in groups.items():
            report.group_averages[g] = mean_r(names)
        vals = [v for v in report.group_averages.values() if v is not None]
        report.overall = float(np.mean(vals)) if vals else None
    else:
        report.overall = mean_r(report.per_dataset)
    report.overall_rmse = rmse(all_p, all_t) if all_p else None
    return report
