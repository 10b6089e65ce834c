"""AUROC / AUPR with percentile-bootstrap confidence intervals."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .embedding_store import Label
from .errors import AllFoldsDegenerate, LengthMismatch, NoPositives, SingleClass


class Metric(enum.Enum):
    AUROC = "auroc"
    AUPR = "aupr"


def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores vs {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (normal) or 1 (abnormal)")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney form: P(s+ > s-) + 0.5 P(s+ = s-), via average ranks."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Step-wise area under the PR curve: sum over descending thresholds of
    ``(recall_k - recall_{k-1}) * precision_k``, tied scores forming one step."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("AUPR needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each tie group
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


_FUNCS = {Metric.AUROC: auroc, Metric.AUPR: aupr}


@dataclass
class MetricResult:
    metric: Metric
    point: float
    ci_low: float
    ci_high: float
    n_bootstrap: int
    skipped_folds: int = 0
    seed: int = 0
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "folds": self.n_bootstrap,
            "skipped_folds": self.skipped_folds,
            "seed": self.seed,
            "level": self.level,
        }

    def cell(self) -> str:
        return f"{self.point:.4f} [{self.ci_low:.2f}, {self.ci_high:.2f}]"


def bootstrap_ci(scores, labels, metric=Metric.AUROC, folds: int = 2000, level: float = 0.95,
                 seed: int = 0) -> MetricResult:
    """Percentile bootstrap; fold ``f`` resamples with ``default_rng((seed, f))``.

    Resamples that lack either class are skipped and counted.
    """
    metric = Metric(metric)
    fn = _FUNCS[metric]
    s, y = _prep(scores, labels)
    point = fn(s, y)
    n = s.size
    vals = []
    skipped = 0
    for f in range(folds):
        idx = np.random.default_rng((seed, f)).integers(0, n, size=n)
        yy = y[idx]
        if yy.min() == yy.max():
            skipped += 1
            continue
        vals.append(fn(s[idx], yy))
    if not vals:
        raise AllFoldsDegenerate(f"all {folds} bootstrap folds were single-class")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(vals, [100 * alpha, 100 * (1 - alpha)])
    return MetricResult(metric, point, float(lo), float(hi), folds, skipped, seed, level)


TABLE_COLUMNS = [
    ("AUROC (A_max)", "a_max", Metric.AUROC),
    ("AUPR (A_max)", "a_max", Metric.AUPR),
    ("AUROC (A_top1%)", "a_top1", Metric.AUROC),
    ("AUPR (A_top1%)", "a_top1", Metric.AUPR),
    ("Patch AUROC", "patch", Metric.AUROC),
]


def format_table(rows: dict) -> str:
    """Plain-text table; ``rows`` maps a method name to ``{(subject, Metric): MetricResult}``."""
    header = ["Method"] + [c[0] for c in TABLE_COLUMNS]
    body = []
    for name, results in rows.items():
        line = [name]
        for _, subject, metric in TABLE_COLUMNS:
            r = results.get((subject, metric))
            line.append(r.cell() if r is not None else "-")
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: " | ".join(v.ljust(w) for v, w in zip(r, widths))  # noqa: E731
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in body]) + "\n"


def labeled(items: Sequence, attr: str = "score"):
    """``(scores, labels)`` from scored patches or slide scores, dropping unknown labels."""
    scores, labels = [], []
    for it in items:
        lab = Label(it.label)
        if lab is Label.UNKNOWN:
            continue
        scores.append(getattr(it, attr))
        labels.append(int(lab is Label.ABNORMAL))
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.int64)
