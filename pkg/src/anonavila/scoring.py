"""Centroid-deviation anomaly scores and top-matching term explanations."""
from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augmentation import cosine_matrix, embed_images, term_weights
from .embedding_store import EmbeddingSet, Label
from .errors import AbnormalInValidation, EmptyValidation, FormatError, ZeroNorm
from .mlp import MlpModel


class Combiner(enum.Enum):
    SUM = "sum"
    MAX = "max"
    L2 = "l2"


@dataclass
class Centroids:
    h_bar_normal: np.ndarray
    h_bar_abnormal: np.ndarray
    source_count: int

    def __post_init__(self):
        self.h_bar_normal = np.asarray(self.h_bar_normal, dtype=np.float64)
        self.h_bar_abnormal = np.asarray(self.h_bar_abnormal, dtype=np.float64)
        if self.source_count < 1:
            raise EmptyValidation("centroids need at least one source patch")
        for name, c in (("normal", self.h_bar_normal), ("abnormal", self.h_bar_abnormal)):
            if not np.any(c):
                raise ZeroNorm(f"{name} centroid has zero norm")

    def to_dict(self) -> dict:
        return {
            "h_bar_normal": [float(v) for v in self.h_bar_normal],
            "h_bar_abnormal": [float(v) for v in self.h_bar_abnormal],
            "source_count": self.source_count,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Centroids":
        try:
            d = json.loads(Path(path).read_text())
            return cls(d["h_bar_normal"], d["h_bar_abnormal"], int(d["source_count"]))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: not a centroid file ({exc})") from exc


@dataclass
class ScoredPatch:
    patch_id: str
    d_normal: float
    d_abnormal: float
    score: float
    grid: Optional[tuple] = None
    label: Label = Label.UNKNOWN
    slide_id: Optional[str] = None


def centroids_from_embeddings(h_normal, h_abnormal) -> Centroids:
    h_normal = np.asarray(h_normal, dtype=np.float64)
    if h_normal.shape[0] == 0:
        raise EmptyValidation("no validation patches")
    return Centroids(h_normal.mean(axis=0), np.asarray(h_abnormal, dtype=np.float64).mean(axis=0),
                     h_normal.shape[0])


def compute_centroids(model: MlpModel, validation: EmbeddingSet, normal_terms, abnormal_terms) -> Centroids:
    """Mean text-augmented embeddings of normal validation patches (no renormalization)."""
    if len(validation) == 0:
        raise EmptyValidation("validation set is empty")
    for rec in validation.records:
        if rec.label is Label.ABNORMAL:
            raise AbnormalInValidation(f"record {rec.id!r} is labeled abnormal")
    hn, ha = embed_images(model, validation.vectors, normal_terms, abnormal_terms)
    return centroids_from_embeddings(hn, ha)


def deviations(h, centroid) -> np.ndarray:
    """``1 - cos(h_i, centroid)`` for each row of ``h``."""
    return 1.0 - cosine_matrix(h, centroid)[:, 0]


def deviation(h, centroid) -> float:
    return float(deviations(h, centroid)[0])


def combine(d_normal, d_abnormal, combiner=Combiner.SUM):
    combiner = Combiner(combiner)
    if combiner is Combiner.SUM:
        return np.add(d_normal, d_abnormal)
    if combiner is Combiner.MAX:
        return np.maximum(d_normal, d_abnormal)
    return np.hypot(d_normal, d_abnormal)


def score_embeddings(h_normal, h_abnormal, centroids: Centroids, combiner=Combiner.SUM):
    """Vectorized ``(d_normal, d_abnormal, score)`` arrays."""
    dn = deviations(h_normal, centroids.h_bar_normal)
    da = deviations(h_abnormal, centroids.h_bar_abnormal)
    return dn, da, combine(dn, da, combiner)


def patch_score(pair, centroids: Centroids, combiner=Combiner.SUM, grid=None, label=Label.UNKNOWN,
                slide_id=None) -> ScoredPatch:
    dn, da, s = score_embeddings(pair.h_normal, pair.h_abnormal, centroids, combiner)
    return ScoredPatch(pair.patch_id, float(dn[0]), float(da[0]), float(s[0]), grid, label, slide_id)


def score_set(model: MlpModel, images: EmbeddingSet, normal_terms, abnormal_terms,
              centroids: Centroids, combiner=Combiner.SUM) -> list:
    hn, ha = embed_images(model, images.vectors, normal_terms, abnormal_terms)
    dn, da, s = score_embeddings(hn, ha, centroids, combiner)
    return [
        ScoredPatch(r.id, float(dn[i]), float(da[i]), float(s[i]), r.grid, r.label, r.slide_id)
        for i, r in enumerate(images.records)
    ]


def top_matching_terms(image, terms: Sequence[str], term_vectors, k: int = 5) -> list:
    """The ``k`` highest-weighted terms as ``(term, weight)``, ties by pool order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(terms):
        warnings.warn(f"k={k} exceeds pool size {len(terms)}; clamping", stacklevel=2)
        k = len(terms)
    w = term_weights(image, term_vectors)[0]
    order = np.argsort(-w, kind="stable")[:k]
    return [(terms[i], float(w[i])) for i in order]


SCORE_FIELDS = ["patch_id", "slide_id", "row", "col", "d_normal", "d_abnormal", "score", "label"]


def write_scores_csv(patches: Sequence[ScoredPatch], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for p in patches:
            row, col = p.grid if p.grid is not None else ("", "")
            w.writerow([p.patch_id, p.slide_id or "", row, col, repr(p.d_normal),
                        repr(p.d_abnormal), repr(p.score), Label(p.label).text])


def read_scores_csv(path) -> list:
    out = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != SCORE_FIELDS:
                raise FormatError(f"{path}: header {reader.fieldnames} != {SCORE_FIELDS}")
            for r in reader:
                grid = (int(r["row"]), int(r["col"])) if r["row"] != "" else None
                out.append(ScoredPatch(r["patch_id"], float(r["d_normal"]), float(r["d_abnormal"]),
                                       float(r["score"]), grid, Label.parse(r["label"]),
                                       r["slide_id"] or None))
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
    return out
