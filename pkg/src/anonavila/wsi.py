"""Slide heatmaps: assembly, masked 3x3 erosion, slide-level scores, z-scoring."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .embedding_store import Label
from .errors import DegenerateReference, DuplicateCell, MissingGrid, ValidationError


@dataclass
class Heatmap:
    slide_id: Optional[str]
    values: np.ndarray  # (rows, cols) float64; NaN where invalid
    valid: np.ndarray  # (rows, cols) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape or 0 in self.values.shape:
            raise ValidationError("heatmap values/valid must be matching non-empty 2-D grids")
        if not self.valid.any():
            raise ValidationError("heatmap has no valid cell")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValidationError("non-finite value in a valid heatmap cell")
        self.values = np.where(self.valid, self.values, np.nan)

    @property
    def shape(self):
        return self.values.shape

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]


@dataclass
class SlideScore:
    slide_id: Optional[str]
    a_max: float
    a_top1: float
    n_patches: int
    label: Label = field(default=Label.UNKNOWN)


def build_heatmap(scored: Sequence, slide_id: Optional[str] = None) -> Heatmap:
    """Grid sized to the largest coordinates + 1; ``scored`` items need ``grid`` and ``score``."""
    if not scored:
        raise ValidationError("no patches for heatmap")
    cells = {}
    for p in scored:
        if p.grid is None:
            raise MissingGrid(f"patch {p.patch_id!r} has no grid position")
        if p.grid in cells:
            raise DuplicateCell(f"two patches at cell {p.grid}")
        cells[p.grid] = p.score
    rows = 1 + max(r for r, _ in cells)
    cols = 1 + max(c for _, c in cells)
    values = np.full((rows, cols), np.nan)
    valid = np.zeros((rows, cols), dtype=bool)
    for (r, c), s in cells.items():
        values[r, c] = s
        valid[r, c] = True
    if slide_id is None:
        slide_id = getattr(scored[0], "slide_id", None)
    return Heatmap(slide_id, values, valid)


def erode(hm: Heatmap) -> Heatmap:
    """3x3 min filter where invalid neighbours (and off-grid cells) are ignored."""
    padded = np.pad(np.where(hm.valid, hm.values, np.inf), 1, constant_values=np.inf)
    mins = sliding_window_view(padded, (3, 3)).min(axis=(2, 3))
    return Heatmap(hm.slide_id, np.where(hm.valid, mins, np.nan), hm.valid.copy())


def top_fraction_count(n: int, fraction_pct: int = 1) -> int:
    """``ceil(n * pct / 100)``, at least 1, in integer arithmetic."""
    return max(1, -(-n * fraction_pct // 100))


def slide_score(hm: Heatmap, apply_erosion: bool = True, label: Label = Label.UNKNOWN) -> SlideScore:
    src = erode(hm) if apply_erosion else hm
    vals = np.sort(src.valid_values())[::-1]
    k = top_fraction_count(vals.size)
    return SlideScore(hm.slide_id, float(vals[0]), float(vals[:k].mean()), int(vals.size), label)


def group_by_slide(scored: Sequence) -> dict:
    """Patches grouped by slide id, preserving first-appearance order."""
    groups: dict = {}
    for p in scored:
        groups.setdefault(p.slide_id, []).append(p)
    return groups


def slide_label(patches) -> Label:
    labels = {Label(p.label) for p in patches}
    if Label.ABNORMAL in labels:
        return Label.ABNORMAL
    if labels == {Label.NORMAL}:
        return Label.NORMAL
    return Label.UNKNOWN


def score_slides(scored: Sequence, apply_erosion: bool = True) -> list:
    out = []
    for sid, patches in group_by_slide(scored).items():
        out.append(slide_score(build_heatmap(patches, sid), apply_erosion, slide_label(patches)))
    return out


def reference_stats(reference_scores) -> tuple:
    ref = np.asarray(reference_scores, dtype=np.float64).ravel()
    if ref.size < 2:
        raise DegenerateReference("need at least two reference scores")
    mu = ref.mean()
    sigma = np.sqrt(np.mean((ref - mu) ** 2))
    if sigma == 0:
        raise DegenerateReference("reference scores have zero standard deviation")
    return float(mu), float(sigma)


def zscore_normalize(maps: Sequence[Heatmap], reference_scores) -> list:
    """Map valid cells to ``(v - mean) / std`` using population statistics of the reference."""
    mu, sigma = reference_stats(reference_scores)
    return [Heatmap(m.slide_id, (m.values - mu) / sigma, m.valid.copy()) for m in maps]


def to_gray(hm: Heatmap, normalized: bool = False) -> np.ndarray:
    """8-bit grayscale; z-scored maps use the fixed window [-3, 3]."""
    v = hm.values
    if normalized:
        lo, hi = -3.0, 3.0
        v = np.clip(v, lo, hi)
    else:
        vals = hm.valid_values()
        lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo
    scaled = np.full(v.shape, 255.0) if span == 0 else (v - lo) / span * 255.0
    return np.where(hm.valid, np.rint(np.nan_to_num(scaled)), 0).astype(np.uint8)


def write_pgm(hm: Heatmap, path, normalized: bool = False) -> None:
    img = to_gray(hm, normalized)
    rows, cols = img.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + img.tobytes())


def write_heatmap_csv(hm: Heatmap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "value", "valid"])
        rows, cols = hm.shape
        for r in range(rows):
            for c in range(cols):
                ok = bool(hm.valid[r, c])
                w.writerow([r, c, repr(float(hm.values[r, c])) if ok else "", int(ok)])


def read_heatmap_csv(path, slide_id=None) -> Heatmap:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    nr = 1 + max(int(r["row"]) for r in rows)
    nc = 1 + max(int(r["col"]) for r in rows)
    values = np.full((nr, nc), np.nan)
    valid = np.zeros((nr, nc), dtype=bool)
    for r in rows:
        if r["valid"] == "1":
            i, j = int(r["row"]), int(r["col"])
            values[i, j] = float(r["value"])
            valid[i, j] = True
    return Heatmap(slide_id, values, valid)


SLIDE_FIELDS = ["slide_id", "a_max", "a_top1", "n_patches", "label"]


def write_slide_scores_csv(scores: Sequence[SlideScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SLIDE_FIELDS)
        for s in scores:
            w.writerow([s.slide_id or "", repr(s.a_max), repr(s.a_top1), s.n_patches, Label(s.label).text])


def read_slide_scores_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [SlideScore(r["slide_id"] or None, float(r["a_max"]), float(r["a_top1"]),
                           int(r["n_patches"]), Label.parse(r["label"]))
                for r in csv.DictReader(fh)]
