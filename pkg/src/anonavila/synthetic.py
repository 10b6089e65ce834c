"""Synthetic embedding datasets with a tunable normal/abnormal gap.

Two orthonormal anchors ``a_n`` and ``a_a`` are drawn once per seed. Normal
terms scatter around ``a_n`` and abnormal terms around ``a_a``. Normal
images sit at ``a_n``; abnormal images are rotated towards ``a_a`` by
``cluster_separation`` radians. Every image gets isotropic Gaussian noise
with expected norm ``noise_sigma``; nothing is renormalized afterwards.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .embedding_store import EmbeddingRecord, EmbeddingSet, Kind, Label, write_embedding_set
from .errors import ValidationError
from .term_pool import Category, TermPool, save_term_pool


@dataclass
class SynthConfig:
    dim: int = 512
    n_normal_terms: int = 20
    n_abnormal_terms: int = 10
    n_train: int = 5000
    n_val: int = 500
    n_test_normal: int = 100
    n_test_abnormal: int = 100
    cluster_separation: float = 0.3
    noise_sigma: float = 0.3
    term_sigma: float = 0.5
    slide_grid: int = 10
    patches_per_slide: int = 25
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_normal_terms, self.n_abnormal_terms, self.n_train, self.n_val,
                  self.n_test_normal, self.n_test_abnormal, self.patches_per_slide)
        if min(counts) < 1:
            raise ValidationError("all counts must be >= 1")
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")
        if self.cluster_separation < 0 or self.noise_sigma < 0 or self.term_sigma < 0:
            raise ValidationError("separation and noise scales must be >= 0")
        if math.ceil(math.sqrt(self.patches_per_slide)) > self.slide_grid:
            raise ValidationError("patches_per_slide does not fit in the slide grid")


@dataclass
class SynthData:
    config: SynthConfig
    normal_pool: TermPool
    abnormal_pool: TermPool
    text_normal: EmbeddingSet
    text_abnormal: EmbeddingSet
    train: EmbeddingSet
    val: EmbeddingSet
    test: EmbeddingSet

    def write(self, out_dir) -> dict:
        """Write all files into ``out_dir``; returns ``{role: path}``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "terms_normal": out / "terms_normal.json",
            "terms_abnormal": out / "terms_abnormal.json",
            "text_normal": out / "text_normal.nave",
            "text_abnormal": out / "text_abnormal.nave",
            "train": out / "train.nave",
            "val": out / "val.nave",
            "test": out / "test.nave",
            "config": out / "synth_config.json",
        }
        save_term_pool(self.normal_pool, paths["terms_normal"])
        save_term_pool(self.abnormal_pool, paths["terms_abnormal"])
        for role in ("text_normal", "text_abnormal", "train", "val", "test"):
            write_embedding_set(getattr(self, role), paths[role])
        paths["config"].write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n")
        return {k: str(v) for k, v in paths.items()}


def _slide_cells(n: int, cfg: SynthConfig, rng):
    """Yield ``(slide_index, (row, col))`` placing patches in square-ish blocks."""
    side = math.ceil(math.sqrt(cfg.patches_per_slide))
    for start in range(0, n, cfg.patches_per_slide):
        r0, c0 = rng.integers(0, cfg.slide_grid - side + 1, size=2)
        for k in range(min(cfg.patches_per_slide, n - start)):
            yield start // cfg.patches_per_slide, (int(r0 + k // side), int(c0 + k % side))


def _images(rng, mean, n, cfg):
    noise = rng.standard_normal((n, cfg.dim)) * (cfg.noise_sigma / math.sqrt(cfg.dim))
    return (mean + noise).astype(np.float32)


def _terms(rng, anchor, n, cfg):
    noise = rng.standard_normal((n, cfg.dim)) * (cfg.term_sigma / math.sqrt(cfg.dim))
    return (anchor + noise).astype(np.float32)


def generate(config: SynthConfig | None = None) -> SynthData:
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, 2)))
    a_n, a_a = q[:, 0], q[:, 1]
    theta = cfg.cluster_separation
    mu_normal = a_n
    mu_abnormal = math.cos(theta) * a_n + math.sin(theta) * a_a

    normal_pool = TermPool(Category.NORMAL, tuple(f"normal term {i + 1:03d}" for i in range(cfg.n_normal_terms)))
    abnormal_pool = TermPool(Category.ABNORMAL,
                             tuple(f"abnormal term {i + 1:03d}" for i in range(cfg.n_abnormal_terms)))
    text_normal = EmbeddingSet(cfg.dim, [
        EmbeddingRecord(t, v) for t, v in zip(normal_pool.terms, _terms(rng, a_n, cfg.n_normal_terms, cfg))
    ], Kind.TERM_TEXTS)
    text_abnormal = EmbeddingSet(cfg.dim, [
        EmbeddingRecord(t, v) for t, v in zip(abnormal_pool.terms, _terms(rng, a_a, cfg.n_abnormal_terms, cfg))
    ], Kind.TERM_TEXTS)

    def split(name, parts):
        records = []
        n_slides = 0
        for label, mean, n in parts:
            vecs = _images(rng, mean, n, cfg)
            for i, (slide, grid) in enumerate(_slide_cells(n, cfg, rng)):
                records.append(EmbeddingRecord(
                    f"{name}_{len(records):05d}", vecs[i], grid, label,
                    f"{name}_{label.text}_{n_slides + slide:03d}"))
            n_slides += -(-n // cfg.patches_per_slide)
        return EmbeddingSet(cfg.dim, records, Kind.IMAGE_PATCHES)

    train = split("train", [(Label.NORMAL, mu_normal, cfg.n_train)])
    val = split("val", [(Label.NORMAL, mu_normal, cfg.n_val)])
    test = split("test", [(Label.NORMAL, mu_normal, cfg.n_test_normal),
                          (Label.ABNORMAL, mu_abnormal, cfg.n_test_abnormal)])
    return SynthData(cfg, normal_pool, abnormal_pool, text_normal, text_abnormal, train, val, test)
