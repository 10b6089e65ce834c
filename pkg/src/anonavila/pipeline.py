"""In-memory end-to-end run: train, fit centroids, score, aggregate, evaluate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding_store import align_text_embeddings
from .evaluation import Metric, MetricResult, auroc, bootstrap_ci, labeled
from .mlp import MlpModel, init_model
from .scoring import Centroids, Combiner, compute_centroids, score_set
from .synthetic import SynthData
from .trainer import TrainConfig, TrainReport, train
from .wsi import score_slides


@dataclass
class PipelineResult:
    model: MlpModel
    report: TrainReport
    centroids: Centroids
    patches: list
    slides: list
    patch_auroc: float
    slide_auroc: dict = field(default_factory=dict)  # "a_max"/"a_top1" -> AUROC
    metrics: dict = field(default_factory=dict)  # (subject, Metric) -> MetricResult


def benchmark_train_config(seed: int = 0) -> TrainConfig:
    """Batch 100, lr 1e-3, one epoch; accumulation scaled to 5 batches for desk-size data."""
    return TrainConfig(batch_size=100, accumulation_batches=5, epochs=1, learning_rate=1e-3, seed=seed)


def run_synthetic(data: SynthData, train_config: TrainConfig | None = None, model_seed: int = 0,
                  combiner=Combiner.SUM, erosion: bool = True, normal_pool_only: bool = False,
                  bootstrap: int = 0, bootstrap_seed: int = 0) -> PipelineResult:
    """Run the full pipeline on generated data.

    ``normal_pool_only`` drops the abnormal pool and feeds the normal pool
    into both slots, so the model gets no abnormal-term knowledge.
    """
    nt = align_text_embeddings(data.normal_pool, data.text_normal)
    at = nt if normal_pool_only else align_text_embeddings(data.abnormal_pool, data.text_abnormal)
    model, report = train(init_model(model_seed), data.train, nt, at,
                          train_config or benchmark_train_config())
    cents = compute_centroids(model, data.val, nt, at)
    patches = score_set(model, data.test, nt, at, cents, combiner)
    slides = score_slides(patches, erosion)
    ps, py = labeled(patches)
    res = PipelineResult(model, report, cents, patches, slides, auroc(ps, py))
    for attr in ("a_max", "a_top1"):
        s, y = labeled(slides, attr)
        res.slide_auroc[attr] = auroc(s, y)
    if bootstrap:
        res.metrics[("patch", Metric.AUROC)] = bootstrap_ci(ps, py, Metric.AUROC, bootstrap, seed=bootstrap_seed)
        for attr in ("a_max", "a_top1"):
            s, y = labeled(slides, attr)
            for m in Metric:
                res.metrics[(attr, m)] = bootstrap_ci(s, y, m, bootstrap, seed=bootstrap_seed)
    return res
