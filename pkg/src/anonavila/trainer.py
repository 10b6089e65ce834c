"""One-epoch contrastive training on normal images, with gradient accumulation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .augmentation import augment_backward, augment_batch
from .contrastive import loss, loss_and_grad
from .embedding_store import EmbeddingSet, Kind, Label
from .errors import (
    AbnormalInTraining,
    BatchTooSmall,
    CheckFailed,
    InsufficientData,
    ValidationError,
)
from .mlp import AdamState, MlpModel, adam_step, init_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 100
    accumulation_batches: int = 100
    epochs: int = 1
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise BatchTooSmall(f"batch_size must be >= 2, got {self.batch_size}")
        if self.accumulation_batches < 1:
            raise ValidationError("accumulation_batches must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")


@dataclass
class TrainReport:
    batch_losses: list = field(default_factory=list)
    update_losses: list = field(default_factory=list)  # mean batch loss per optimizer update
    n_updates: int = 0
    duration_s: float = 0.0
    final_epoch_mean_loss: float = math.nan

    @property
    def initial_batch_loss(self) -> float:
        return self.batch_losses[0] if self.batch_losses else math.nan

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        d["initial_batch_loss"] = self.initial_batch_loss
        if not timing:
            d.pop("duration_s")
        return d


def composite_loss(model: MlpModel, images, normal_terms, abnormal_terms) -> float:
    hn, _ = augment_batch(model, images, normal_terms)
    ha, _ = augment_batch(model, images, abnormal_terms)
    return loss(hn, ha)[0]


def composite_loss_and_grad(model: MlpModel, images, normal_terms, abnormal_terms):
    """Batch loss and its float64 gradient w.r.t. every MLP parameter."""
    hn, cn = augment_batch(model, images, normal_terms)
    ha, ca = augment_batch(model, images, abnormal_terms)
    value, _, g_hn, g_ha = loss_and_grad(hn, ha)
    grads_n = augment_backward(model, cn, g_hn)
    grads_a = augment_backward(model, ca, g_ha)
    return value, [a + b for a, b in zip(grads_n, grads_a)]


def _check_training_set(images: EmbeddingSet) -> None:
    if images.kind is not Kind.IMAGE_PATCHES:
        raise ValidationError("training set must contain image patches")
    for rec in images.records:
        if rec.label is Label.ABNORMAL:
            raise AbnormalInTraining(f"record {rec.id!r} is labeled abnormal")


def train(model: MlpModel, normal_images, normal_terms, abnormal_terms,
          config: Optional[TrainConfig] = None, grad_fn: Callable = composite_loss_and_grad):
    """Train a copy of ``model``; returns ``(trained_model, report)``.

    ``normal_images`` is an EmbeddingSet (labels checked) or a plain array.
    Gradients are averaged over each accumulation window before one Adam
    step; a partial window at the end of an epoch is flushed the same way.
    A trailing partial batch is dropped.
    """
    config = config or TrainConfig()
    if isinstance(normal_images, EmbeddingSet):
        _check_training_set(normal_images)
        x = normal_images.vectors
    else:
        x = np.asarray(normal_images)
    x = x.astype(np.float64)
    n_batches = x.shape[0] // config.batch_size
    if n_batches < 1:
        raise InsufficientData(f"{x.shape[0]} images < batch size {config.batch_size}")
    normal_terms = np.asarray(normal_terms, dtype=np.float64)
    abnormal_terms = np.asarray(abnormal_terms, dtype=np.float64)

    model = model.copy()
    state = AdamState.zeros_like(model, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    t0 = time.perf_counter()
    work = model.astype(np.float64)

    def flush(acc, window):
        nonlocal work
        adam_step(model, state, [g / len(window) for g in acc])
        work = model.astype(np.float64)
        report.update_losses.append(float(np.mean(window)))
        report.n_updates += 1

    for epoch in range(config.epochs):
        order = rng.permutation(x.shape[0]) if config.shuffle else np.arange(x.shape[0])
        acc, window, epoch_losses = None, [], []
        for k in range(n_batches):
            idx = order[k * config.batch_size:(k + 1) * config.batch_size]
            value, grads = grad_fn(work, x[idx], normal_terms, abnormal_terms)
            acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
            window.append(value)
            epoch_losses.append(value)
            if len(window) == config.accumulation_batches:
                flush(acc, window)
                acc, window = None, []
        if window:
            flush(acc, window)
        report.batch_losses.extend(epoch_losses)
        report.final_epoch_mean_loss = float(np.mean(epoch_losses))
        log.info("epoch %d: mean loss %.6f over %d batches", epoch + 1,
                 report.final_epoch_mean_loss, len(epoch_losses))
    report.duration_s = time.perf_counter() - t0
    return model, report


@dataclass
class GradCheckConfig:
    seed: int = 0
    batch_size: int = 3
    n_normal_terms: int = 4
    n_abnormal_terms: int = 3
    dim: int = 512
    n_coords: int = 200
    step: float = 1e-4
    rtol: float = 1e-4
    floor: float = 1e-8  # denominator floor for near-zero gradients


@dataclass
class GradCheckReport:
    n_checked: int
    n_skipped: int  # coordinates whose +-step straddles a ReLU kink
    max_rel_error: float
    worst: list  # (tensor, flat_index, analytic, numeric, rel_error), worst first


def _loss_and_pattern(model, images, nt, at):
    hn, cn = augment_batch(model, images, nt)
    ha, ca = augment_batch(model, images, at)
    pattern = np.concatenate([
        (c.mlp_cache.z1 > 0).ravel() for c in (cn, ca)
    ] + [(c.mlp_cache.z2 > 0).ravel() for c in (cn, ca)])
    return loss(hn, ha)[0], pattern


def tiny_setup(config: GradCheckConfig):
    rng = np.random.default_rng(config.seed)
    model = init_model(config.seed, (2 * config.dim, 512, 256, 128), dtype=np.float64) \
        if config.dim != 512 else init_model(config.seed, dtype=np.float64)
    # nonzero biases so bias paths are exercised too
    for b in model.biases:
        b[:] = rng.normal(scale=0.05, size=b.shape)
    images = rng.standard_normal((config.batch_size, config.dim))
    nt = rng.standard_normal((config.n_normal_terms, config.dim))
    at = rng.standard_normal((config.n_abnormal_terms, config.dim))
    return model, images, nt, at


def end_to_end_gradient_check(config: Optional[GradCheckConfig] = None, model=None, images=None,
                              normal_terms=None, abnormal_terms=None, coords="sample",
                              grad_fn: Callable = composite_loss_and_grad) -> GradCheckReport:
    """Compare analytic parameter gradients of the full loss with central differences.

    Coordinates are drawn evenly across the six parameter tensors; with
    ``coords="all"`` every parameter is checked (for toy-width models).
    Coordinates where the ReLU activation pattern differs between the two
    perturbed evaluations are skipped and replaced. Raises CheckFailed.
    """
    config = config or GradCheckConfig()
    if model is None:
        model, images, normal_terms, abnormal_terms = tiny_setup(config)
    model = model.astype(np.float64)
    _, analytic = grad_fn(model, images, normal_terms, abnormal_terms)
    params = model.params()
    rng = np.random.default_rng(config.seed + 1)

    if coords == "all":
        plan = [(t, np.arange(p.size)) for t, p in enumerate(params)]
        quota = {t: p.size for t, p in enumerate(params)}
    else:
        per = -(-config.n_coords // len(params))
        plan = [(t, rng.permutation(p.size)) for t, p in enumerate(params)]
        quota = {t: min(per, p.size) for t, p in enumerate(params)}

    results, skipped = [], 0
    for t, candidates in plan:
        p = params[t].reshape(-1)
        done = 0
        for j in candidates:
            if done >= quota[t]:
                break
            old = p[j]
            p[j] = old + config.step
            f_plus, pat_plus = _loss_and_pattern(model, images, normal_terms, abnormal_terms)
            p[j] = old - config.step
            f_minus, pat_minus = _loss_and_pattern(model, images, normal_terms, abnormal_terms)
            p[j] = old
            if not np.array_equal(pat_plus, pat_minus):
                skipped += 1
                continue
            num = (f_plus - f_minus) / (2 * config.step)
            ana = float(analytic[t].reshape(-1)[j])
            rel = abs(ana - num) / max(abs(ana), abs(num), config.floor)
            results.append((t, int(j), ana, num, rel))
            done += 1

    results.sort(key=lambda r: -r[4])
    report = GradCheckReport(len(results), skipped, results[0][4] if results else 0.0, results[:10])
    bad = [r for r in results if r[4] > config.rtol]
    if bad:
        raise CheckFailed(
            f"{len(bad)} of {len(results)} coordinates exceed rtol {config.rtol}; "
            f"worst rel error {bad[0][4]:.3e}", worst=bad[:10])
    return report
