"""Text-augmented image embeddings.

For one image ``v`` and a pool of text vectors ``t_1..t_n``:

    w_i = softmax_i(cos(v, t_i))
    u_i = rho([v, exp(w_i) * t_i])
    h   = mean_i u_i

The batched path splits the first layer as ``W1 = [W_img | W_txt]`` so that
``W1 @ [v, s*t] = W_img @ v + s * (W_txt @ t)``; the image and text
projections are each computed once instead of once per (image, term) pair.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import LengthMismatch, ShapeError, ZeroNorm
from .mlp import MlpModel, backward_hidden, forward_hidden
from .term_pool import Category


def _as2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


def _unit_rows(x: np.ndarray, what: str = "vector") -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNorm(f"zero-norm {what}")
    return x / norms


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths {a.shape} and {b.shape} differ")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroNorm("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    a, b = _as2d(a), _as2d(b)
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch(f"dimensions {a.shape[1]} and {b.shape[1]} differ")
    return np.clip(_unit_rows(a) @ _unit_rows(b).T, -1.0, 1.0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class WeightVector:
    weights: np.ndarray
    pool_category: Optional[Category] = None

    def __len__(self):
        return len(self.weights)


@dataclass
class AugmentedPair:
    h_normal: np.ndarray
    h_abnormal: np.ndarray
    patch_id: str = ""


def term_weights(images, term_vectors) -> np.ndarray:
    """Softmax cosine weights, shape ``(n_images, n_terms)``."""
    sims = cosine_matrix(images, term_vectors)
    if sims.shape[1] == 0:
        raise ShapeError("term pool is empty")
    return softmax(sims, axis=1)


def compute_weights(image, term_vectors, category: Optional[Category] = None) -> WeightVector:
    return WeightVector(term_weights(image, term_vectors)[0], category)


@dataclass
class AugmentCache:
    mlp_cache: object
    images: np.ndarray  # (B, D)
    terms: np.ndarray  # (n, D)
    scale: np.ndarray  # (B, n) = exp(weights)


def augment_batch(model: MlpModel, images, term_vectors, weights=None):
    """Mean text-augmented embedding for each image against one pool.

    Returns ``(h, cache)`` with ``h`` of shape ``(B, out)``. ``weights``
    overrides the softmax weights when given (shape ``(B, n)``).
    """
    images = _as2d(images)
    terms = _as2d(term_vectors)
    d = images.shape[1]
    if terms.shape[1] != d or model.widths[0] != 2 * d:
        raise ShapeError(f"image dim {d}, text dim {terms.shape[1]}, model input {model.widths[0]}")
    if weights is None:
        weights = term_weights(images, terms)
    weights = np.asarray(weights, dtype=np.float64).reshape(images.shape[0], terms.shape[0])
    scale = np.exp(weights)

    w1 = model.weights[0].astype(np.float64, copy=False)
    b1 = model.biases[0].astype(np.float64, copy=False)
    img_proj = images @ w1[:, :d].T  # (B, h1)
    txt_proj = terms @ w1[:, d:].T  # (n, h1)
    z1 = img_proj[:, None, :] + scale[:, :, None] * txt_proj[None, :, :] + b1
    n_img, n_terms = scale.shape
    out, mcache = forward_hidden(model, z1.reshape(n_img * n_terms, -1))
    h = out.reshape(n_img, n_terms, -1).mean(axis=1)
    return h, AugmentCache(mcache, images, terms, scale)


def augment_backward(model: MlpModel, cache: AugmentCache, grad_h) -> list:
    """Parameter gradients (float64, canonical order) given ``dL/dh`` of shape ``(B, out)``."""
    grad_h = _as2d(grad_h)
    n_img, n_terms = cache.scale.shape
    d = cache.images.shape[1]
    g_out = np.repeat(grad_h / n_terms, n_terms, axis=0)  # rows ordered (image, term)
    tail, dz1 = backward_hidden(model, cache.mlp_cache, g_out)
    dz1 = dz1.reshape(n_img, n_terms, -1)
    dw_img = dz1.sum(axis=1).T @ cache.images
    dw_txt = np.einsum("bn,bnh->nh", cache.scale, dz1).T @ cache.terms
    db1 = dz1.sum(axis=(0, 1))
    return [np.concatenate([dw_img, dw_txt], axis=1), db1] + tail


def augment(model: MlpModel, image, term_vectors, weights) -> np.ndarray:
    """Single-image form with explicit weights."""
    w = weights.weights if isinstance(weights, WeightVector) else weights
    terms = _as2d(term_vectors)
    if len(w) != terms.shape[0]:
        raise LengthMismatch(f"{len(w)} weights for {terms.shape[0]} terms")
    h, _ = augment_batch(model, image, terms, np.asarray(w).reshape(1, -1))
    return h[0]


def augment_pair(model: MlpModel, image, normal_terms, abnormal_terms, patch_id: str = "") -> AugmentedPair:
    hn, _ = augment_batch(model, image, normal_terms)
    ha, _ = augment_batch(model, image, abnormal_terms)
    return AugmentedPair(hn[0], ha[0], patch_id)


def embed_images(model: MlpModel, images, normal_terms, abnormal_terms, chunk: int = 256):
    """``(h_normal, h_abnormal)`` matrices for many images, processed in chunks."""
    images = _as2d(images)
    hn, ha = [], []
    for start in range(0, images.shape[0], chunk):
        part = images[start:start + chunk]
        hn.append(augment_batch(model, part, normal_terms)[0])
        ha.append(augment_batch(model, part, abnormal_terms)[0])
    out_dim = model.widths[-1]
    if not hn:
        return np.zeros((0, out_dim)), np.zeros((0, out_dim))
    return np.concatenate(hn), np.concatenate(ha)
