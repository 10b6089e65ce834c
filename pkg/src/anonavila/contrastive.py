"""Contrastive objective over a batch of (h_normal, h_abnormal) pairs.

    S_n = mean_{i<j} exp(cos(hN_i, hN_j))
    S_a = mean_{i<j} exp(cos(hA_i, hA_j))
    S_x = mean_{i,j} exp(cos(hN_i, hA_j))
    L   = -log((S_n + S_a) / (S_n + S_a + S_x))

Everything is computed in float64, with no temperature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, ShapeError, ZeroNorm


@dataclass(frozen=True)
class LossParts:
    s_intra_n: float
    s_intra_a: float
    s_inter: float

    @property
    def value(self) -> float:
        p = self.s_intra_n + self.s_intra_a
        return -math.log(p / (p + self.s_inter))


def _prepare(h_normal, h_abnormal):
    hn = np.asarray(h_normal, dtype=np.float64)
    ha = np.asarray(h_abnormal, dtype=np.float64)
    if hn.ndim != 2 or hn.shape != ha.shape:
        raise ShapeError(f"batch shapes {hn.shape} and {ha.shape} must match and be 2-D")
    if hn.shape[0] < 2:
        raise BatchTooSmall(f"batch size {hn.shape[0]} < 2")
    nn = np.linalg.norm(hn, axis=1, keepdims=True)
    na = np.linalg.norm(ha, axis=1, keepdims=True)
    if np.any(nn == 0) or np.any(na == 0):
        raise ZeroNorm("zero-norm row in batch")
    return hn, ha, nn, na


def _forward(hn, ha, nn, na):
    b = hn.shape[0]
    un, ua = hn / nn, ha / na
    iu = np.triu_indices(b, 1)
    e_nn = np.exp(un @ un.T)
    e_aa = np.exp(ua @ ua.T)
    e_na = np.exp(un @ ua.T)
    z1 = b * (b - 1) / 2
    z2 = b * b
    parts = LossParts(e_nn[iu].sum() / z1, e_aa[iu].sum() / z1, e_na.sum() / z2)
    return parts, (un, ua, e_nn, e_aa, e_na, z1, z2)


def loss(h_normal, h_abnormal):
    """Returns ``(value, parts)``."""
    parts, _ = _forward(*_prepare(h_normal, h_abnormal))
    return parts.value, parts


def loss_and_grad(h_normal, h_abnormal):
    """Returns ``(value, parts, dL/dh_normal, dL/dh_abnormal)``."""
    hn, ha, nn, na = _prepare(h_normal, h_abnormal)
    parts, (un, ua, e_nn, e_aa, e_na, z1, z2) = _forward(hn, ha, nn, na)
    p = parts.s_intra_n + parts.s_intra_a
    total = p + parts.s_inter
    g_intra = 1.0 / total - 1.0 / p  # dL/dS_n == dL/dS_a
    g_inter = 1.0 / total

    np.fill_diagonal(e_nn, 0.0)
    np.fill_diagonal(e_aa, 0.0)
    # gradients w.r.t. the unit vectors; each unordered pair feeds both ends
    g_un = (g_intra / z1) * (e_nn @ un) + (g_inter / z2) * (e_na @ ua)
    g_ua = (g_intra / z1) * (e_aa @ ua) + (g_inter / z2) * (e_na.T @ un)
    # through x -> x/|x|: (g - (g.u)u)/|x|
    g_hn = (g_un - np.sum(g_un * un, axis=1, keepdims=True) * un) / nn
    g_ha = (g_ua - np.sum(g_ua * ua, axis=1, keepdims=True) * ua) / na
    return parts.value, parts, g_hn, g_ha


def loss_backward(h_normal, h_abnormal):
    _, _, g_hn, g_ha = loss_and_grad(h_normal, h_abnormal)
    return g_hn, g_ha
