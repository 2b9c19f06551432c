"""Pixel-space editing constraints and their exact gradients.

Both losses are plain sums over pixels (no mean reduction), so their
per-pixel gradient scale does not depend on image resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .region import MaskSet

__all__ = [
    "ConstraintWeights",
    "InitSchedule",
    "consistency_loss",
    "naive_consistency_loss",
    "initialization_loss",
]


@dataclass(frozen=True)
class ConstraintWeights:
    """Relative weight of the content-consistency penalty in the total update."""

    w_consist: float = 1.0

    def __post_init__(self):
        if self.w_consist < 0.0:
            raise ContractViolation("w_consist must be >= 0")


@dataclass(frozen=True)
class InitSchedule:
    """Linearly decaying opacity bootstrap for empty editable regions.

    kappa(k) = strength * (1 - k / k_max) while 0 <= k < k_max, else 0.
    """

    strength: float = 0.5
    k_max: int = 2500

    def __post_init__(self):
        if self.strength < 0.0:
            raise ContractViolation("strength must be >= 0")
        if self.k_max < 1:
            raise ContractViolation("k_max must be >= 1")

    def kappa(self, k: int) -> float:
        if k < 0:
            raise ContractViolation("iteration index must be >= 0")
        if k >= self.k_max:
            return 0.0
        return self.strength * (1.0 - k / self.k_max)


def _check_maps(color_t, color_s, opacity_t, masks: MaskSet):
    if color_t.shape != color_s.shape or color_t.shape[:2] != opacity_t.shape:
        raise ContractViolation("render map shapes differ")
    if masks.m_t.shape != opacity_t.shape:
        raise ContractViolation("mask shape does not match the renders")


def consistency_loss(color_t: np.ndarray, opacity_t: np.ndarray,
                     color_s: np.ndarray, masks: MaskSet):
    """Content consistency outside the editable region, split by source content.

    Non-editable pixels that the source covers must keep the source color;
    non-editable pixels that were empty must stay empty, which is imposed on
    opacity rather than color so nothing can hide as dark-but-solid matter:

        loss = sum_r [ (1-m_t) m_o |C_t - C_s|^2 + (1-m_t)(1-m_o) O_t^2 ]

    Returns (loss, d_color_t, d_opacity_t) with the exact gradients
    2 (1-m_t) m_o (C_t - C_s) and 2 (1-m_t)(1-m_o) O_t.
    """
    color_t = np.asarray(color_t, dtype=np.float64)
    color_s = np.asarray(color_s, dtype=np.float64)
    opacity_t = np.asarray(opacity_t, dtype=np.float64)
    _check_maps(color_t, color_s, opacity_t, masks)

    keep = (masks.m_t_bar * masks.m_o).astype(np.float64)
    empty = (masks.m_t_bar * masks.m_o_bar).astype(np.float64)
    diff = color_t - color_s
    loss = float(np.sum(keep * np.sum(diff ** 2, axis=2)) + np.sum(empty * opacity_t ** 2))
    d_color = 2.0 * keep[:, :, None] * diff
    d_opacity = 2.0 * empty * opacity_t
    return loss, d_color, d_opacity


def naive_consistency_loss(color_t: np.ndarray, opacity_t: np.ndarray,
                           color_s: np.ndarray, masks: MaskSet):
    """Color-only ablation of consistency_loss, kept for ablation studies.

    loss = sum_r (1-m_t) |C_t - C_s|^2. Empty pixels are constrained only in
    color, which is known to permit floating artifacts; do not use outside
    ablations. Returns (loss, d_color_t, d_opacity_t) with d_opacity_t = 0.
    """
    color_t = np.asarray(color_t, dtype=np.float64)
    color_s = np.asarray(color_s, dtype=np.float64)
    opacity_t = np.asarray(opacity_t, dtype=np.float64)
    _check_maps(color_t, color_s, opacity_t, masks)

    outside = masks.m_t_bar.astype(np.float64)
    diff = color_t - color_s
    loss = float(np.sum(outside * np.sum(diff ** 2, axis=2)))
    d_color = 2.0 * outside[:, :, None] * diff
    return loss, d_color, np.zeros_like(opacity_t)


def initialization_loss(opacity_t: np.ndarray, masks: MaskSet, k: int,
                        sched: InitSchedule):
    """Early-phase pull of editable-region opacity toward 1.

    loss = kappa(k) * sum_r m_t (O_t - 1)^2. Gives score distillation
    something to carve once the region starts from empty space; fades out
    linearly and is exactly zero from k_max on.

    Returns (loss, d_opacity_t).
    """
    opacity_t = np.asarray(opacity_t, dtype=np.float64)
    if masks.m_t.shape != opacity_t.shape:
        raise ContractViolation("mask shape does not match the opacity map")
    kap = sched.kappa(k)
    if kap == 0.0:
        return 0.0, np.zeros_like(opacity_t)
    m = masks.m_t.astype(np.float64)
    resid = opacity_t - 1.0
    loss = float(kap * np.sum(m * resid ** 2))
    d_opacity = 2.0 * kap * m * resid
    return loss, d_opacity
