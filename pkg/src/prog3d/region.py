"""Region prompts and per-view editability masks.

A region prompt names where an edit may act: oriented boxes in world space,
an externally supplied per-view mask, or an externally supplied per-view
depth map for custom geometry. For a view, the editable mask M_t marks pixels
whose ray enters the region before the (opacity-filtered) content depth of
the source render, and the content mask M_o marks pixels the source render
already covers.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ContractViolation

__all__ = [
    "OrientedBox",
    "RegionPrompt",
    "RegionConfig",
    "MaskSet",
    "modify_depth",
    "compute_masks",
    "region_masks_for_view",
    "resample_nearest",
]

_IDENTITY = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class OrientedBox:
    """Box with world-space center, edge lengths, and a rotation matrix whose
    columns are the box axes in world coordinates."""

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    rotation: Tuple[Tuple[float, float, float], ...] = _IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "rotation", tuple(tuple(float(v) for v in row) for row in self.rotation))
        if any(s <= 0.0 for s in self.size):
            raise ContractViolation(f"box size must be positive, got {self.size}")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ContractViolation("box rotation must be a 3x3 orthonormal matrix")


@dataclass
class RegionPrompt:
    """Where an edit is allowed to act. At least one source must be present."""

    boxes: List[OrientedBox] = dc_field(default_factory=list)
    external_mask: Optional[np.ndarray] = None   # (h, w) binary, any resolution
    external_depth: Optional[np.ndarray] = None  # (h, w) float, any resolution

    def __post_init__(self):
        if not self.boxes and self.external_mask is None and self.external_depth is None:
            raise ContractViolation("region prompt needs boxes, an external mask, or an external depth map")
        if self.external_mask is not None:
            m = np.asarray(self.external_mask)
            if m.ndim != 2 or 0 in m.shape:
                raise ContractViolation("external mask must be a 2-D array with nonzero resolution")
            self.external_mask = (m > 0.5).astype(np.uint8) if m.dtype != np.uint8 else (m > 0).astype(np.uint8)
        if self.external_depth is not None:
            d = np.asarray(self.external_depth, dtype=np.float64)
            if d.ndim != 2 or 0 in d.shape:
                raise ContractViolation("external depth must be a 2-D array with nonzero resolution")
            self.external_depth = d


@dataclass(frozen=True)
class RegionConfig:
    """Mask-pipeline knobs. tau_o filters unconverged or empty content."""

    tau_o: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.tau_o < 1.0):
            raise ContractViolation(f"tau_o must lie in (0, 1), got {self.tau_o}")


@dataclass
class MaskSet:
    """Editable-region mask m_t and existing-content mask m_o, uint8 {0, 1}."""

    m_t: np.ndarray
    m_o: np.ndarray

    def __post_init__(self):
        self.m_t = np.asarray(self.m_t, dtype=np.uint8)
        self.m_o = np.asarray(self.m_o, dtype=np.uint8)
        if self.m_t.shape != self.m_o.shape:
            raise ContractViolation("mask shapes differ")

    @property
    def m_t_bar(self) -> np.ndarray:
        return (1 - self.m_t).astype(np.uint8)

    @property
    def m_o_bar(self) -> np.ndarray:
        return (1 - self.m_o).astype(np.uint8)


def modify_depth(d_hat: np.ndarray, o_hat: np.ndarray, tau_o: float) -> np.ndarray:
    """Opacity-filtered depth: +inf wherever opacity falls below tau_o.

    Pixels whose accumulated opacity is under the threshold have no reliable
    surface, so their depth is treated as infinitely far.
    """
    d_hat = np.asarray(d_hat, dtype=np.float64)
    o_hat = np.asarray(o_hat, dtype=np.float64)
    if d_hat.shape != o_hat.shape:
        raise ContractViolation("depth and opacity shapes differ")
    return np.where(o_hat < tau_o, np.inf, d_hat)


def compute_masks(d_b: np.ndarray, d_tilde: np.ndarray, o_hat: np.ndarray,
                  tau_o: float) -> MaskSet:
    """Editable and content masks from box depth and filtered content depth.

    m_t(r) = 1 iff the region entry is strictly nearer than the filtered
    content depth (ties keep the pixel non-editable). m_o(r) = 1 iff opacity
    strictly exceeds tau_o.
    """
    d_b = np.asarray(d_b, dtype=np.float64)
    d_tilde = np.asarray(d_tilde, dtype=np.float64)
    o_hat = np.asarray(o_hat, dtype=np.float64)
    if not (d_b.shape == d_tilde.shape == o_hat.shape):
        raise ContractViolation("mask input shapes differ")
    m_t = (d_b < d_tilde).astype(np.uint8)
    m_o = (o_hat > tau_o).astype(np.uint8)
    return MaskSet(m_t, m_o)


def resample_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resample of a 2-D map to (height, width)."""
    img = np.asarray(img)
    h, w = img.shape
    rows = np.minimum((np.arange(height) + 0.5) * h / height, h - 1).astype(np.int64)
    cols = np.minimum((np.arange(width) + 0.5) * w / width, w - 1).astype(np.int64)
    return img[rows[:, None], cols[None, :]]


def region_masks_for_view(source_render, region: RegionPrompt, camera,
                          cfg: RegionConfig = RegionConfig()) -> MaskSet:
    """Masks for one view of the source field.

    Box depth comes from the slab intersection; an external depth map (custom
    region geometry) joins by per-pixel minimum; an external mask, when
    present, replaces the depth-derived m_t outright after nearest-neighbor
    resampling.
    """
    from .render import render_box_depth  # local import, render depends on this module

    h, w = source_render.opacity.shape
    if region.boxes:
        d_b = render_box_depth(region, camera)
    else:
        d_b = np.full((h, w), np.inf, dtype=np.float64)
    if region.external_depth is not None:
        d_ext = resample_nearest(region.external_depth, h, w).astype(np.float64)
        d_b = np.minimum(d_b, d_ext)

    d_tilde = modify_depth(source_render.depth, source_render.opacity, cfg.tau_o)
    masks = compute_masks(d_b, d_tilde, source_render.opacity, cfg.tau_o)
    if region.external_mask is not None:
        masks = MaskSet(resample_nearest(region.external_mask, h, w), masks.m_o)
    return masks
