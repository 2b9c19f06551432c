"""Emission-absorption volume rendering with an exact reverse-mode adjoint.

A ray [near, far] is split into n equal bins of width delta. Sample i sits at
the bin midpoint (or jittered inside its bin) at distance k_i. With density
rho_i at the sample,

    alpha_i = 1 - exp(-rho_i * delta)
    omega_i = exp(-sum_{j < i} rho_j * delta)        (transmittance)
    color   = sum_i omega_i * alpha_i * c_i
    opacity = sum_i omega_i * alpha_i
    depth   = sum_i omega_i * alpha_i * k_i / opacity   (+inf when opacity
              does not exceed EPS_DIV)

The weights omega_i * alpha_i together with the residual transmittance
omega_{n+1} form a partition of unity, which tests assert directly.

render_view_adjoint replays the cached sample positions and pushes per-pixel
derivatives w.r.t. color and opacity back onto the field's raw parameter
grids. Depth carries no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cameras import Camera, Ray, generate_rays
from .errors import ContractViolation
from .field import (FieldGradient, VoxelField, _interp_weights, scatter_interp_adjoint,
                    sigmoid, softplus)
from .parallel import map_chunks, row_chunks
from .region import RegionPrompt
from .streams import PixelStream, jitter_block, pixel_stream

__all__ = [
    "EPS_DIV",
    "RenderCache",
    "RenderOutput",
    "render_ray",
    "render_view",
    "render_view_adjoint",
    "render_box_depth",
    "pixel_stream",
]

# Opacity floor below which depth is reported as +inf instead of a ratio of
# two vanishing sums.
EPS_DIV = 1e-6


@dataclass
class _SampleBatch:
    """Per-sample forward quantities for one row chunk, kept for the adjoint."""

    lo: int
    hi: int
    interp: tuple        # _interp_weights output over the chunk's flat points
    col: np.ndarray      # (P, n, 3) activated sample colors
    tau: np.ndarray      # (P, n)
    omega: np.ndarray    # (P, n)
    weights: np.ndarray  # (P, n)


@dataclass
class RenderCache:
    """Everything needed to replay a render for its adjoint.

    samples carries the forward pass's per-sample state when the render was
    made with keep_samples=True; the adjoint then skips the re-march.
    """

    field: VoxelField
    camera: Optional[Camera]
    origins: np.ndarray  # (P, 3)
    dirs: np.ndarray     # (P, 3)
    t_vals: np.ndarray   # (P, n)
    delta: float
    samples: Optional[list] = None


@dataclass
class RenderOutput:
    color: np.ndarray    # (H, W, 3) in [0, 1]
    opacity: np.ndarray  # (H, W) in [0, 1]
    depth: np.ndarray    # (H, W), +inf where empty
    n_samples: int
    cache: RenderCache


def _sample_distances(n_rays: int, n_samples: int, near: float, far: float,
                      jitter: Optional[np.ndarray]):
    if n_samples < 1:
        raise ContractViolation("n_samples must be >= 1")
    if not (0.0 <= near < far):
        raise ContractViolation(f"need 0 <= near < far, got near={near} far={far}")
    delta = (far - near) / n_samples
    base = np.arange(n_samples, dtype=np.float64)[None, :]
    if jitter is None:
        offs = base + 0.5
        t = near + delta * np.broadcast_to(offs, (n_rays, n_samples)).copy()
    else:
        t = near + delta * (base + jitter)
    return t, delta


def _march(field: VoxelField, origins: np.ndarray, dirs: np.ndarray,
           t_vals: np.ndarray, delta: float, lo: int = 0, hi: int = 0):
    """Shared forward pass. Returns per-sample quantities for a ray batch."""
    p, n = t_vals.shape
    pts = origins[:, None, :] + t_vals[:, :, None] * dirs[:, None, :]
    interp = _interp_weights(field, pts.reshape(-1, 3))
    inside, lin, w, raw_d, raw_c = interp
    rho = np.where(inside, softplus(raw_d), 0.0).reshape(p, n)
    col = np.where(inside[:, None], sigmoid(raw_c), 0.0).reshape(p, n, 3)

    tau = rho * delta
    alpha = -np.expm1(-tau)
    cum = np.cumsum(tau, axis=1)
    s_prev = np.concatenate([np.zeros((p, 1)), cum[:, :-1]], axis=1)
    omega = np.exp(-s_prev)
    weights = omega * alpha

    color = np.einsum("pn,pnc->pc", weights, col)
    opacity = weights.sum(axis=1)
    num = (weights * t_vals).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(opacity > EPS_DIV, num / np.maximum(opacity, EPS_DIV), np.inf)
    return color, opacity, depth, _SampleBatch(lo, hi, interp, col, tau, omega, weights)


def render_ray(field: VoxelField, ray: Ray, n_samples: int, near: float, far: float,
               stratified: bool = False,
               rng: "np.random.Generator | PixelStream | None" = None):
    """Render a single ray. Returns (color (3,), opacity, depth)."""
    o = np.asarray(ray.origin, dtype=np.float64)[None, :]
    d = np.asarray(ray.direction, dtype=np.float64)[None, :]
    jit = None
    if stratified:
        if rng is None:
            raise ContractViolation("stratified sampling needs an rng")
        jit = rng.random(n_samples).reshape(1, n_samples)
    t, delta = _sample_distances(1, n_samples, near, far, jit)
    color, opacity, depth, _ = _march(field, o, d, t, delta)
    return color[0], float(opacity[0]), float(depth[0])


def render_view(field: VoxelField, camera: Camera, n_samples: int = 64,
                stratified: bool = False, seed: int = 0,
                keep_samples: bool = False) -> RenderOutput:
    """Render every pixel of a camera.

    Per-pixel jitter streams are derived from (seed, pixel index), so pixel
    (i, j) equals render_ray on that pixel's ray with rng
    pixel_stream(seed, i * width + j).
    """
    h, w = camera.height, camera.width
    origins, dirs = generate_rays(camera)
    o_flat = origins.reshape(-1, 3)
    d_flat = dirs.reshape(-1, 3)
    n_rays = h * w

    jitter = jitter_block(seed, n_rays, n_samples) if stratified else None
    t_vals, delta = _sample_distances(n_rays, n_samples, camera.near, camera.far, jitter)

    color = np.empty((n_rays, 3), dtype=np.float64)
    opacity = np.empty(n_rays, dtype=np.float64)
    depth = np.empty(n_rays, dtype=np.float64)

    row_px = w

    def work(rows: slice):
        lo, hi = rows.start * row_px, rows.stop * row_px
        return _march(field, o_flat[lo:hi], d_flat[lo:hi], t_vals[lo:hi], delta, lo, hi)

    samples = [] if keep_samples else None
    for c, o, dep, batch in map_chunks(work, row_chunks(h, _workers())):
        color[batch.lo:batch.hi] = c
        opacity[batch.lo:batch.hi] = o
        depth[batch.lo:batch.hi] = dep
        if keep_samples:
            samples.append(batch)

    cache = RenderCache(field, camera, o_flat, d_flat, t_vals, delta, samples)
    return RenderOutput(color.reshape(h, w, 3), opacity.reshape(h, w),
                        depth.reshape(h, w), n_samples, cache)


def _workers() -> int:
    from .parallel import worker_count
    return worker_count()


def render_view_adjoint(field: VoxelField, camera: Camera, d_color: np.ndarray,
                        d_opacity: np.ndarray, cache: RenderCache) -> FieldGradient:
    """Pull per-pixel (d_color, d_opacity) back to raw-grid derivatives.

    The cache must come from a render_view call on the same field and camera;
    anything else is a contract violation. Accumulation order is fixed, so the
    result is bit-reproducible.
    """
    if cache.field is not field:
        raise ContractViolation("render cache was built for a different field")
    if cache.camera is not None and camera is not None and cache.camera != camera:
        raise ContractViolation("render cache was built for a different camera")
    h, w = camera.height, camera.width
    d_color = np.asarray(d_color, dtype=np.float64)
    d_opacity = np.asarray(d_opacity, dtype=np.float64)
    if d_color.shape != (h, w, 3) or d_opacity.shape != (h, w):
        raise ContractViolation("adjoint seeds must be (H, W, 3) and (H, W)")

    dc_flat = d_color.reshape(-1, 3)
    do_flat = d_opacity.reshape(-1)
    grad = FieldGradient.zeros_like(field)
    row_px = w

    def chunk_adjoint(batch: _SampleBatch) -> FieldGradient:
        lo, hi = batch.lo, batch.hi
        # G_i = dL/d w_i; per-sample weight derivative seed.
        g = np.einsum("pc,pnc->pn", dc_flat[lo:hi], batch.col) + do_flat[lo:hi][:, None]
        gw = g * batch.weights
        # T_j = sum_{i > j} G_i w_i, exclusive suffix sum.
        suffix = np.flip(np.cumsum(np.flip(gw, axis=1), axis=1), axis=1)
        t_down = suffix - gw
        trans = np.exp(-batch.tau)  # exp(-rho_i delta) = 1 - alpha_i w/o cancellation
        d_rho = cache.delta * (g * batch.omega * trans - t_down)
        d_col = batch.weights[:, :, None] * dc_flat[lo:hi][:, None, :]

        part = FieldGradient.zeros_like(field)
        scatter_interp_adjoint(field, batch.interp, d_rho.reshape(-1),
                               d_col.reshape(-1, 3), part)
        return part

    def work(rows: slice):
        lo, hi = rows.start * row_px, rows.stop * row_px
        _, _, _, batch = _march(field, cache.origins[lo:hi], cache.dirs[lo:hi],
                                cache.t_vals[lo:hi], cache.delta, lo, hi)
        return chunk_adjoint(batch)

    if cache.samples is not None:
        parts = map_chunks(chunk_adjoint, cache.samples)
    else:
        parts = map_chunks(work, row_chunks(h, _workers()))
    for part in parts:
        grad.add(part)
    return grad


def render_box_depth(region: RegionPrompt, camera: Camera) -> np.ndarray:
    """Per-pixel distance to the nearest region-box entry, +inf on miss.

    Each box is intersected in its local frame by the slab method. A camera
    inside a box sees entry depth 0. Multiple boxes combine by minimum.
    """
    origins, dirs = generate_rays(camera)
    h, w = camera.height, camera.width
    best = np.full((h, w), np.inf, dtype=np.float64)
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    for box in region.boxes:
        rot = np.asarray(box.rotation, dtype=np.float64)
        c = np.asarray(box.center, dtype=np.float64)
        half = 0.5 * np.asarray(box.size, dtype=np.float64)
        # Box-local coordinates: columns of rot are the box axes in world space.
        ol = (o - c) @ rot
        dl = d @ rot

        t_lo = np.full(o.shape[0], -np.inf)
        t_hi = np.full(o.shape[0], np.inf)
        miss = np.zeros(o.shape[0], dtype=bool)
        for ax in range(3):
            da = dl[:, ax]
            oa = ol[:, ax]
            parallel = np.abs(da) < 1e-15
            miss |= parallel & (np.abs(oa) > half[ax])
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = (-half[ax] - oa) / da
                t1 = (half[ax] - oa) / da
            lo = np.minimum(t0, t1)
            hi = np.maximum(t0, t1)
            t_lo = np.where(parallel, t_lo, np.maximum(t_lo, lo))
            t_hi = np.where(parallel, t_hi, np.minimum(t_hi, hi))
        hit = ~miss & (t_lo <= t_hi) & (t_hi >= 0.0)
        entry = np.maximum(t_lo, 0.0)
        best_flat = best.reshape(-1)
        np.minimum(best_flat, np.where(hit, entry, np.inf), out=best_flat)
    return best
