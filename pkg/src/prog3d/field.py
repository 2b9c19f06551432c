"""Voxel radiance field: raw parameter grids with trilinear sampling.

The field stores unconstrained (raw) density and color parameters on a
regular grid of nodes placed at cell centers. Sampling interpolates the raw
parameters trilinearly over the 8 enclosing nodes and then applies the
activations: softplus for density, sigmoid for color. Points outside the
axis-aligned extent are vacuum and return density 0 and color (0, 0, 0).

accumulate_sample_adjoint is the exact reverse-mode transpose of
sample_field: upstream derivatives w.r.t. the activated outputs land on the
grid nodes as (trilinear weight) * (activation derivative at the interpolated
raw value) * upstream.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import CheckpointFormatError, ContractViolation

__all__ = [
    "VoxelField",
    "FieldGradient",
    "sample_field",
    "sample_points",
    "accumulate_sample_adjoint",
    "accumulate_points_adjoint",
    "save_field",
    "load_field",
    "softplus",
    "sigmoid",
    "VACUUM_DENSITY",
]

# Raw density at which softplus underflows to exactly 0.0 in float64, so a
# vacuum field renders to opacity 0 with no tolerance games.
VACUUM_DENSITY = -800.0

_MAGIC = b"P3DF"
_VERSION = 1


def softplus(x):
    """Numerically stable log(1 + exp(x))."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class VoxelField:
    """Density/color parameter grids over an axis-aligned extent.

    resolution: nodes per axis (nx, ny, nz), each >= 2.
    extent_min/extent_max: world-space corners of the box the grid covers.
    density_params: raw densities, shape (nx, ny, nz), float64.
    color_params: raw colors, shape (nx, ny, nz, 3), float64.
    """

    resolution: Tuple[int, int, int]
    extent_min: Tuple[float, float, float]
    extent_max: Tuple[float, float, float]
    density_params: np.ndarray
    color_params: np.ndarray

    def __post_init__(self):
        self.resolution = tuple(int(n) for n in self.resolution)
        self.extent_min = tuple(float(v) for v in self.extent_min)
        self.extent_max = tuple(float(v) for v in self.extent_max)
        if len(self.resolution) != 3 or any(n < 2 for n in self.resolution):
            raise ContractViolation(f"resolution must be three values >= 2, got {self.resolution}")
        for lo, hi in zip(self.extent_min, self.extent_max):
            if not hi > lo:
                raise ContractViolation(f"degenerate extent: {self.extent_min} .. {self.extent_max}")
        self.density_params = np.ascontiguousarray(self.density_params, dtype=np.float64)
        self.color_params = np.ascontiguousarray(self.color_params, dtype=np.float64)
        if self.density_params.shape != self.resolution:
            raise ContractViolation(
                f"density_params shape {self.density_params.shape} != resolution {self.resolution}")
        if self.color_params.shape != self.resolution + (3,):
            raise ContractViolation(
                f"color_params shape {self.color_params.shape} != resolution + (3,)")

    @classmethod
    def constant(cls, resolution, extent_min, extent_max, density=-10.0, color=(0.0, 0.0, 0.0)):
        """Field with every node set to the given raw parameter values."""
        res = tuple(int(n) for n in resolution)
        dens = np.full(res, float(density), dtype=np.float64)
        col = np.broadcast_to(np.asarray(color, dtype=np.float64), res + (3,)).copy()
        return cls(res, tuple(extent_min), tuple(extent_max), dens, col)

    @classmethod
    def vacuum(cls, resolution, extent_min, extent_max):
        """Field that renders to exact zero opacity everywhere."""
        return cls.constant(resolution, extent_min, extent_max, density=VACUUM_DENSITY)

    def copy(self) -> "VoxelField":
        return VoxelField(self.resolution, self.extent_min, self.extent_max,
                          self.density_params.copy(), self.color_params.copy())

    @property
    def cell_size(self) -> np.ndarray:
        lo = np.asarray(self.extent_min)
        hi = np.asarray(self.extent_max)
        return (hi - lo) / np.asarray(self.resolution, dtype=np.float64)

    def node_positions(self):
        """World positions of grid nodes along each axis (cell centers)."""
        lo = np.asarray(self.extent_min)
        cell = self.cell_size
        return tuple(lo[a] + (np.arange(self.resolution[a]) + 0.5) * cell[a] for a in range(3))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<3i", *self.resolution))
        h.update(np.asarray(self.extent_min, dtype=np.float64).tobytes())
        h.update(np.asarray(self.extent_max, dtype=np.float64).tobytes())
        h.update(self.density_params.tobytes())
        h.update(self.color_params.tobytes())
        return h.hexdigest()

    def paint_sphere(self, center, radius, density, color):
        """Set raw params on all nodes inside a sphere. Editing helper for scenes."""
        xs, ys, zs = self.node_positions()
        px, py, pz = np.meshgrid(xs, ys, zs, indexing="ij")
        c = np.asarray(center, dtype=np.float64)
        inside = (px - c[0]) ** 2 + (py - c[1]) ** 2 + (pz - c[2]) ** 2 <= float(radius) ** 2
        self.density_params[inside] = float(density)
        self.color_params[inside] = np.asarray(color, dtype=np.float64)

    def paint_box(self, center, size, density, color):
        """Set raw params on all nodes inside an axis-aligned box."""
        xs, ys, zs = self.node_positions()
        px, py, pz = np.meshgrid(xs, ys, zs, indexing="ij")
        c = np.asarray(center, dtype=np.float64)
        h = 0.5 * np.asarray(size, dtype=np.float64)
        inside = (np.abs(px - c[0]) <= h[0]) & (np.abs(py - c[1]) <= h[1]) & (np.abs(pz - c[2]) <= h[2])
        self.density_params[inside] = float(density)
        self.color_params[inside] = np.asarray(color, dtype=np.float64)


@dataclass
class FieldGradient:
    """Accumulated derivatives w.r.t. the raw parameter grids."""

    density_grad: np.ndarray
    color_grad: np.ndarray

    @classmethod
    def zeros_like(cls, field: VoxelField) -> "FieldGradient":
        return cls(np.zeros(field.resolution, dtype=np.float64),
                   np.zeros(field.resolution + (3,), dtype=np.float64))

    def add(self, other: "FieldGradient") -> "FieldGradient":
        self.density_grad += other.density_grad
        self.color_grad += other.color_grad
        return self

    def scale(self, s: float) -> "FieldGradient":
        self.density_grad *= s
        self.color_grad *= s
        return self

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density_grad ** 2) + np.sum(self.color_grad ** 2)))

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.density_grad)) and np.all(np.isfinite(self.color_grad)))


def _interp_weights(field: VoxelField, points: np.ndarray):
    """Trilinear corner indices and weights for a batch of points.

    Returns (inside, lin_idx, weights, raw_density, raw_color) where
    inside is (P,) bool, lin_idx is (P, 8) int64 into the x-fastest flat grid,
    weights is (P, 8) float64 (rows sum to 1 for inside points, 0 outside),
    raw_density is (P,) and raw_color (P, 3), the interpolated raw values.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ContractViolation(f"points must have shape (P, 3), got {pts.shape}")
    lo = np.asarray(field.extent_min)
    hi = np.asarray(field.extent_max)
    res = np.asarray(field.resolution, dtype=np.int64)
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)

    cell = (hi - lo) / res
    # Continuous node coordinates: node i sits at lo + (i + 0.5) * cell.
    g = (pts - lo) / cell - 0.5
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    i0c = np.clip(i0, 0, res - 1)
    i1c = np.clip(i0 + 1, 0, res - 1)

    wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)
    wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
    wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
    ix = np.stack([i0c[:, 0], i1c[:, 0]], axis=1)
    iy = np.stack([i0c[:, 1], i1c[:, 1]], axis=1)
    iz = np.stack([i0c[:, 2], i1c[:, 2]], axis=1)

    # Corner order: (dx, dy, dz) in lexicographic order, 8 corners.
    w = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 8)
    nx, ny, nz = field.resolution
    lin = (ix[:, :, None, None] + nx * (iy[:, None, :, None] + ny * iz[:, None, None, :])).reshape(-1, 8)
    w = np.where(inside[:, None], w, 0.0)

    flat_d = field.density_params.reshape(-1, order="F")
    flat_c = field.color_params.reshape(-1, 3, order="F")
    raw_d = np.einsum("pk,pk->p", w, flat_d[lin])
    raw_c = np.einsum("pk,pkc->pc", w, flat_c[lin])
    return inside, lin, w, raw_d, raw_c


def sample_points(field: VoxelField, points: np.ndarray):
    """Activated (density, color) at a batch of points; vacuum outside the extent.

    Returns (density (P,), color (P, 3)).
    """
    inside, _, _, raw_d, raw_c = _interp_weights(field, points)
    dens = np.where(inside, softplus(raw_d), 0.0)
    col = np.where(inside[:, None], sigmoid(raw_c), 0.0)
    return dens, col


def sample_field(field: VoxelField, point) -> Tuple[float, np.ndarray]:
    """Activated (density, color) at a single world point."""
    d, c = sample_points(field, np.asarray(point, dtype=np.float64)[None, :])
    return float(d[0]), c[0]


def accumulate_points_adjoint(field: VoxelField, points: np.ndarray,
                              d_density: np.ndarray, d_color: np.ndarray,
                              grad: FieldGradient) -> FieldGradient:
    """Scatter upstream derivatives at sample points onto the raw grids.

    d_density is (P,) w.r.t. activated density, d_color (P, 3) w.r.t. activated
    color. Out-of-extent points contribute nothing. Accumulation uses a fixed
    reduction order (flat bincount over node indices), so results are
    bit-reproducible for identical inputs.
    """
    d_density = np.asarray(d_density, dtype=np.float64)
    d_color = np.asarray(d_color, dtype=np.float64)
    if d_density.shape != (points.shape[0],) or d_color.shape != (points.shape[0], 3):
        raise ContractViolation("adjoint seed shapes must be (P,) and (P, 3)")
    return scatter_interp_adjoint(field, _interp_weights(field, points),
                                  d_density, d_color, grad)


def scatter_interp_adjoint(field: VoxelField, interp, d_density: np.ndarray,
                           d_color: np.ndarray, grad: FieldGradient) -> FieldGradient:
    """accumulate_points_adjoint given precomputed _interp_weights output."""
    inside, lin, w, raw_d, raw_c = interp
    n_nodes = int(np.prod(field.resolution))
    # Chain rule: d raw = activation'(interpolated raw) * upstream, then split
    # over corners by trilinear weight. Activation derivative is evaluated at
    # the interpolated raw value because activation follows interpolation.
    dd = np.where(inside, sigmoid(raw_d) * d_density, 0.0)
    contrib_d = w * dd[:, None]
    acc_d = np.bincount(lin.ravel(), weights=contrib_d.ravel(), minlength=n_nodes)
    grad.density_grad += acc_d.reshape(field.resolution, order="F")

    s = sigmoid(raw_c)
    dc = np.where(inside[:, None], s * (1.0 - s) * d_color, 0.0)
    for ch in range(3):
        contrib_c = w * dc[:, ch][:, None]
        acc_c = np.bincount(lin.ravel(), weights=contrib_c.ravel(), minlength=n_nodes)
        grad.color_grad[..., ch] += acc_c.reshape(field.resolution, order="F")
    return grad


def accumulate_sample_adjoint(field: VoxelField, point, d_density: float, d_color,
                              grad: FieldGradient) -> FieldGradient:
    """Single-point form of accumulate_points_adjoint."""
    return accumulate_points_adjoint(
        field, np.asarray(point, dtype=np.float64)[None, :],
        np.asarray([d_density], dtype=np.float64),
        np.asarray(d_color, dtype=np.float64)[None, :], grad)


def save_field(field: VoxelField, path) -> None:
    """Write a field checkpoint.

    Layout: magic "P3DF", u32 version, u32 nx/ny/nz, extent corners as six
    f32, then density and the three color channel planes as little-endian f32
    with x varying fastest.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<3I", *field.resolution))
        fh.write(struct.pack("<6f", *field.extent_min, *field.extent_max))
        fh.write(field.density_params.astype("<f4").ravel(order="F").tobytes())
        for ch in range(3):
            fh.write(field.color_params[..., ch].astype("<f4").ravel(order="F").tobytes())


def load_field(path) -> VoxelField:
    """Read a field checkpoint written by save_field.

    Raises CheckpointFormatError naming the failing header field on corrupt
    input.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != _MAGIC:
        raise CheckpointFormatError(f"bad magic: expected {_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 8:
        raise CheckpointFormatError("truncated header: missing version")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _VERSION:
        raise CheckpointFormatError(f"unsupported version: {version}")
    if len(data) < 20:
        raise CheckpointFormatError("truncated header: missing resolution")
    nx, ny, nz = struct.unpack_from("<3I", data, 8)
    if min(nx, ny, nz) < 2:
        raise CheckpointFormatError(f"bad resolution: ({nx}, {ny}, {nz})")
    if len(data) < 44:
        raise CheckpointFormatError("truncated header: missing extent")
    ext = struct.unpack_from("<6f", data, 20)
    lo, hi = ext[:3], ext[3:]
    if not all(h > l for l, h in zip(lo, hi)):
        raise CheckpointFormatError(f"bad extent: {lo} .. {hi}")
    n = nx * ny * nz
    expected = 44 + 4 * n * 4
    if len(data) != expected:
        raise CheckpointFormatError(f"bad payload size: expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f4", offset=44)
    dens = body[:n].astype(np.float64).reshape((nx, ny, nz), order="F")
    col = np.empty((nx, ny, nz, 3), dtype=np.float64)
    for ch in range(3):
        col[..., ch] = body[n * (1 + ch):n * (2 + ch)].astype(np.float64).reshape((nx, ny, nz), order="F")
    return VoxelField((nx, ny, nz), lo, hi, dens, col)
