"""Pinhole cameras and ray generation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ContractViolation

__all__ = ["Camera", "Ray", "generate_rays", "ray_at", "orbit_rig"]


@dataclass(frozen=True)
class Ray:
    origin: Tuple[float, float, float]
    direction: Tuple[float, float, float]  # unit norm

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
            raise ContractViolation(f"ray direction must be unit norm, got |d| = {np.linalg.norm(d)}")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. fov is the vertical field of view in radians.

    Stored as plain tuples so cameras compare by value and can key caches.
    """

    position: Tuple[float, float, float]
    look_at: Tuple[float, float, float]
    up: Tuple[float, float, float]
    fov: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "look_at", tuple(float(v) for v in self.look_at))
        object.__setattr__(self, "up", tuple(float(v) for v in self.up))
        if not (0.0 < self.fov < math.pi):
            raise ContractViolation(f"fov must be in (0, pi), got {self.fov}")
        if self.width < 1 or self.height < 1:
            raise ContractViolation("image dimensions must be positive")
        if not (0.0 < self.near < self.far):
            raise ContractViolation(f"need 0 < near < far, got near={self.near} far={self.far}")
        fwd = np.asarray(self.look_at) - np.asarray(self.position)
        if np.linalg.norm(fwd) == 0.0:
            raise ContractViolation("camera position and look_at coincide")

    def basis(self):
        """Right-handed (right, up, forward) orthonormal camera basis."""
        fwd = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position, dtype=np.float64)
        fwd = fwd / np.linalg.norm(fwd)
        upw = np.asarray(self.up, dtype=np.float64)
        right = np.cross(fwd, upw)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ContractViolation("up vector is parallel to the view direction")
        right = right / nr
        up = np.cross(right, fwd)
        return right, up, fwd


def generate_rays(camera: Camera):
    """Ray origins and unit directions for every pixel.

    Returns (origins, directions), each (H, W, 3). Pixel (i, j) is row i from
    the top, column j from the left; rays pass through pixel centers.
    """
    right, up, fwd = camera.basis()
    h, w = camera.height, camera.width
    tan_half = math.tan(camera.fov / 2.0)
    aspect = w / h
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * tan_half * aspect
    ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * tan_half
    dirs = (fwd[None, None, :]
            + xs[None, :, None] * right[None, None, :]
            + ys[:, None, None] * up[None, None, :])
    dirs = dirs / np.linalg.norm(dirs, axis=2, keepdims=True)
    origins = np.broadcast_to(np.asarray(camera.position, dtype=np.float64), (h, w, 3)).copy()
    return origins, dirs


def ray_at(camera: Camera, i: int, j: int) -> Ray:
    """The single ray through pixel center (row i, col j)."""
    origins, dirs = generate_rays(camera)
    return Ray(tuple(origins[i, j]), tuple(dirs[i, j]))


def orbit_rig(n_azimuth: int = 16, elevations=(0.2, 0.5), radius: float = 3.0,
              center=(0.0, 0.0, 0.0), fov: float = 0.9, width: int = 64, height: int = 64,
              near: float = 1.0, far: float = 5.0, azimuth_offset: float = 0.0):
    """Evenly spaced orbit cameras looking at a common center.

    Azimuth sweeps the xy plane; elevation is the polar angle above it. The
    default rig is 16 azimuths at 2 elevations.
    """
    if n_azimuth < 1:
        raise ContractViolation("n_azimuth must be >= 1")
    c = np.asarray(center, dtype=np.float64)
    cams = []
    for elev in elevations:
        for k in range(n_azimuth):
            az = azimuth_offset + 2.0 * math.pi * k / n_azimuth
            pos = c + radius * np.asarray([
                math.cos(elev) * math.cos(az),
                math.cos(elev) * math.sin(az),
                math.sin(elev),
            ])
            cams.append(Camera(tuple(pos), tuple(c), (0.0, 0.0, 1.0),
                               fov, width, height, near, far))
    return cams
