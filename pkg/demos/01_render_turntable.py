"""Render a small scene from a turntable and write every image map.

Builds a voxel field with two painted shapes, renders four azimuths, and
writes the color image, a 16-bit opacity map, and a depth preview for each.
Also spot-checks the quadrature invariant on one view: per-ray accumulated
opacity plus leftover transmittance equals one.
"""

import os

import numpy as np

from prog3d import VoxelField
from prog3d.cameras import generate_rays, orbit_rig
from prog3d.field import sample_points
from prog3d.images import depth_preview, write_png, write_png_gray16
from prog3d.render import render_view

OUT = os.path.join(os.path.dirname(__file__), "out", "render")


def build_scene() -> VoxelField:
    f = VoxelField.constant((24, 24, 24), (-1, -1, -1), (1, 1, 1), density=-10.0)
    f.paint_sphere((0.0, 0.0, -0.35), 0.34, density=7.0, color=(2.0, 0.2, -1.5))
    f.paint_box((0.0, 0.0, 0.45), (0.8, 0.8, 0.25), density=5.0, color=(-1.5, 0.5, 2.0))
    return f


def main() -> None:
    os.makedirs(OUT, exist_ok=True)
    field = build_scene()
    rig = orbit_rig(n_azimuth=4, elevations=(0.35,), radius=2.7, fov=0.9,
                    width=128, height=128, near=1.0, far=4.6)

    for i, cam in enumerate(rig):
        rend = render_view(field, cam, n_samples=96)
        write_png(os.path.join(OUT, f"az{i}_color.png"), rend.color)
        write_png_gray16(os.path.join(OUT, f"az{i}_opacity.png"), rend.opacity)
        write_png_gray16(os.path.join(OUT, f"az{i}_depth.png"),
                         depth_preview(rend.depth, cam.near, cam.far))
        solid = float(np.mean(rend.opacity > 0.5))
        print(f"azimuth {i}: {solid:5.1%} of pixels solid, "
              f"depth range [{np.nanmin(np.where(np.isfinite(rend.depth), rend.depth, np.nan)):.2f}, "
              f"{np.nanmax(np.where(np.isfinite(rend.depth), rend.depth, np.nan)):.2f}]")

    # One view, recomputed transmittance: opacity + leftover must be 1.
    cam = rig[0]
    n = 48
    rend = render_view(field, cam, n_samples=n)
    origins, dirs = generate_rays(cam)
    t = np.linspace(cam.near, cam.far, n, endpoint=False) + 0.5 * (cam.far - cam.near) / n
    pts = origins.reshape(-1, 1, 3) + t[None, :, None] * dirs.reshape(-1, 1, 3)
    dens, _ = sample_points(field, pts.reshape(-1, 3))
    leftover = np.exp(-(dens.reshape(-1, n) * (cam.far - cam.near) / n).sum(axis=1))
    err = np.max(np.abs(rend.opacity.reshape(-1) + leftover - 1.0))
    print(f"partition of unity: max |opacity + transmittance - 1| = {err:.2e}")
    print(f"images in {OUT}")


if __name__ == "__main__":
    main()
