"""Screen-space region masks, and how the opacity threshold moves them.

A region prompt is a set of oriented boxes. For a camera view the engine
derives two masks from the source render: m_t marks pixels where the region
is visible in front of existing content (editable), m_o marks pixels that
already show content. Raising the opacity threshold tau_o treats thin
content as empty, which can only grow m_t and shrink m_o.
"""

import os

import numpy as np

from prog3d import VoxelField
from prog3d.cameras import orbit_rig
from prog3d.images import write_png, write_png_gray16
from prog3d.region import OrientedBox, RegionConfig, RegionPrompt, region_masks_for_view
from prog3d.render import render_view

OUT = os.path.join(os.path.dirname(__file__), "out", "masks")


def main() -> None:
    os.makedirs(OUT, exist_ok=True)
    # A solid ball partially in front of the region box.
    field = VoxelField.constant((24, 24, 24), (-1, -1, -1), (1, 1, 1), density=-10.0)
    field.paint_sphere((0.45, 0.0, 0.0), 0.38, density=6.0, color=(1.5, 0.3, -1.0))
    region = RegionPrompt(boxes=[
        OrientedBox(center=(-0.25, 0.0, 0.0), size=(0.6, 0.6, 0.6))])

    cam = orbit_rig(n_azimuth=1, elevations=(0.25,), radius=2.7, fov=0.9,
                    width=128, height=128, near=1.0, far=4.6)[0]
    rend = render_view(field, cam, n_samples=96)
    write_png(os.path.join(OUT, "source_color.png"), rend.color)

    print(" tau_o   editable px   content px")
    prev_t, prev_o = None, None
    for tau in (0.2, 0.5, 0.8):
        masks = region_masks_for_view(rend, region, cam, RegionConfig(tau_o=tau))
        n_t, n_o = int(masks.m_t.sum()), int(masks.m_o.sum())
        print(f"  {tau:.1f}    {n_t:10d}   {n_o:10d}")
        write_png_gray16(os.path.join(OUT, f"m_t_tau{tau:.1f}.png"),
                         masks.m_t.astype(np.float64))
        write_png_gray16(os.path.join(OUT, f"m_o_tau{tau:.1f}.png"),
                         masks.m_o.astype(np.float64))
        if prev_t is not None:
            assert np.all(masks.m_t >= prev_t), "m_t must grow with tau_o"
            assert np.all(masks.m_o <= prev_o), "m_o must shrink with tau_o"
        prev_t, prev_o = masks.m_t, masks.m_o

    # Overlay: editable region tinted red on top of the source render.
    masks = region_masks_for_view(rend, region, cam, RegionConfig(tau_o=0.5))
    overlay = rend.color.copy()
    sel = masks.m_t.astype(bool)
    overlay[sel] = 0.5 * overlay[sel] + 0.5 * np.asarray([1.0, 0.1, 0.1])
    write_png(os.path.join(OUT, "editable_overlay.png"), overlay)
    print(f"images in {OUT}")


if __name__ == "__main__":
    main()
