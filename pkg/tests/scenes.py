"""Scene builders shared by the editor, CLI, and acceptance tests.

The analytic denoiser drives renders toward one target image per prompt, so
every multi-view scenario here is built from z-axis-symmetric content: all
orbit cameras at one elevation then see the same image, which makes a single
target simultaneously achievable from every azimuth.
"""

from __future__ import annotations

import numpy as np

from prog3d import VoxelField
from prog3d.cameras import orbit_rig
from prog3d.constraints import ConstraintWeights, InitSchedule
from prog3d.editor import EditConfig
from prog3d.guidance import AnalyticTargetDenoiser, GuidanceConfig, NoiseSchedule
from prog3d.region import OrientedBox, RegionConfig, RegionPrompt
from prog3d.render import render_view

EXTENT = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def empty_field(resolution=(32, 32, 32)) -> VoxelField:
    return VoxelField.constant(resolution, EXTENT[0], EXTENT[1],
                               density=-10.0, color=(0.0, 0.0, 0.0))


def paint_smooth_blob(field: VoxelField, center, radius, color_raw,
                      slope: float = 16.0) -> VoxelField:
    """Raise raw density by a quadratic bump (max slope at center), so the
    rendered silhouette is soft enough to survive small azimuth changes."""
    xs, ys, zs = field.node_positions()
    px, py, pz = np.meshgrid(xs, ys, zs, indexing="ij")
    c = np.asarray(center, dtype=np.float64)
    d2 = (px - c[0]) ** 2 + (py - c[1]) ** 2 + (pz - c[2]) ** 2
    bump = slope * np.clip(1.0 - d2 / float(radius) ** 2, 0.0, 1.0)
    field.density_params[:] = np.maximum(field.density_params, -10.0 + bump)
    inside = d2 <= float(radius) ** 2
    for ch, v in enumerate(color_raw):
        field.color_params[..., ch][inside] = v
    return field


def training_rig(n_azimuth=16, width=64, height=64, azimuth_offset=0.0):
    return orbit_rig(n_azimuth=n_azimuth, elevations=(0.35,), radius=2.7,
                     fov=0.9, width=width, height=height, near=1.0, far=4.6,
                     azimuth_offset=azimuth_offset)


# --- single-step edit scenario: empty centered region gains a red blob ----

BALL_CENTER = (0.0, 0.0, -0.75)
BALL_RADIUS = 0.27
BLOB_RADIUS = 0.30
RED_RAW = (3.0, -2.0, -2.0)
REGION_BOX = OrientedBox(center=(0.0, 0.0, 0.0), size=(0.62, 0.62, 0.62))


def edit_source_field(resolution=(32, 32, 32)) -> VoxelField:
    """A blue-ish ball on the z-axis below the (empty) editable region."""
    f = empty_field(resolution)
    f.paint_sphere(BALL_CENTER, BALL_RADIUS, density=6.0, color=(-2.0, 0.5, 2.2))
    return f


def edit_ideal_field(resolution=(32, 32, 32)) -> VoxelField:
    """What the edit should produce: source plus a centered red blob."""
    return paint_smooth_blob(edit_source_field(resolution), (0.0, 0.0, 0.0),
                             BLOB_RADIUS, RED_RAW)


def edit_scenario(resolution=(32, 32, 32), n_azimuth=16, width=64, height=64,
                  iterations=2000, seed=11, n_samples=64, w_suppress=4.0,
                  init_strength=0.5, w_consist=10.0):
    """(source, config, denoiser, rig, target_image) for the blob edit."""
    rig = training_rig(n_azimuth=n_azimuth, width=width, height=height)
    src = edit_source_field(resolution)
    sched = NoiseSchedule()
    i_s = render_view(src, rig[0], n_samples).color
    i_t = render_view(edit_ideal_field(resolution), rig[0], n_samples).color
    den = AnalyticTargetDenoiser(sched, {"tgt": i_t, "src": i_s}, {"src": 1.0})
    region = RegionPrompt(boxes=[REGION_BOX])
    cfg = EditConfig(source_prompt=None, target_prompt="tgt", region=region,
                     guidance=GuidanceConfig(omega=1.0, w_suppress=w_suppress),
                     seed=seed, iterations=iterations, n_samples=n_samples,
                     learning_rate=0.05,
                     init_schedule=InitSchedule(strength=init_strength,
                                                k_max=max(1, iterations // 4)),
                     weights=ConstraintWeights(w_consist=w_consist),
                     region_cfg=RegionConfig(tau_o=0.5))
    return src, cfg, den, rig, i_t


def edit_eval_rig(width=64, height=64):
    """Held-out azimuths halfway between the training ones."""
    return training_rig(n_azimuth=8, width=width, height=height,
                        azimuth_offset=np.pi / 16)


# --- two-step chain scenario: stacked disjoint regions ---------------------

CHAIN_RES = (24, 24, 24)
CHAIN_A = (0.0, 0.0, -0.3)
CHAIN_B = (0.0, 0.0, 0.3)
CHAIN_RADIUS = 0.24
CHAIN_TAU = 0.1
BLUE_RAW = (-2.0, -1.0, 3.0)
CHAIN_REGION_A = RegionPrompt(boxes=[OrientedBox(center=CHAIN_A, size=(0.55, 0.55, 0.55))])
CHAIN_REGION_B = RegionPrompt(boxes=[OrientedBox(center=CHAIN_B, size=(0.55, 0.55, 0.55))])


def chain_ideal(with_a: bool, with_b: bool) -> VoxelField:
    f = empty_field(CHAIN_RES)
    if with_a:
        paint_smooth_blob(f, CHAIN_A, CHAIN_RADIUS, RED_RAW)
    if with_b:
        paint_smooth_blob(f, CHAIN_B, CHAIN_RADIUS, BLUE_RAW)
    return f


def chain_target_images(rig, n_samples=64):
    cam = rig[0]
    return {
        "a": render_view(chain_ideal(True, False), cam, n_samples).color,
        "b": render_view(chain_ideal(False, True), cam, n_samples).color,
        "ab": render_view(chain_ideal(True, True), cam, n_samples).color,
    }


def chain_step(source_prompt, target_prompt, region, seed, iterations=300,
               n_samples=64) -> EditConfig:
    return EditConfig(source_prompt=source_prompt, target_prompt=target_prompt,
                      region=region,
                      guidance=GuidanceConfig(omega=1.0, w_suppress=4.0),
                      seed=seed, iterations=iterations, n_samples=n_samples,
                      learning_rate=0.05,
                      init_schedule=InitSchedule(strength=0.5,
                                                 k_max=max(1, iterations // 4)),
                      weights=ConstraintWeights(w_consist=10.0),
                      region_cfg=RegionConfig(tau_o=CHAIN_TAU))


def chain_scenario(width=48, height=48, n_azimuth=8, iterations=300, n_samples=64):
    """(initial, denoiser, rig, images) for the stacked two-region chain."""
    rig = training_rig(n_azimuth=n_azimuth, width=width, height=height)
    images = chain_target_images(rig, n_samples)
    den = AnalyticTargetDenoiser(NoiseSchedule(), images, {"ab": 1.0})
    return empty_field(CHAIN_RES), den, rig, images
