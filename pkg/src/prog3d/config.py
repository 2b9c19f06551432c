"""Run configuration: one JSON document describing scene, prompts, chain, output.

Validation errors carry the offending field path (for example
"chain.steps[1].region.boxes[0].size") so a broken config is fixable without
reading source. Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
import os
import warnings as pywarnings
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cameras import Camera, orbit_rig
from .constraints import ConstraintWeights, InitSchedule
from .editor import EditChain, EditConfig, validate_chain
from .errors import ConfigError, ContractViolation
from .field import VoxelField, load_field
from .guidance import AnalyticTargetDenoiser, GuidanceConfig, NoiseSchedule
from .images import load_mask_png, load_png_rgb, read_float_map
from .region import OrientedBox, RegionConfig, RegionPrompt

__all__ = ["RunConfig", "SceneConfig", "OutputConfig", "load_config", "parse_config"]


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _req(d: dict, key: str, path: str):
    _expect(isinstance(d, dict), path, "expected an object")
    _expect(key in d, path, f"missing required key {key!r}")
    return d[key]


def _num(v, path: str) -> float:
    _expect(isinstance(v, (int, float)) and not isinstance(v, bool), path, "expected a number")
    return float(v)


def _int(v, path: str) -> int:
    _expect(isinstance(v, int) and not isinstance(v, bool), path, "expected an integer")
    return int(v)


def _vec3(v, path: str) -> Tuple[float, float, float]:
    _expect(isinstance(v, (list, tuple)) and len(v) == 3, path, "expected three numbers")
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))


@dataclass
class SceneConfig:
    resolution: Tuple[int, int, int]
    extent_min: Tuple[float, float, float]
    extent_max: Tuple[float, float, float]
    init_density: float
    camera_spec: dict

    def cameras(self) -> List[Camera]:
        return build_cameras(self.camera_spec, "scene.cameras")


@dataclass
class OutputConfig:
    directory: str
    snapshot_every: Optional[int]
    image_format: str


@dataclass
class RunConfig:
    base_dir: str
    scene: SceneConfig
    prompt_images: Dict[str, str]       # id -> resolved path
    uncond_blend: Dict[str, float]
    initial_checkpoint: Optional[str]   # resolved path
    steps: List[EditConfig]
    output: OutputConfig
    warnings: List[str] = dc_field(default_factory=list)

    def initial_field(self) -> VoxelField:
        if self.initial_checkpoint is not None:
            return load_field(self.initial_checkpoint)
        return VoxelField.constant(self.scene.resolution, self.scene.extent_min,
                                   self.scene.extent_max, density=self.scene.init_density)

    def denoiser(self, schedule: Optional[NoiseSchedule] = None) -> AnalyticTargetDenoiser:
        schedule = schedule or NoiseSchedule()
        targets = {name: load_png_rgb(path) for name, path in self.prompt_images.items()}
        return AnalyticTargetDenoiser(schedule, targets, self.uncond_blend)


def build_cameras(spec: dict, path: str = "cameras") -> List[Camera]:
    _expect(isinstance(spec, dict), path, "expected an object")
    n_az = _int(spec.get("n_azimuth", 16), f"{path}.n_azimuth")
    elevations = spec.get("elevations", [0.2, 0.5])
    _expect(isinstance(elevations, list) and elevations, f"{path}.elevations", "expected a non-empty list")
    try:
        return orbit_rig(
            n_azimuth=n_az,
            elevations=[_num(e, f"{path}.elevations") for e in elevations],
            radius=_num(spec.get("radius", 3.0), f"{path}.radius"),
            center=_vec3(spec.get("center", [0.0, 0.0, 0.0]), f"{path}.center"),
            fov=_num(spec.get("fov", 0.9), f"{path}.fov"),
            width=_int(spec.get("width", 64), f"{path}.width"),
            height=_int(spec.get("height", 64), f"{path}.height"),
            near=_num(spec.get("near", 1.0), f"{path}.near"),
            far=_num(spec.get("far", 5.0), f"{path}.far"),
            azimuth_offset=_num(spec.get("azimuth_offset", 0.0), f"{path}.azimuth_offset"),
        )
    except ContractViolation as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_region(spec: dict, base_dir: str, path: str) -> RegionPrompt:
    _expect(isinstance(spec, dict), path, "expected an object")
    boxes = []
    for i, b in enumerate(spec.get("boxes", []) or []):
        bp = f"{path}.boxes[{i}]"
        center = _vec3(_req(b, "center", bp), f"{bp}.center")
        size = _vec3(_req(b, "size", bp), f"{bp}.size")
        rot = b.get("rotation")
        try:
            if rot is None:
                boxes.append(OrientedBox(center, size))
            else:
                _expect(isinstance(rot, list) and len(rot) == 3, f"{bp}.rotation",
                        "expected a 3x3 matrix")
                rows = tuple(_vec3(r, f"{bp}.rotation[{j}]") for j, r in enumerate(rot))
                boxes.append(OrientedBox(center, size, rows))
        except ContractViolation as exc:
            raise ConfigError(f"{bp}: {exc}") from exc

    mask = None
    mask_path = spec.get("external_mask")
    if mask_path is not None:
        resolved = _resolve(mask_path, base_dir, f"{path}.external_mask")
        mask = load_mask_png(resolved)
    depth = None
    depth_path = spec.get("external_depth")
    if depth_path is not None:
        resolved = _resolve(depth_path, base_dir, f"{path}.external_depth")
        try:
            depth = read_float_map(resolved)
        except ContractViolation as exc:
            raise ConfigError(f"{path}.external_depth: {exc}") from exc

    try:
        return RegionPrompt(boxes=boxes, external_mask=mask, external_depth=depth)
    except ContractViolation as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _resolve(rel: str, base_dir: str, path: str) -> str:
    _expect(isinstance(rel, str) and rel, path, "expected a file path")
    resolved = rel if os.path.isabs(rel) else os.path.join(base_dir, rel)
    _expect(os.path.isfile(resolved), path, f"file not found: {resolved}")
    return resolved


def build_step(spec: dict, base_dir: str, path: str, prompt_ids, warnings: List[str]) -> EditConfig:
    _expect(isinstance(spec, dict), path, "expected an object")
    source = spec.get("source_prompt")
    if source is not None:
        _expect(isinstance(source, str), f"{path}.source_prompt", "expected a prompt id or null")
        _expect(source in prompt_ids, f"{path}.source_prompt", f"unknown prompt {source!r}")
    target = _req(spec, "target_prompt", path)
    _expect(isinstance(target, str), f"{path}.target_prompt", "expected a prompt id")
    _expect(target in prompt_ids, f"{path}.target_prompt", f"unknown prompt {target!r}")

    region = build_region(_req(spec, "region", path), base_dir, f"{path}.region")
    iterations = _int(spec.get("iterations", 10000), f"{path}.iterations")

    omega = _num(_req(spec, "omega", path), f"{path}.omega")
    w_suppress = _num(spec.get("w_suppress", 4.0), f"{path}.w_suppress")
    if w_suppress <= 1.0:
        warnings.append(f"{path}.w_suppress: {w_suppress} <= 1 amplifies instead of "
                        "suppressing the overlapped component")
    try:
        # The config-level warning above already covers w_suppress <= 1; the
        # dataclass warning would just repeat it on stderr.
        with pywarnings.catch_warnings():
            pywarnings.simplefilter("ignore")
            guidance = GuidanceConfig(omega=omega, w_suppress=w_suppress)
        tau_o = _num(spec.get("tau_o", 0.5), f"{path}.tau_o")
        region_cfg = RegionConfig(tau_o=tau_o)
        init = InitSchedule(
            strength=_num(spec.get("init_strength", 0.5), f"{path}.init_strength"),
            k_max=_int(spec.get("init_k_max", max(1, iterations // 4)), f"{path}.init_k_max"))
        weights = ConstraintWeights(w_consist=_num(spec.get("w_consist", 1.0), f"{path}.w_consist"))
        t_schedule = spec.get("t_schedule", "uniform")
        return EditConfig(
            source_prompt=source,
            target_prompt=target,
            region=region,
            guidance=guidance,
            seed=_int(_req(spec, "seed", path), f"{path}.seed"),
            iterations=iterations,
            batch_views=_int(spec.get("batch_views", 1), f"{path}.batch_views"),
            n_samples=_int(spec.get("n_samples", 64), f"{path}.n_samples"),
            learning_rate=_num(spec.get("learning_rate", 0.05), f"{path}.learning_rate"),
            adam_beta1=_num(spec.get("adam_beta1", 0.9), f"{path}.adam_beta1"),
            adam_beta2=_num(spec.get("adam_beta2", 0.999), f"{path}.adam_beta2"),
            adam_eps=_num(spec.get("adam_eps", 1e-8), f"{path}.adam_eps"),
            region_cfg=region_cfg,
            init_schedule=init,
            weights=weights,
            naive_consistency=bool(spec.get("naive_consistency", False)),
            t_schedule=t_schedule,
        )
    except (ContractViolation, ConfigError) as exc:
        if isinstance(exc, ConfigError) and str(exc).startswith(path):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(doc: dict, base_dir: str) -> RunConfig:
    """Validate a parsed JSON document and build engine objects."""
    _expect(isinstance(doc, dict), "$", "top level must be an object")
    warnings: List[str] = []

    scene_spec = _req(doc, "scene", "$")
    res_raw = _req(scene_spec, "resolution", "scene")
    _expect(isinstance(res_raw, list) and len(res_raw) == 3, "scene.resolution",
            "expected three integers")
    resolution = tuple(_int(v, f"scene.resolution[{i}]") for i, v in enumerate(res_raw))
    _expect(all(n >= 2 for n in resolution), "scene.resolution", "each axis needs >= 2 nodes")
    extent = _req(scene_spec, "extent", "scene")
    lo = _vec3(_req(extent, "min", "scene.extent"), "scene.extent.min")
    hi = _vec3(_req(extent, "max", "scene.extent"), "scene.extent.max")
    _expect(all(h > l for l, h in zip(lo, hi)), "scene.extent", "min must be strictly below max")
    scene = SceneConfig(
        resolution=resolution, extent_min=lo, extent_max=hi,
        init_density=_num(scene_spec.get("init_density", -10.0), "scene.init_density"),
        camera_spec=_req(scene_spec, "cameras", "scene"))
    scene.cameras()  # validate eagerly

    prompts = _req(doc, "prompts", "$")
    images_spec = _req(prompts, "images", "prompts")
    _expect(isinstance(images_spec, dict) and images_spec, "prompts.images",
            "expected a non-empty object of id -> PNG path")
    prompt_images = {name: _resolve(p, base_dir, f"prompts.images.{name}")
                     for name, p in images_spec.items()}
    blend_spec = _req(prompts, "uncond_blend", "prompts")
    _expect(isinstance(blend_spec, dict) and blend_spec, "prompts.uncond_blend",
            "expected a non-empty object of id -> weight")
    blend = {name: _num(w, f"prompts.uncond_blend.{name}") for name, w in blend_spec.items()}
    _expect(abs(sum(blend.values()) - 1.0) <= 1e-9, "prompts.uncond_blend",
            f"weights must sum to 1, got {sum(blend.values())}")
    unknown = set(blend) - set(prompt_images)
    _expect(not unknown, "prompts.uncond_blend", f"unknown prompt ids: {sorted(unknown)}")

    chain_spec = _req(doc, "chain", "$")
    initial = chain_spec.get("initial_checkpoint")
    if initial is not None:
        initial = _resolve(initial, base_dir, "chain.initial_checkpoint")
    steps_spec = _req(chain_spec, "steps", "chain")
    _expect(isinstance(steps_spec, list) and steps_spec, "chain.steps",
            "expected a non-empty list of edit steps")
    steps = [build_step(s, base_dir, f"chain.steps[{i}]", set(prompt_images), warnings)
             for i, s in enumerate(steps_spec)]
    validate_chain(EditChain(VoxelField.vacuum(resolution, lo, hi), steps))

    out_spec = _req(doc, "output", "$")
    directory = _req(out_spec, "directory", "output")
    _expect(isinstance(directory, str) and directory, "output.directory", "expected a path")
    snap = out_spec.get("snapshot_every")
    if snap is not None:
        snap = _int(snap, "output.snapshot_every")
        _expect(snap >= 1, "output.snapshot_every", "must be >= 1")
    fmt = out_spec.get("image_format", "png")
    _expect(fmt in ("png", "ppm", "both"), "output.image_format",
            f"expected png, ppm, or both, got {fmt!r}")

    return RunConfig(base_dir=base_dir, scene=scene, prompt_images=prompt_images,
                     uncond_blend=blend, initial_checkpoint=initial, steps=steps,
                     output=OutputConfig(directory, snap, fmt), warnings=warnings)


def load_config(path: str) -> RunConfig:
    """Read and validate a JSON run config from disk."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from exc
    return parse_config(doc, os.path.dirname(os.path.abspath(path)))
