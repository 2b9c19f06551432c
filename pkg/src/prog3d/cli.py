"""Command line front end.

Subcommands:
    validate   check a run config and report problems without computing
    run        execute the edit chain described by a config
    render     render a saved field checkpoint from a camera rig
    masks      write region mask/depth visualizations for a checkpoint

Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
PROG3D_THREADS caps render worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from .config import RunConfig, build_cameras, build_region, load_config
from .editor import run_edit_step, validate_chain, EditChain
from .errors import CheckpointFormatError, ConfigError, ContractViolation, EditAbort
from .field import VoxelField, load_field, save_field
from .guidance import NoiseSchedule
from .images import (depth_preview, load_png_rgb, write_float_map, write_png,
                     write_png_gray16, write_ppm)
from .metrics import mean_abs_diff, psnr
from .region import RegionConfig, region_masks_for_view
from .render import render_view

# Snapshot turntables use at most this many cameras from the training rig.
SNAPSHOT_CAMERAS = 4


def _log(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


def _load_spec(arg: str, name: str) -> dict:
    """A spec argument is either inline JSON or a path to a JSON file."""
    text = arg
    if not arg.lstrip().startswith("{"):
        try:
            with open(arg, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{name}: cannot read {arg}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: invalid JSON: {exc.msg}") from exc


def _write_color(path_base: str, rgb: np.ndarray, fmt: str) -> None:
    if fmt in ("png", "both"):
        write_png(path_base + ".png", rgb)
    if fmt in ("ppm", "both"):
        write_ppm(path_base + ".ppm", rgb)


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    for w in cfg.warnings:
        print(f"warning: {w}")
    n_steps = len(cfg.steps)
    n_cams = len(cfg.scene.cameras())
    print(f"ok: {n_steps} step(s), {n_cams} camera(s), "
          f"{len(cfg.prompt_images)} prompt image(s)")
    return 0


def _derived_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=[int(base), int(index)]).generate_state(1)[0])


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    for w in cfg.warnings:
        _log(args.quiet, f"warning: {w}")

    out_dir = os.path.abspath(args.out or cfg.output.directory)
    os.makedirs(out_dir, exist_ok=True)
    fmt = cfg.output.image_format

    cameras = cfg.scene.cameras()
    schedule = NoiseSchedule()
    den = cfg.denoiser(schedule)
    current = cfg.initial_field()

    steps = cfg.steps
    if args.seed is not None:
        for i, step in enumerate(steps):
            step.seed = _derived_seed(args.seed, i)
    validate_chain(EditChain(current, steps))

    snap_cams = cameras[:SNAPSHOT_CAMERAS]
    summary = {"output_directory": out_dir, "seed_override": args.seed, "steps": []}
    summary_path = os.path.join(out_dir, "summary.json")

    for s, step in enumerate(steps):
        step_dir = os.path.join(out_dir, f"step_{s:03d}")
        os.makedirs(step_dir, exist_ok=True)
        snapshot_every = args.snapshot_every or cfg.output.snapshot_every or max(1, step.iterations // 10)

        src_masks = [region_masks_for_view(render_view(current, cam, n_samples=step.n_samples),
                                           step.region, cam, step.region_cfg)
                     for cam in snap_cams]

        def snapshot(k: int, fld: VoxelField, _dir=step_dir, _masks=src_masks) -> None:
            snap_dir = os.path.join(_dir, "snapshots", f"iter_{k:06d}")
            os.makedirs(snap_dir, exist_ok=True)
            for ci, cam in enumerate(snap_cams):
                rend = render_view(fld, cam, n_samples=step.n_samples)
                _write_color(os.path.join(snap_dir, f"cam_{ci:02d}_color"), rend.color, fmt)
                write_png_gray16(os.path.join(snap_dir, f"cam_{ci:02d}_opacity.png"), rend.opacity)
                overlay = rend.color.copy()
                sel = _masks[ci].m_t.astype(bool)
                overlay[sel] = 0.5 * overlay[sel] + 0.5 * np.asarray([1.0, 0.1, 0.1])
                _write_color(os.path.join(snap_dir, f"cam_{ci:02d}_region"), overlay, fmt)

        _log(args.quiet, f"step {s}: {step.source_prompt!r} -> {step.target_prompt!r}, "
                         f"{step.iterations} iteration(s), seed {step.seed}")
        source_field = current
        try:
            current, report = run_edit_step(source_field, step, den, cameras,
                                            sched=schedule, snapshot_every=snapshot_every,
                                            snapshot_cb=snapshot)
        except EditAbort as exc:
            # Flush what exists so the failure is inspectable, then fail.
            summary["steps"].append({"index": s, "error": str(exc)})
            with open(summary_path, "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
            print(f"error: step {s}: {exc}", file=sys.stderr)
            return 1

        ckpt_path = os.path.join(step_dir, "checkpoint.p3df")
        save_field(current, ckpt_path)
        csv_path = os.path.join(step_dir, "metrics.csv")
        report.to_csv(csv_path)

        metrics = _step_metrics(source_field, current, step, cfg, den)
        summary["steps"].append({
            "index": s,
            "source_prompt": step.source_prompt,
            "target_prompt": step.target_prompt,
            "iterations": step.iterations,
            "seed": step.seed,
            "checkpoint": os.path.relpath(ckpt_path, out_dir),
            "metrics_csv": os.path.relpath(csv_path, out_dir),
            "source_hash": source_field.content_hash(),
            "output_hash": current.content_hash(),
            **metrics,
        })
        _log(args.quiet, f"step {s}: in-region psnr "
                         f"{metrics['in_region_psnr_db']} dB, out-of-region mad "
                         f"{metrics['out_region_mad']}")

    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _log(args.quiet, f"wrote {summary_path}")
    return 0


def _step_metrics(source: VoxelField, edited: VoxelField, step, cfg: RunConfig, den) -> dict:
    """Held-out evaluation: PSNR against the bound target inside the region,
    drift against the source render outside it."""
    spec = dict(cfg.scene.camera_spec)
    n_az = int(spec.get("n_azimuth", 16))
    spec["azimuth_offset"] = float(spec.get("azimuth_offset", 0.0)) + np.pi / max(1, n_az)
    spec["n_azimuth"] = min(8, n_az)
    spec["elevations"] = spec.get("elevations", [0.2, 0.5])[:1]
    eval_cams = build_cameras(spec, "eval")
    target_img = den.targets[step.target_prompt]

    psnrs, mads = [], []
    for cam in eval_cams:
        rend_s = render_view(source, cam, n_samples=step.n_samples)
        rend_t = render_view(edited, cam, n_samples=step.n_samples)
        masks = region_masks_for_view(rend_s, step.region, cam, step.region_cfg)
        m_in = masks.m_t.astype(bool)
        if m_in.any():
            psnrs.append(psnr(rend_t.color, target_img, mask=m_in))
        mads.append(mean_abs_diff(rend_t.color, rend_s.color, mask=~m_in))

    def _clean(v: float) -> Optional[float]:
        return float(v) if np.isfinite(v) else None

    return {
        "in_region_psnr_db": _clean(float(np.mean(psnrs))) if psnrs else None,
        "out_region_mad": _clean(float(np.mean(mads))) if mads else None,
        "eval_cameras": len(eval_cams),
    }


def cmd_render(args) -> int:
    field = load_field(args.checkpoint)
    cameras = build_cameras(_load_spec(args.camera, "--camera"), "--camera")
    out_dir = os.path.abspath(args.out)
    os.makedirs(out_dir, exist_ok=True)
    for ci, cam in enumerate(cameras):
        rend = render_view(field, cam, n_samples=args.samples)
        base = os.path.join(out_dir, f"cam_{ci:02d}")
        _write_color(base + "_color", rend.color, "both" if args.ppm else "png")
        write_float_map(base + "_opacity.bin", rend.opacity)
        write_png_gray16(base + "_opacity.png", rend.opacity)
        write_float_map(base + "_depth.bin", np.where(np.isfinite(rend.depth), rend.depth, np.float32(np.finfo("f4").max)))
        write_png_gray16(base + "_depth.png", depth_preview(rend.depth, cam.near, cam.far))
        _log(args.quiet, f"rendered {base}_color")
    return 0


def cmd_masks(args) -> int:
    field = load_field(args.checkpoint)
    region = build_region(_load_spec(args.region, "--region"), os.getcwd(), "--region")
    try:
        region_cfg = RegionConfig(tau_o=args.tau_o)
    except ContractViolation as exc:
        raise ConfigError(f"--tau-o: {exc}") from exc
    cameras = build_cameras(_load_spec(args.camera, "--camera"), "--camera")
    out_dir = os.path.abspath(args.out)
    os.makedirs(out_dir, exist_ok=True)
    from .region import modify_depth
    from .render import render_box_depth

    for ci, cam in enumerate(cameras):
        rend = render_view(field, cam, n_samples=args.samples)
        masks = region_masks_for_view(rend, region, cam, region_cfg)
        d_tilde = modify_depth(rend.depth, rend.opacity, region_cfg.tau_o)
        if region.boxes:
            d_b = render_box_depth(region, cam)
        else:
            d_b = np.full(rend.opacity.shape, np.inf)
        base = os.path.join(out_dir, f"cam_{ci:02d}")
        write_png_gray16(base + "_m_t.png", masks.m_t.astype(np.float64))
        write_png_gray16(base + "_m_o.png", masks.m_o.astype(np.float64))
        finite_cap = np.float64(np.finfo("f4").max)
        write_float_map(base + "_d_tilde.bin", np.where(np.isfinite(d_tilde), d_tilde, finite_cap))
        write_png_gray16(base + "_d_tilde.png", depth_preview(d_tilde, cam.near, cam.far))
        write_float_map(base + "_d_b.bin", np.where(np.isfinite(d_b), d_b, finite_cap))
        write_png_gray16(base + "_d_b.png", depth_preview(d_b, cam.near, cam.far))
        _log(args.quiet, f"wrote masks for camera {ci}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prog3d", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a run config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="execute an edit chain")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override step seeds (derived per step)")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.add_argument("--snapshot-every", type=int, default=None)
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_ren = sub.add_parser("render", help="render a checkpoint")
    p_ren.add_argument("--checkpoint", required=True)
    p_ren.add_argument("--camera", required=True, help="camera rig spec (JSON file or inline)")
    p_ren.add_argument("--out", required=True)
    p_ren.add_argument("--samples", type=int, default=64)
    p_ren.add_argument("--ppm", action="store_true", help="also write PPM color images")
    p_ren.add_argument("--quiet", action="store_true")
    p_ren.set_defaults(func=cmd_render)

    p_msk = sub.add_parser("masks", help="write mask/depth visualizations")
    p_msk.add_argument("--checkpoint", required=True)
    p_msk.add_argument("--region", required=True, help="region spec (JSON file or inline)")
    p_msk.add_argument("--camera", required=True, help="camera rig spec (JSON file or inline)")
    p_msk.add_argument("--tau-o", type=float, default=0.5, dest="tau_o")
    p_msk.add_argument("--out", required=True)
    p_msk.add_argument("--samples", type=int, default=64)
    p_msk.add_argument("--quiet", action="store_true")
    p_msk.set_defaults(func=cmd_masks)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointFormatError, ContractViolation, EditAbort, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
