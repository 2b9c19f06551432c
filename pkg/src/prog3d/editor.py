"""Optimization driver: one region-constrained edit step, and ordered chains.

run_edit_step copies the source field and runs Adam over the raw grids. Each
iteration renders one (or a small batch of) orbit view(s) of the evolving
target field, forms the guided score-distillation residual against the frozen
source render of the same view, adds the consistency and initialization
constraint gradients, and pushes everything through the render adjoint in a
single pass (the adjoint is linear in its pixel seeds, so this equals
accumulating per-term adjoints).

All randomness flows from one seeded generator in a fixed draw order
(view picks, timestep, then per view jitter seed and noise), so a repeated
run with the same config is bit-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .cameras import Camera
from .constraints import (ConstraintWeights, InitSchedule, consistency_loss,
                          initialization_loss, naive_consistency_loss)
from .errors import ConfigError, ContractViolation, EditAbort
from .field import FieldGradient, VoxelField
from .guidance import (GuidanceConfig, NoiseSchedule, add_noise, oscs_predict,
                       sample_timestep)
from .region import MaskSet, RegionConfig, RegionPrompt, region_masks_for_view
from .render import RenderOutput, render_view, render_view_adjoint

__all__ = [
    "AdamState",
    "adam_update",
    "EditConfig",
    "EditChain",
    "LossRecord",
    "LossReport",
    "StepResult",
    "run_edit_step",
    "run_chain",
    "validate_chain",
]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.float64))


def adam_update(params: np.ndarray, grad: np.ndarray, state: AdamState, step: int,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> np.ndarray:
    """One in-place Adam step with bias correction. step is 1-indexed."""
    if step < 1:
        raise ContractViolation("Adam step index is 1-indexed")
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ContractViolation("param/grad/state shapes differ")
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** step)
    v_hat = state.v / (1.0 - beta2 ** step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


@dataclass
class EditConfig:
    """Everything one edit step needs besides the source field and cameras."""

    source_prompt: Optional[str]
    target_prompt: str
    region: RegionPrompt
    guidance: GuidanceConfig
    seed: int
    iterations: int = 10000
    batch_views: int = 1
    n_samples: int = 64
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    region_cfg: RegionConfig = RegionConfig()
    init_schedule: Optional[InitSchedule] = None
    weights: ConstraintWeights = ConstraintWeights()
    naive_consistency: bool = False
    t_schedule: str = "uniform"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.batch_views < 1:
            raise ConfigError("batch_views must be >= 1")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")
        if self.init_schedule is None:
            # Bootstrap phase covers the first quarter of the run by default.
            self.init_schedule = InitSchedule(strength=0.5, k_max=max(1, self.iterations // 4))
        if self.init_schedule.k_max > self.iterations:
            raise ConfigError(
                f"init_schedule.k_max = {self.init_schedule.k_max} exceeds iterations = {self.iterations}")
        if self.t_schedule not in ("uniform", "linear_decay"):
            raise ConfigError(f"unknown t_schedule: {self.t_schedule!r}")


@dataclass
class LossRecord:
    k: int
    t: int
    sds_norm: float
    consist: float
    init: float
    grad_norm: float


@dataclass
class LossReport:
    """Per-iteration metrics for one edit step."""

    records: List[LossRecord] = dc_field(default_factory=list)

    CSV_HEADER = ("k", "t", "sds_norm", "consist", "init", "grad_norm")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for r in self.records:
                writer.writerow([r.k, r.t, repr(r.sds_norm), repr(r.consist),
                                 repr(r.init), repr(r.grad_norm)])


def _check_finite(name: str, k: int, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise EditAbort(f"non-finite {name} at iteration {k}")


def run_edit_step(source: VoxelField, cfg: EditConfig, den, cameras: List[Camera],
                  sched: Optional[NoiseSchedule] = None,
                  snapshot_every: Optional[int] = None,
                  snapshot_cb: Optional[Callable[[int, VoxelField], None]] = None,
                  ) -> Tuple[VoxelField, LossReport]:
    """Optimize a copy of the source field toward the target prompt.

    The source field is never modified. Source renders and masks are computed
    once per camera on first use and reused; they depend only on the frozen
    source field. snapshot_cb, when given, fires before the update on every
    snapshot_every-th iteration (so k = 0 sees the unedited field) and once
    more after the final update.
    """
    if not cameras:
        raise ContractViolation("need at least one camera")
    if sched is None:
        sched = getattr(den, "schedule", None) or NoiseSchedule()

    target = source.copy()
    state_d = AdamState.zeros(target.density_params.shape)
    state_c = AdamState.zeros(target.color_params.shape)
    rng = np.random.default_rng(int(cfg.seed))
    report = LossReport()

    source_views: Dict[int, Tuple[RenderOutput, MaskSet]] = {}

    def source_view(idx: int) -> Tuple[RenderOutput, MaskSet]:
        if idx not in source_views:
            rend = render_view(source, cameras[idx], n_samples=cfg.n_samples, stratified=False)
            masks = region_masks_for_view(rend, cfg.region, cameras[idx], cfg.region_cfg)
            source_views[idx] = (rend, masks)
        return source_views[idx]

    consist_fn = naive_consistency_loss if cfg.naive_consistency else consistency_loss

    for k in range(cfg.iterations):
        if snapshot_cb is not None and snapshot_every and k % snapshot_every == 0:
            snapshot_cb(k, target)

        view_ids = [int(v) for v in rng.integers(0, len(cameras), size=cfg.batch_views)]
        t = sample_timestep(rng, sched, k, cfg.iterations, cfg.t_schedule)

        grad = FieldGradient.zeros_like(target)
        sds_sq = 0.0
        consist_total = 0.0
        init_total = 0.0
        for idx in view_ids:
            cam = cameras[idx]
            rend_s, masks = source_view(idx)
            jitter_seed = int(rng.integers(0, 2 ** 63))
            rend_t = render_view(target, cam, n_samples=cfg.n_samples,
                                 stratified=True, seed=jitter_seed, keep_samples=True)

            eps = rng.standard_normal(rend_t.color.shape)
            x_t = add_noise(rend_t.color, t, eps, sched)
            eps_hat = oscs_predict(den, x_t, cfg.source_prompt, cfg.target_prompt,
                                   t, cfg.guidance)
            sds_resid = sched.loss_weight(t) * (eps_hat - eps)
            _check_finite("sds_residual", k, sds_resid)

            c_loss, d_col_c, d_op_c = consist_fn(rend_t.color, rend_t.opacity,
                                                 rend_s.color, masks)
            _check_finite("consistency_loss", k, [c_loss], d_col_c, d_op_c)
            i_loss, d_op_i = initialization_loss(rend_t.opacity, masks, k, cfg.init_schedule)
            _check_finite("initialization_loss", k, [i_loss], d_op_i)

            # Single adjoint pass over the combined pixel seeds; identical to
            # per-term adjoints because the adjoint is linear.
            d_color = sds_resid + cfg.weights.w_consist * d_col_c
            d_opacity = cfg.weights.w_consist * d_op_c + d_op_i
            grad.add(render_view_adjoint(target, cam, d_color, d_opacity, rend_t.cache))

            sds_sq += float(np.sum(sds_resid ** 2))
            consist_total += c_loss
            init_total += i_loss

        if not grad.finite():
            raise EditAbort(f"non-finite field_gradient at iteration {k}")

        adam_update(target.density_params, grad.density_grad, state_d, k + 1,
                    cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        adam_update(target.color_params, grad.color_grad, state_c, k + 1,
                    cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

        report.records.append(LossRecord(k, t, float(np.sqrt(sds_sq)),
                                         consist_total, init_total, grad.norm()))

    if snapshot_cb is not None:
        snapshot_cb(cfg.iterations, target)
    return target, report


@dataclass
class EditChain:
    """Ordered edit steps applied to an initial field (vacuum for generation)."""

    initial: VoxelField
    steps: List[EditConfig]

    def __post_init__(self):
        if not self.steps:
            raise ConfigError("chain needs at least one step")


def validate_chain(chain: EditChain) -> None:
    """Check prompt linkage before any compute: each step edits what the
    previous one produced."""
    for i in range(1, len(chain.steps)):
        prev, cur = chain.steps[i - 1], chain.steps[i]
        if cur.source_prompt != prev.target_prompt:
            raise ConfigError(
                f"chain step {i} source_prompt {cur.source_prompt!r} does not match "
                f"step {i - 1} target_prompt {prev.target_prompt!r}")


@dataclass
class StepResult:
    field: VoxelField
    report: LossReport
    source_hash: str
    output_hash: str


def run_chain(chain: EditChain, den, cameras: List[Camera],
              sched: Optional[NoiseSchedule] = None,
              snapshot_every: Optional[int] = None,
              snapshot_cb: Optional[Callable[[int, int, VoxelField], None]] = None,
              ) -> Tuple[VoxelField, List[StepResult]]:
    """Run every step in order, keeping each intermediate field.

    snapshot_cb receives (step_index, k, field). Prompt linkage is validated
    before any rendering happens.
    """
    validate_chain(chain)
    current = chain.initial
    results: List[StepResult] = []
    for s, cfg in enumerate(chain.steps):
        cb = None
        if snapshot_cb is not None:
            cb = lambda k, f, _s=s: snapshot_cb(_s, k, f)
        src_hash = current.content_hash()
        current, report = run_edit_step(current, cfg, den, cameras, sched=sched,
                                        snapshot_every=snapshot_every, snapshot_cb=cb)
        results.append(StepResult(current, report, src_hash, current.content_hash()))
    return current, results
