"""Diffusion-style guidance: noise schedule, classifier-free mixing, and
suppression of semantics the source prompt already explains.

Two guidance conventions coexist here deliberately. cfg_predict follows the
common classifier-free form (1 + omega) * eps_cond - omega * eps_uncond,
whose "conditional lift" is (1 + omega) times the delta from unconditional.
oscs_predict follows the component form eps_uncond + (omega / W) * proj +
omega * prep, which at W = 1 reduces to eps_uncond + omega * delta_t, i.e. a
lift of omega rather than 1 + omega. The two scale conventions differ by one
unit of delta at W = 1; both are implemented verbatim and no attempt is made
to reconcile them.

The overlapped-component split works on whole prediction tensors: proj is the
part of the target delta explained by the source delta (one global projection
coefficient over the flattened tensors), prep is the remainder. Scaling proj
down by W suppresses semantics the source prompt already accounts for, so the
edit spends its guidance on what is actually new.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Dict, Optional, Protocol, Tuple

import numpy as np

from .errors import ContractViolation
from .field import FieldGradient
from .render import RenderCache, RenderOutput, render_view_adjoint

__all__ = [
    "NoiseSchedule",
    "GuidanceConfig",
    "Denoiser",
    "AnalyticTargetDenoiser",
    "MemoizedDenoiser",
    "add_noise",
    "cfg_predict",
    "delta_components",
    "oscs_decompose",
    "oscs_predict",
    "sds_gradient",
    "sample_timestep",
    "PROJ_EPS",
]

# Squared-norm floor under which the source delta is treated as degenerate and
# the whole target delta passes through unsuppressed.
PROJ_EPS = 1e-12


@dataclass
class NoiseSchedule:
    """Forward-process schedule. Index t runs 1..n_steps; arrays use t - 1."""

    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    beta: np.ndarray = dc_field(init=False)
    alpha: np.ndarray = dc_field(init=False)
    alpha_bar: np.ndarray = dc_field(init=False)
    sigma: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ContractViolation("n_steps must be >= 1")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ContractViolation("need 0 < beta_start <= beta_end < 1")
        self.beta = np.linspace(self.beta_start, self.beta_end, self.n_steps, dtype=np.float64)
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        # Posterior noise scale; stored for completeness, reverse sampling is
        # not part of this engine.
        self.sigma = np.sqrt(self.beta * (1.0 - prev) / (1.0 - self.alpha_bar))

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not (1 <= t <= self.n_steps):
            raise ContractViolation(f"timestep {t} outside 1..{self.n_steps}")
        return t

    def abar(self, t: int) -> float:
        return float(self.alpha_bar[self._check_t(t) - 1])

    def loss_weight(self, t: int) -> float:
        """w(t) = 1 - alpha_bar_t, the distillation weight."""
        return 1.0 - self.abar(t)


@dataclass(frozen=True)
class GuidanceConfig:
    """omega is the guidance scale, w_suppress divides the overlapped part."""

    omega: float
    w_suppress: float = 4.0

    def __post_init__(self):
        if self.w_suppress <= 0.0:
            raise ContractViolation(f"w_suppress must be > 0, got {self.w_suppress}")
        if self.w_suppress <= 1.0:
            warnings.warn(
                f"w_suppress = {self.w_suppress} <= 1 amplifies instead of suppressing "
                "the overlapped component; values > 1 are recommended",
                stacklevel=2)


class Denoiser(Protocol):
    """Noise predictor. prompt None means the unconditional branch."""

    def predict(self, x_t: np.ndarray, prompt: Optional[str], t: int) -> np.ndarray: ...


class MemoizedDenoiser:
    """Caches predictions per (prompt, t) for one fixed x_t.

    Used inside a single guidance evaluation so the unconditional branch is
    queried exactly once no matter how many deltas need it.
    """

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self._cache: Dict[Tuple[Optional[str], int], np.ndarray] = {}

    def predict(self, x_t: np.ndarray, prompt: Optional[str], t: int) -> np.ndarray:
        key = (prompt, int(t))
        if key not in self._cache:
            self._cache[key] = self.inner.predict(x_t, prompt, t)
        return self._cache[key]


class AnalyticTargetDenoiser:
    """Closed-form denoiser pulling toward fixed target images.

    Each prompt is bound to a target image I_y. Under the forward process
    x_t = sqrt(abar) x0 + sqrt(1 - abar) eps, the exact noise prediction for
    a sample whose clean image is I_y is

        predict(x_t, y, t) = (x_t - sqrt(abar_t) I_y) / sqrt(1 - abar_t)

    The unconditional branch uses the blend sum_p w_p I_p over the configured
    prompt weights. This makes end-to-end edits fully deterministic and
    testable without any learned model.
    """

    def __init__(self, schedule: NoiseSchedule, targets: Dict[str, np.ndarray],
                 uncond_blend: Dict[str, float]):
        if not targets:
            raise ContractViolation("need at least one prompt target")
        shapes = {np.asarray(v).shape for v in targets.values()}
        if len(shapes) != 1:
            raise ContractViolation(f"target images must share one shape, got {shapes}")
        total = sum(uncond_blend.values())
        if abs(total - 1.0) > 1e-9:
            raise ContractViolation(f"unconditional blend weights must sum to 1, got {total}")
        unknown = set(uncond_blend) - set(targets)
        if unknown:
            raise ContractViolation(f"blend references unknown prompts: {sorted(unknown)}")
        self.schedule = schedule
        self.targets = {k: np.asarray(v, dtype=np.float64) for k, v in targets.items()}
        shape = next(iter(shapes))
        self.uncond_image = np.zeros(shape, dtype=np.float64)
        for name, wgt in uncond_blend.items():
            self.uncond_image += wgt * self.targets[name]

    def predict(self, x_t: np.ndarray, prompt: Optional[str], t: int) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        base = self.uncond_image if prompt is None else self.targets.get(prompt)
        if base is None:
            raise ContractViolation(f"unknown prompt: {prompt!r}")
        if x_t.shape != base.shape:
            raise ContractViolation(f"x_t shape {x_t.shape} != target shape {base.shape}")
        abar = self.schedule.abar(t)
        return (x_t - np.sqrt(abar) * base) / np.sqrt(1.0 - abar)


def add_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward-noise a clean tensor: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ContractViolation("x0 and eps shapes differ")
    abar = sched.abar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def cfg_predict(eps_cond: np.ndarray, eps_uncond: np.ndarray, omega: float) -> np.ndarray:
    """Classifier-free mixing: (1 + omega) * eps_cond - omega * eps_uncond."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ContractViolation("prediction shapes differ")
    return (1.0 + omega) * eps_cond - omega * eps_uncond


def delta_components(den: Denoiser, x_t: np.ndarray, source_prompt: Optional[str],
                     target_prompt: str, t: int):
    """Source and target prediction deltas against the unconditional branch.

    Queries the unconditional branch exactly once per call. A None
    source_prompt means the source is the unconditional itself, so its delta
    is exactly zero.
    """
    memo = den if isinstance(den, MemoizedDenoiser) else MemoizedDenoiser(den)
    eps_u = memo.predict(x_t, None, t)
    eps_t = memo.predict(x_t, target_prompt, t)
    if source_prompt is None:
        d_s = np.zeros_like(eps_u)
    else:
        d_s = memo.predict(x_t, source_prompt, t) - eps_u
    return d_s, eps_t - eps_u


def oscs_decompose(d_source: np.ndarray, d_target: np.ndarray):
    """Split the target delta into overlapped and new-semantics parts.

    proj is the orthogonal projection of d_target onto d_source, taken over
    the whole flattened tensors with one scalar coefficient; prep is the
    remainder. When |d_source|^2 < PROJ_EPS the split degenerates to
    (0, d_target).
    """
    d_source = np.asarray(d_source, dtype=np.float64)
    d_target = np.asarray(d_target, dtype=np.float64)
    if d_source.shape != d_target.shape:
        raise ContractViolation("delta shapes differ")
    denom = float(np.sum(d_source * d_source))
    if denom < PROJ_EPS:
        return np.zeros_like(d_target), d_target.copy()
    coeff = float(np.sum(d_source * d_target)) / denom
    proj = coeff * d_source
    prep = d_target - proj
    return proj, prep


def oscs_predict(den: Denoiser, x_t: np.ndarray, source_prompt: Optional[str],
                 target_prompt: str, t: int, cfg: GuidanceConfig) -> np.ndarray:
    """Guided prediction with the overlapped component suppressed:

        eps_hat = eps_u + (omega / W) * proj + omega * prep

    computed as eps_u + omega * d_target - omega * (1 - 1/W) * proj, which is
    the same expression rearranged so that W = 1 reduces to
    eps_u + omega * d_target bitwise. The unconditional branch is evaluated
    exactly once per call.
    """
    memo = MemoizedDenoiser(den)
    d_s, d_t = delta_components(memo, x_t, source_prompt, target_prompt, t)
    eps_u = memo.predict(x_t, None, t)
    proj, _ = oscs_decompose(d_s, d_t)
    return eps_u + cfg.omega * d_t - (cfg.omega * (1.0 - 1.0 / cfg.w_suppress)) * proj


def sds_gradient(eps_hat: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule,
                 view_cache: RenderCache) -> FieldGradient:
    """Score-distillation field gradient for one rendered view.

    The pixel residual w(t) * (eps_hat - eps) is pushed through the render
    adjoint as a color derivative; eps_hat is treated as constant w.r.t. the
    field and opacity receives no direct term.
    """
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise ContractViolation("eps shapes differ")
    cam = view_cache.camera
    if cam is None:
        raise ContractViolation("view cache lacks a camera")
    if eps_hat.shape != (cam.height, cam.width, 3):
        raise ContractViolation("residual shape does not match the cached view")
    d_color = sched.loss_weight(t) * (eps_hat - eps)
    d_opacity = np.zeros((cam.height, cam.width), dtype=np.float64)
    return render_view_adjoint(view_cache.field, cam, d_color, d_opacity, view_cache)


def sample_timestep(rng: np.random.Generator, sched: NoiseSchedule, k: int,
                    n_iters: int, mode: str = "uniform") -> int:
    """Draw the distillation timestep for iteration k.

    "uniform" samples over the middle of the schedule, [0.02 T, 0.98 T].
    "linear_decay" walks the same band monotonically from high to low noise
    as k advances, with no randomness.
    """
    t_lo = max(1, int(np.ceil(0.02 * sched.n_steps)))
    t_hi = min(sched.n_steps, int(np.floor(0.98 * sched.n_steps)))
    if mode == "uniform":
        return int(rng.integers(t_lo, t_hi + 1))
    if mode == "linear_decay":
        frac = k / max(1, n_iters - 1)
        return int(round(t_hi + (t_lo - t_hi) * frac))
    raise ContractViolation(f"unknown timestep mode: {mode!r}")
