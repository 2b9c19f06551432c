"""Region-constrained progressive editing of voxel radiance fields.

The engine decomposes content creation into ordered local edit steps. Each
step optimizes a copy of its source field so that the edited region follows a
new prompt while everything outside stays pinned to the source, with
overlapped-semantics suppression steering the guidance toward what is
actually new.
"""

from .cameras import Camera, Ray, generate_rays, orbit_rig, ray_at
from .constraints import (ConstraintWeights, InitSchedule, consistency_loss,
                          initialization_loss, naive_consistency_loss)
from .editor import (AdamState, EditChain, EditConfig, LossRecord, LossReport,
                     StepResult, adam_update, run_chain, run_edit_step, validate_chain)
from .errors import CheckpointFormatError, ConfigError, ContractViolation, EditAbort
from .field import (FieldGradient, VoxelField, accumulate_sample_adjoint,
                    load_field, sample_field, save_field)
from .guidance import (AnalyticTargetDenoiser, Denoiser, GuidanceConfig,
                       MemoizedDenoiser, NoiseSchedule, add_noise, cfg_predict,
                       delta_components, oscs_decompose, oscs_predict,
                       sample_timestep, sds_gradient)
from .metrics import mean_abs_diff, psnr
from .region import (MaskSet, OrientedBox, RegionConfig, RegionPrompt,
                     compute_masks, modify_depth, region_masks_for_view)
from .render import (RenderCache, RenderOutput, render_box_depth, render_ray,
                     render_view, render_view_adjoint)

__version__ = "0.1.0"
