"""Microwave inverse scattering in 2-D TM: forward solver, BIM/VBIM and an unrolled-VBIM scaffold."""

from .exceptions import ConvergenceError, InversionAborted, NumericalError, RefinerShapeError
from .forward import NoiseSpec, add_noise, incident_fields, scattered_field, simulate, solve_total_field
from .greens import GreensSurface, GreensVolume, assemble_gd, assemble_gs, gd_apply, gs_adjoint_apply, gs_apply
from .inversion import IterateTrace, bim, bps, clamp_contrast, stack_operator, tikhonov_solve, vbim
from .metrics import LossParams, layer_loss, layer_weights, nmse, ssim, total_loss, tv_seminorm
from .scene import SceneConfig, ShapeSpec, annulus, austria_profile, disk, load_scene, rasterize
from .special import bessel_j, bessel_y, hankel1
from .unrolled import IdentityRefiner, PipelineConfig, Refiner, layer_step, run_pipeline

__version__ = "0.1.0"
