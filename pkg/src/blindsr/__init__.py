"""Blind single-image super-resolution with a plug-and-play prior.

Jointly estimates a high-resolution image and the blur kernel behind a
low-resolution observation, alternating a forward-reflected-backward step on
the image with a projected-gradient line-search step on the kernel. The
image prior is derived from a pluggable denoiser (built-in, or an external
process reached over a binary wire protocol); the kernel is constrained to
be non-negative, flux-normalized and entrywise capped.
"""

from .errors import (
    BlindSRError,
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    InfeasibleSpecError,
    InvalidParameterError,
    SolverError,
    TransportError,
)
from .imaging import (
    ImageGrid,
    KernelGrid,
    Problem,
    convolve_periodic,
    datafit,
    downsample,
    forward_model,
    generate_synthetic,
    grad_theta_datafit,
    grad_x_datafit,
    rot180,
    upsample_adjoint,
)
from .initialization import bicubic_init, init_kernel, psnr, synthetic_scene
from .projection import CappedSimplexSpec, project_capped_simplex, project_oracle
from .protocol import ExternalDenoiserClient
from .prox import ProxWorkspace, prox_datafit, prox_datafit_oracle
from .regularizer import (
    DenoiserSpec,
    RegularizerSpec,
    apply_denoiser,
    denoiser_vjp,
    estimate_lphi,
    grad_phi,
    induced_denoise,
    phi_value,
)
from .solver import (
    IterationTrace,
    SolverConfig,
    SolverState,
    merit_value,
    run,
    stationarity_residual,
    theta_update,
    x_update,
)

__version__ = "0.1.0"

__all__ = [
    "BlindSRError",
    "ConfigError",
    "ConvergenceError",
    "DimensionMismatchError",
    "InfeasibleSpecError",
    "InvalidParameterError",
    "SolverError",
    "TransportError",
    "ImageGrid",
    "KernelGrid",
    "Problem",
    "convolve_periodic",
    "datafit",
    "downsample",
    "forward_model",
    "generate_synthetic",
    "grad_theta_datafit",
    "grad_x_datafit",
    "rot180",
    "upsample_adjoint",
    "bicubic_init",
    "init_kernel",
    "psnr",
    "synthetic_scene",
    "CappedSimplexSpec",
    "project_capped_simplex",
    "project_oracle",
    "ExternalDenoiserClient",
    "ProxWorkspace",
    "prox_datafit",
    "prox_datafit_oracle",
    "DenoiserSpec",
    "RegularizerSpec",
    "apply_denoiser",
    "denoiser_vjp",
    "estimate_lphi",
    "grad_phi",
    "induced_denoise",
    "phi_value",
    "IterationTrace",
    "SolverConfig",
    "SolverState",
    "merit_value",
    "run",
    "stationarity_residual",
    "theta_update",
    "x_update",
]
