"""External denoiser endpoint for the PNPD wire protocol."""

from .denoisers import MedianGaussianDenoiser, TorchScriptDenoiser, build_denoiser
from .server import Endpoint, EndpointConfig, serve

__version__ = "0.1.0"

__all__ = [
    "MedianGaussianDenoiser",
    "TorchScriptDenoiser",
    "build_denoiser",
    "Endpoint",
    "EndpointConfig",
    "serve",
]
