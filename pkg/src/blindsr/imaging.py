"""Image/kernel containers and the FFT-based degradation model.

The forward model is ``b = S(theta * x) + eta``: periodic convolution of the
high-resolution image ``x`` with a blur kernel ``theta``, s-fold decimation
``S`` (sampling offset (0,0) of each s x s block), plus white Gaussian noise.
This module provides the containers, the forward operator, its partial
gradients with respect to both blocks, and seeded synthetic data generation.

Conventions, fixed once here and relied on everywhere else:

* grids are row-major (height x width) float64 arrays, immutable after
  construction;
* kernels have odd side length p with center ((p-1)/2, (p-1)/2); the center
  tap corresponds to zero spatial shift, so a center delta is the identity;
* the convolution is circular (periodic boundary), computed by embedding the
  kernel in a zero image, rolling its center to index (0,0), and multiplying
  spectra; the FFT normalization never leaves this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError

__all__ = [
    "ImageGrid",
    "KernelGrid",
    "Problem",
    "convolve_periodic",
    "downsample",
    "upsample_adjoint",
    "forward_model",
    "datafit",
    "grad_x_datafit",
    "grad_theta_datafit",
    "generate_synthetic",
    "rot180",
]

#: Tolerance on |sum(theta) - 1| for a kernel to count as flux-normalized.
FLUX_TOL = 1e-12


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """2D real-valued raster; data is (height, width) float64, read-only."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatchError(f"image data must be 2D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("image contains non-finite entries")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    @staticmethod
    def zeros(height: int, width: int) -> "ImageGrid":
        return ImageGrid(np.zeros((height, width)))

    def allclose(self, other: "ImageGrid", tol: float = 0.0) -> bool:
        return self.shape == other.shape and bool(
            np.max(np.abs(self.data - other.data), initial=0.0) <= tol
        )


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """p x p blur kernel, p odd, center tap at ((p-1)/2, (p-1)/2)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatchError(f"kernel must be square 2D, got shape {arr.shape}")
        if arr.shape[0] % 2 == 0:
            raise InvalidParameterError(f"kernel side must be odd, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("kernel contains non-finite entries")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def p(self) -> int:
        return self.data.shape[0]

    @property
    def center(self) -> Tuple[int, int]:
        c = (self.p - 1) // 2
        return (c, c)

    def is_feasible(self, cap: float, tol: float = FLUX_TOL) -> bool:
        """True if 0 <= theta <= cap entrywise and the flux is 1 to `tol`."""
        d = self.data
        return bool(
            np.all(d >= 0.0) and np.all(d <= cap) and abs(float(d.sum()) - 1.0) <= tol
        )

    @staticmethod
    def delta(p: int) -> "KernelGrid":
        """Identity kernel: unit mass on the center tap."""
        arr = np.zeros((p, p))
        arr[(p - 1) // 2, (p - 1) // 2] = 1.0
        return KernelGrid(arr)


@dataclass(frozen=True, eq=False)
class Problem:
    """A blind super-resolution instance: observation, scale, optional truth."""

    b: ImageGrid
    s: int
    p: int
    ground_truth: Optional[Tuple[ImageGrid, KernelGrid]] = None
    noise_std: float = 0.0

    def __post_init__(self):
        if self.s < 1:
            raise InvalidParameterError(f"scale factor must be >= 1, got {self.s}")
        if self.noise_std < 0:
            raise InvalidParameterError("noise_std must be non-negative")
        if self.ground_truth is not None:
            x_true, _ = self.ground_truth
            if x_true.shape != self.high_res_shape:
                raise DimensionMismatchError(
                    f"ground truth shape {x_true.shape} inconsistent with "
                    f"observation {self.b.shape} at scale {self.s}"
                )

    @property
    def high_res_shape(self) -> Tuple[int, int]:
        return (self.b.height * self.s, self.b.width * self.s)


def _embed_kernel(theta: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Zero-pad the kernel to `shape` and roll its center tap to index (0,0)."""
    p = theta.shape[0]
    c = (p - 1) // 2
    full = np.zeros(shape)
    full[:p, :p] = theta
    return np.roll(full, (-c, -c), axis=(0, 1))


def kernel_frequency_response(theta: KernelGrid, shape: Tuple[int, int]) -> np.ndarray:
    """Spectrum of the periodic convolution operator for `theta` on `shape`."""
    if theta.p > shape[0] or theta.p > shape[1]:
        raise DimensionMismatchError(
            f"kernel side {theta.p} exceeds image dimensions {shape}"
        )
    return np.fft.fft2(_embed_kernel(theta.data, shape))


def rot180(theta: KernelGrid) -> KernelGrid:
    """Kernel rotated by 180 degrees; convolution with it is the adjoint H^T."""
    return KernelGrid(theta.data[::-1, ::-1].copy())


def convolve_periodic(x: ImageGrid, theta: KernelGrid) -> ImageGrid:
    """Circular 2D convolution theta * x, same size as x.

    The kernel center maps to zero shift: a center delta leaves x unchanged.
    """
    lam = kernel_frequency_response(theta, x.shape)
    out = np.fft.ifft2(np.fft.fft2(x.data) * lam).real
    return ImageGrid(out)


def _correlate_periodic(z: np.ndarray, theta: KernelGrid) -> np.ndarray:
    """H^T z: circular convolution with the 180-degree-rotated kernel."""
    lam = kernel_frequency_response(theta, z.shape)
    return np.fft.ifft2(np.fft.fft2(z) * np.conj(lam)).real


def downsample(x: ImageGrid, s: int) -> ImageGrid:
    """s-fold decimation, keeping the sample at offset (0,0) of each block."""
    if s < 1:
        raise InvalidParameterError(f"scale factor must be >= 1, got {s}")
    if x.height % s or x.width % s:
        raise DimensionMismatchError(
            f"dimensions {x.shape} not divisible by scale factor {s}"
        )
    return ImageGrid(x.data[::s, ::s].copy())


def upsample_adjoint(y: ImageGrid, s: int) -> ImageGrid:
    """Adjoint of `downsample`: place y at the (0,0) offsets, zeros elsewhere."""
    if s < 1:
        raise InvalidParameterError(f"scale factor must be >= 1, got {s}")
    out = np.zeros((y.height * s, y.width * s))
    out[::s, ::s] = y.data
    return ImageGrid(out)


def forward_model(x: ImageGrid, theta: KernelGrid, s: int) -> ImageGrid:
    """Noiseless degradation: decimated periodic blur, S(theta * x)."""
    return downsample(convolve_periodic(x, theta), s)


def _residual(x: ImageGrid, theta: KernelGrid, b: ImageGrid, s: int) -> np.ndarray:
    fwd = forward_model(x, theta, s)
    if fwd.shape != b.shape:
        raise DimensionMismatchError(
            f"observation shape {b.shape} inconsistent with model output {fwd.shape}"
        )
    return fwd.data - b.data


def datafit(x: ImageGrid, theta: KernelGrid, b: ImageGrid, s: int) -> float:
    """Half squared residual norm, 0.5 * ||S(theta*x) - b||^2."""
    r = _residual(x, theta, b, s)
    return 0.5 * float(np.vdot(r, r).real)


def grad_x_datafit(x: ImageGrid, theta: KernelGrid, b: ImageGrid, s: int) -> ImageGrid:
    """Exact gradient of `datafit` in x: H^T S^T (S H x - b)."""
    r = _residual(x, theta, b, s)
    up = upsample_adjoint(ImageGrid(r), s)
    return ImageGrid(_correlate_periodic(up.data, theta))


def grad_theta_datafit(x: ImageGrid, theta: KernelGrid, b: ImageGrid, s: int) -> KernelGrid:
    """Exact gradient of `datafit` in theta, on the p x p support.

    This is the circular cross-correlation of x with the zero-upsampled
    residual, cropped to the kernel window with the center convention of
    `convolve_periodic`.
    """
    r = _residual(x, theta, b, s)
    z = upsample_adjoint(ImageGrid(r), s).data
    # full correlation C[u,v] = sum_ij z[i,j] * x[(i-u) mod h, (j-v) mod w]
    corr = np.fft.ifft2(np.fft.fft2(z) * np.conj(np.fft.fft2(x.data))).real
    p = theta.p
    c = (p - 1) // 2
    rows = (np.arange(p) - c) % x.height
    cols = (np.arange(p) - c) % x.width
    return KernelGrid(corr[np.ix_(rows, cols)])


def generate_synthetic(
    x_true: ImageGrid,
    theta_true: KernelGrid,
    s: int,
    noise_std: float,
    seed: int,
) -> Problem:
    """Degrade a known scene into an observation with seeded Gaussian noise.

    Noise is drawn from ``numpy.random.default_rng(seed)`` (PCG64), so runs
    are reproducible across platforms. The kernel must be non-negative with
    unit flux; the cap constraint is a solver-side concern.
    """
    if noise_std < 0:
        raise InvalidParameterError("noise_std must be non-negative")
    d = theta_true.data
    if np.any(d < 0) or abs(float(d.sum()) - 1.0) > FLUX_TOL:
        raise InvalidParameterError(
            "theta_true must be non-negative with unit flux"
        )
    clean = forward_model(x_true, theta_true, s)
    rng = np.random.default_rng(seed)
    noisy = clean.data + noise_std * rng.standard_normal(clean.shape)
    return Problem(
        b=ImageGrid(noisy),
        s=s,
        p=theta_true.p,
        ground_truth=(x_true, theta_true),
        noise_std=noise_std,
    )
