"""Starting points, synthetic benchmark scenes and the PSNR metric."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError
from .imaging import ImageGrid, KernelGrid
from .projection import CappedSimplexSpec, project_capped_simplex

__all__ = ["bicubic_init", "init_kernel", "psnr", "synthetic_scene"]

#: PSNR reported for a zero-MSE pair instead of infinity.
PSNR_CAP = 999.0


def _keys_weight(t: np.ndarray) -> np.ndarray:
    """Keys cubic interpolation kernel with a = -0.5."""
    a = -0.5
    t = np.abs(t)
    w = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    w[near] = (a + 2.0) * t[near] ** 3 - (a + 3.0) * t[near] ** 2 + 1.0
    w[far] = a * t[far] ** 3 - 5.0 * a * t[far] ** 2 + 8.0 * a * t[far] - 4.0 * a
    return w


def _upsample_axis(data: np.ndarray, s: int) -> np.ndarray:
    """Cubic interpolation along axis 0, periodic, output sample I at I/s.

    Evaluating at I/s aligns the upsampled grid with decimation at offset
    (0,0): sample s*j reproduces input sample j exactly (the kernel is
    interpolating). Equivalent to standard bicubic resize followed by a
    (s-1)/(2*s)-pixel phase-shift correction.
    """
    n = data.shape[0]
    t = np.arange(n * s) / s
    base = np.floor(t).astype(int)
    frac = t - base
    out = np.zeros((n * s,) + data.shape[1:])
    for tap in (-1, 0, 1, 2):
        w = _keys_weight(frac - tap)
        out += w[:, None] * data[(base + tap) % n]
    return out


def bicubic_init(b: ImageGrid, s: int) -> ImageGrid:
    """s-fold bicubic upsampling of b, phase-aligned with the decimation grid."""
    if s < 1:
        raise InvalidParameterError(f"scale factor must be >= 1, got {s}")
    if s == 1:
        return b
    rows = _upsample_axis(b.data, s)
    cols = _upsample_axis(rows.T, s).T
    return ImageGrid(cols)


def init_kernel(p: int, width: float, spec: CappedSimplexSpec) -> KernelGrid:
    """Isotropic Gaussian of the given standard deviation, projected feasible."""
    if p % 2 == 0 or p < 1:
        raise InvalidParameterError(f"kernel side must be odd positive, got {p}")
    if width <= 0:
        raise InvalidParameterError(f"kernel width must be positive, got {width}")
    c = (p - 1) // 2
    d = np.arange(p) - c
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * width**2))
    g /= g.sum()
    return project_capped_simplex(KernelGrid(g), spec)


def psnr(x: ImageGrid, ref: ImageGrid, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at PSNR_CAP when the images coincide."""
    if x.shape != ref.shape:
        raise DimensionMismatchError(f"shapes differ: {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise InvalidParameterError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x.data - ref.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * np.log10(peak**2 / mse)


def synthetic_scene(height: int, width: int, seed: int) -> ImageGrid:
    """Deterministic test scene: a smooth random field plus hard-edged disks.

    Values lie in [0, 1]. The disks give the super-resolution problem edges
    worth recovering; the field keeps the spectrum broad.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((height, width))
    di = np.minimum(np.arange(height), height - np.arange(height))
    dj = np.minimum(np.arange(width), width - np.arange(width))
    sig = max(min(height, width) / 16.0, 1.0)
    k = np.exp(-(di[:, None] ** 2 + dj[None, :] ** 2) / (2.0 * sig**2))
    k /= k.sum()
    field = np.fft.ifft2(np.fft.fft2(noise) * np.fft.fft2(k)).real

    ii, jj = np.mgrid[0:height, 0:width]
    for _ in range(6):
        ci = rng.uniform(0, height)
        cj = rng.uniform(0, width)
        radius = rng.uniform(0.05, 0.15) * min(height, width)
        level = rng.uniform(-1.0, 1.0)
        mask = (ii - ci) ** 2 + (jj - cj) ** 2 <= radius**2
        field = field + level * mask * np.std(field) * 2.0

    lo, hi = field.min(), field.max()
    if hi > lo:
        field = (field - lo) / (hi - lo)
    return ImageGrid(field)
