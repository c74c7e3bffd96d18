"""Fallback and TorchScript denoisers: shape, determinism, differentiation."""

import numpy as np
import pytest
import torch

from pnpd_bridge.denoisers import (
    MedianGaussianDenoiser,
    TorchScriptDenoiser,
    build_denoiser,
)


def smooth_field(n, seed, amplitude=1.0):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, n))
    d = np.minimum(np.arange(n), n - np.arange(n))
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * 2.0**2))
    k /= k.sum()
    field = np.fft.ifft2(np.fft.fft2(noise) * np.fft.fft2(k)).real
    return (amplitude * field / np.abs(field).max()).astype(np.float32)


def test_zero_image_finite_same_shape():
    den = MedianGaussianDenoiser()
    out = den.denoise(np.zeros((16, 12), dtype=np.float32), sigma=0.06)
    assert out.shape == (16, 12)
    assert np.all(np.isfinite(out))


def test_constant_image_fixed():
    den = MedianGaussianDenoiser()
    out = den.denoise(np.full((8, 8), 0.3, dtype=np.float32), sigma=0.1)
    assert np.abs(out - 0.3).max() <= 1e-6


def test_deterministic_replies():
    den = MedianGaussianDenoiser()
    x = smooth_field(16, 0)
    a = den.denoise(x, 0.05)
    b = den.denoise(x, 0.05)
    assert a.tobytes() == b.tobytes()


def test_median_removes_impulse():
    den = MedianGaussianDenoiser()
    x = np.full((12, 12), 0.5, dtype=np.float32)
    x[6, 6] = 10.0  # lone outlier: the median stage kills it
    out = den.denoise(x, sigma=0.0)
    assert out.max() <= 0.6


def test_vjp_directional_derivative_float32():
    den = MedianGaussianDenoiser()
    rng = np.random.default_rng(1)
    x = smooth_field(16, 2, amplitude=2.0)
    u = rng.standard_normal((16, 16)).astype(np.float32) * 0.5
    w = rng.standard_normal((16, 16)).astype(np.float32)
    eps = 1e-3
    lhs = float(
        np.vdot(
            (den.denoise(x + eps * u, 0.05).astype(np.float64)
             - den.denoise(x, 0.05).astype(np.float64)) / eps,
            w.astype(np.float64),
        )
    )
    rhs = float(np.vdot(u.astype(np.float64),
                        den.vjp(x, w, 0.05).astype(np.float64)))
    assert abs(lhs - rhs) / abs(rhs) <= 1e-2


def test_torchscript_loader(tmp_path):
    class Affine(torch.nn.Module):
        def forward(self, x):
            return x * 0.5 + 0.1

    path = str(tmp_path / "affine.pt")
    torch.jit.script(Affine()).save(path)
    den = TorchScriptDenoiser(path)
    x = smooth_field(8, 3)
    out = den.denoise(x, 0.0)
    assert np.abs(out - (0.5 * x + 0.1)).max() <= 1e-6
    u = np.ones((8, 8), dtype=np.float32)
    g = den.vjp(x, u, 0.0)
    assert np.abs(g - 0.5).max() <= 1e-6


def test_build_denoiser_dispatch(tmp_path):
    assert isinstance(build_denoiser("classical", None, "cpu"),
                      MedianGaussianDenoiser)
    with pytest.raises(ValueError):
        build_denoiser("torchscript", None, "cpu")
    with pytest.raises(ValueError):
        build_denoiser("quantum", None, "cpu")
