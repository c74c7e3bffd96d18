"""Denoisers served by the endpoint.

Inference runs in float32 (the wire format). VJPs come from reverse-mode
differentiation through the model, so any torch-expressible denoiser gets an
exact Jacobian-transpose product for free. The classical fallback (3x3
median followed by periodic Gaussian smoothing) needs no downloaded weights
and keeps protocol tests self-contained; arbitrary pretrained networks load
through the TorchScript path.
"""

from __future__ import annotations

import math

import numpy as np
import torch

__all__ = ["MedianGaussianDenoiser", "TorchScriptDenoiser", "build_denoiser"]

torch.set_num_threads(1)  # bitwise-reproducible replies


class _TorchDenoiser:
    """Common denoise/vjp plumbing over a torch callable."""

    supports_vjp = True

    def __init__(self, device: str = "cpu"):
        self.device = torch.device(device)

    def _forward(self, x: torch.Tensor, sigma: float) -> torch.Tensor:
        raise NotImplementedError

    @staticmethod
    def _tensor(arr: np.ndarray) -> torch.Tensor:
        # wire buffers are read-only views; torch needs a writable copy
        return torch.from_numpy(np.array(arr, dtype=np.float32, copy=True))

    def denoise(self, x: np.ndarray, sigma: float) -> np.ndarray:
        with torch.no_grad():
            out = self._forward(self._tensor(x).to(self.device), sigma)
        return out.cpu().numpy().astype(np.float32)

    def vjp(self, x: np.ndarray, u: np.ndarray, sigma: float) -> np.ndarray:
        t = self._tensor(x).to(self.device).requires_grad_(True)
        out = self._forward(t, sigma)
        cot = self._tensor(u).to(self.device)
        (grad,) = torch.autograd.grad(out, t, grad_outputs=cot)
        return grad.cpu().numpy().astype(np.float32)


class MedianGaussianDenoiser(_TorchDenoiser):
    """3x3 circular median, then periodic Gaussian smoothing.

    The Gaussian width tracks the requested noise level:
    std = max(10 * sigma, 0.5) pixels.
    """

    def _forward(self, x: torch.Tensor, sigma: float) -> torch.Tensor:
        h, w = x.shape
        padded = torch.nn.functional.pad(
            x.view(1, 1, h, w), (1, 1, 1, 1), mode="circular"
        )
        patches = padded.unfold(2, 3, 1).unfold(3, 3, 1).reshape(1, 1, h, w, 9)
        med = patches.median(dim=-1).values.view(h, w)

        std = max(10.0 * float(sigma), 0.5)
        di = torch.minimum(torch.arange(h), h - torch.arange(h)).to(x.dtype)
        dj = torch.minimum(torch.arange(w), w - torch.arange(w)).to(x.dtype)
        kernel = torch.exp(
            -(di[:, None] ** 2 + dj[None, :] ** 2) / (2.0 * std * std)
        )
        kernel = (kernel / kernel.sum()).to(x.device)
        spec = torch.fft.rfft2(kernel)
        return torch.fft.irfft2(torch.fft.rfft2(med) * spec, s=(h, w))


class TorchScriptDenoiser(_TorchDenoiser):
    """Pretrained network loaded from a TorchScript archive.

    The module is called as model(x[None, None], sigma) when it accepts two
    arguments, else model(x[None, None]); output must match the input grid.
    """

    def __init__(self, weights_path: str, device: str = "cpu"):
        super().__init__(device)
        self.model = torch.jit.load(weights_path, map_location=self.device)
        self.model.eval()
        self._wants_sigma = True

    def _forward(self, x: torch.Tensor, sigma: float) -> torch.Tensor:
        batched = x.view(1, 1, *x.shape)
        if self._wants_sigma:
            try:
                out = self.model(batched, torch.tensor(float(sigma)))
            except (RuntimeError, TypeError):
                self._wants_sigma = False
                out = self.model(batched)
        else:
            out = self.model(batched)
        if out.shape != batched.shape:
            raise RuntimeError(
                f"model returned shape {tuple(out.shape)} for input "
                f"{tuple(batched.shape)}"
            )
        return out.view(*x.shape)


def build_denoiser(model: str, weights: str | None, device: str):
    if model == "classical":
        return MedianGaussianDenoiser(device)
    if model == "torchscript":
        if not weights:
            raise ValueError("torchscript model requires --weights")
        return TorchScriptDenoiser(weights, device)
    raise ValueError(f"unknown model '{model}'")


def gaussian_reference(x: np.ndarray, med: np.ndarray, sigma: float) -> np.ndarray:
    """NumPy restatement of the smoothing stage, for tests."""
    h, w = x.shape
    std = max(10.0 * float(sigma), 0.5)
    di = np.minimum(np.arange(h), h - np.arange(h))
    dj = np.minimum(np.arange(w), w - np.arange(w))
    kernel = np.exp(-(di[:, None] ** 2 + dj[None, :] ** 2) / (2.0 * std * std))
    kernel /= kernel.sum()
    return np.fft.irfft2(np.fft.rfft2(med) * np.fft.rfft2(kernel), s=(h, w))
