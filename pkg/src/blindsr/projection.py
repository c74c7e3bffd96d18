"""Euclidean projection onto the capped simplex {0 <= z <= M, sum(z) = 1}.

The projection has the separable form z_i(tau) = clip(v_i - tau, 0, M) where
the scalar tau solves g(tau) = sum_i z_i(tau) - 1 = 0. g is continuous,
piecewise linear and non-increasing, so the root is found by secant steps
safeguarded with bisection on a bracket that always exists. The root is then
refined to the exact active-set solution so the flux constraint holds to
machine precision (downstream flux-preservation checks rely on it).

`project_oracle` solves the same root problem by plain bisection and exists
for cross-checking only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InfeasibleSpecError, SolverError
from .imaging import KernelGrid

__all__ = ["CappedSimplexSpec", "project_capped_simplex", "project_oracle"]

_G_TOL = 1e-12
_BRACKET_TOL = 1e-15


@dataclass(frozen=True)
class CappedSimplexSpec:
    """Feasible set for a kernel: entry cap M and unit total flux."""

    p_total: int
    cap: float
    target_sum: float = 1.0

    def __post_init__(self):
        if self.p_total < 1:
            raise InfeasibleSpecError(f"p_total must be positive, got {self.p_total}")
        if self.cap <= 0:
            raise InfeasibleSpecError(f"cap must be positive, got {self.cap}")
        if self.cap * self.p_total < self.target_sum:
            raise InfeasibleSpecError(
                f"cap {self.cap} with {self.p_total} entries cannot reach "
                f"sum {self.target_sum}: the set is empty"
            )

    @staticmethod
    def for_kernel(p: int, cap: float) -> "CappedSimplexSpec":
        return CappedSimplexSpec(p_total=p * p, cap=cap)


def _clip_shifted(v: np.ndarray, tau: float, cap: float) -> np.ndarray:
    return np.clip(v - tau, 0.0, cap)


def _gap(v: np.ndarray, tau: float, cap: float, target: float) -> float:
    return float(_clip_shifted(v, tau, cap).sum() - target)


def _solve_tau(v: np.ndarray, cap: float, target: float) -> float:
    """Root of g by secant iterations with a bisection safeguard."""
    lo = float(v.min()) - cap - 1.0
    hi = float(v.max()) + 1.0
    g_lo = _gap(v, lo, cap, target)
    g_hi = _gap(v, hi, cap, target)
    if g_lo < 0 or g_hi > 0:
        raise SolverError("capped-simplex bracket failed; this is a bug")

    t0, g0 = lo, g_lo
    t1, g1 = hi, g_hi
    for _ in range(200):
        if abs(g1) <= _G_TOL or (hi - lo) <= _BRACKET_TOL:
            return t1
        # secant candidate; fall back to the bracket midpoint when the
        # secant step degenerates (flat piece) or escapes the bracket
        if g1 != g0:
            t = t1 - g1 * (t1 - t0) / (g1 - g0)
        else:
            t = 0.5 * (lo + hi)
        if not (lo < t < hi):
            t = 0.5 * (lo + hi)
        g = _gap(v, t, cap, target)
        if g > 0:
            lo = t
        else:
            hi = t
        t0, g0 = t1, g1
        t1, g1 = t, g
    return t1


def _refine_active_set(v: np.ndarray, tau: float, cap: float, target: float) -> np.ndarray:
    """Exact solution on the active set identified by tau.

    On the correct linear piece, tau* = (sum of free v + #capped * M - 1)/#free;
    a couple of re-identification passes pin the piece down, after which the
    remaining flux residual (pure roundoff) is spread over the free entries.
    """
    for _ in range(len(v) + 2):
        shifted = v - tau
        capped = shifted >= cap
        free = (shifted > 0.0) & ~capped
        n_free = int(free.sum())
        if n_free == 0:
            break
        tau_exact = (float(v[free].sum()) + cap * int(capped.sum()) - target) / n_free
        if tau_exact == tau:
            break
        tau = tau_exact

    z = _clip_shifted(v, tau, cap)
    residual = target - float(z.sum())
    if residual != 0.0:
        free = (z > 0.0) & (z < cap)
        if free.any():
            z[free] += residual / int(free.sum())
    return z


def _project_values(v: np.ndarray, spec: CappedSimplexSpec) -> np.ndarray:
    if v.size != spec.p_total:
        raise InfeasibleSpecError(
            f"input has {v.size} entries, spec expects {spec.p_total}"
        )
    tau = _solve_tau(v, spec.cap, spec.target_sum)
    return _refine_active_set(v, tau, spec.cap, spec.target_sum)


GridOrArray = Union[KernelGrid, np.ndarray]


def _dispatch(theta: GridOrArray, spec: CappedSimplexSpec, values_fn) -> GridOrArray:
    if isinstance(theta, KernelGrid):
        flat = theta.data.ravel().copy()
        return KernelGrid(values_fn(flat, spec).reshape(theta.data.shape))
    flat = np.asarray(theta, dtype=np.float64).ravel().copy()
    return values_fn(flat, spec)


def project_capped_simplex(theta: GridOrArray, spec: CappedSimplexSpec) -> GridOrArray:
    """Euclidean projection onto the capped simplex.

    Accepts a KernelGrid or a flat array and returns a value of the same
    kind. Output satisfies 0 <= z <= M and |sum(z) - 1| <= 1e-12.
    """
    return _dispatch(theta, spec, _project_values)


def _project_values_bisect(v: np.ndarray, spec: CappedSimplexSpec) -> np.ndarray:
    if v.size != spec.p_total:
        raise InfeasibleSpecError(
            f"input has {v.size} entries, spec expects {spec.p_total}"
        )
    cap, target = spec.cap, spec.target_sum
    lo = float(v.min()) - cap - 1.0
    hi = float(v.max()) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _gap(v, mid, cap, target) > 0:
            lo = mid
        else:
            hi = mid
    z = _clip_shifted(v, 0.5 * (lo + hi), cap)
    residual = target - float(z.sum())
    free = (z > 0.0) & (z < cap)
    if residual != 0.0 and free.any():
        z[free] += residual / int(free.sum())
    return z


def project_oracle(theta: GridOrArray, spec: CappedSimplexSpec) -> GridOrArray:
    """Same projection via 200 plain bisection steps; test-side cross-check."""
    return _dispatch(theta, spec, _project_values_bisect)
