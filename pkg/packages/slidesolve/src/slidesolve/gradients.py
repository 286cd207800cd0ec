"""
Gradients of the discretized functionals.

Each gradient is the exact derivative of the discrete functional (trapezoid state reconstruction and quadrature),
rescaled by the quadrature weights so that g_z[k] samples an L2 gradient. At interior nodes the propagated term is
a tail integral over [t_k, T]; `cumulative_adjoint` supplies its exact discrete form.
"""
from __future__ import annotations

import math
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import *
from .problem import ProblemSpec, ControlKind, surface_eval, surface_jacobians
from .inclusion import h_nodes
from .controls import control_nodes
from .grid import TimeGrid, Samples, as_values, build_state, quadrature, cumulative_adjoint
from .functionals import FunctionalBreakdown, endpoint_residual, closed_loop_residual, eval_I, eval_I12


_log = logging.getLogger(__name__)


@dataclass(kw_only=True, frozen=True, eq=False)
class GradientBundle:
    g_z: np.ndarray
    g_p: np.ndarray
    norm: float

    @classmethod
    def from_parts(cls, grid: TimeGrid, g_z: np.ndarray, g_p: np.ndarray) -> GradientBundle:
        """ norm = sqrt(integral of |g_z|^2 + |g_p|^2). """
        z_sq = quadrature(grid, (g_z ** 2).sum(axis=1))
        norm = math.sqrt(z_sq + float((g_p ** 2).sum()))
        if not math.isfinite(norm):
            raise NonFiniteError("gradient is not finite")
        return cls(g_z=g_z, g_p=g_p, norm=norm)

    def z_norm_sq(self, grid: TimeGrid) -> float:
        return quadrature(grid, (self.g_z ** 2).sum(axis=1))

    def p_norm_sq(self) -> float:
        return float((self.g_p ** 2).sum())


def _tail(grid: TimeGrid, G: np.ndarray) -> np.ndarray:
    """ Per-weight adjoint of state reconstruction applied to G (N, n). """
    w = grid.weights[:, None]
    return cumulative_adjoint(grid, w * G) / w


def _endpoint_term(spec: ProblemSpec, grid: TimeGrid, z: np.ndarray) -> np.ndarray:
    term = np.zeros(spec.n)
    idx = spec.endpoint_indices
    if idx.size:
        term[idx] = endpoint_residual(spec, grid, z)
    return term


def _prepare(spec: ProblemSpec, grid: TimeGrid, z: Samples, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = as_values(z)
    if z.ndim != 2 or z.shape != (grid.nodes, spec.n):
        raise DimensionError(f"derivative samples must have shape ({grid.nodes}, {spec.n}), got {z.shape}")
    p = spec.surface.check_params(p)
    return z, build_state(grid, z, spec.x0).values, p


def grad_I(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> GradientBundle:
    z, x, p = _prepare(spec, grid, z, p)
    h, psi = h_nodes(spec, x, z)
    hpsi = h * psi

    # sum_i h_i grad_x h_i, with grad_x h_i = -psi_i A_i - a_i |psi_i| sign(x) on controlled channels
    kink_weight = (h[:, :spec.m] * np.abs(psi[:, :spec.m]) * spec.gain_upper).sum(axis=1)
    G = -hpsi @ spec.A - kink_weight[:, None] * np.sign(x)

    s = surface_eval(spec.surface, x, p)
    ds_dx, ds_dp = surface_jacobians(spec.surface, x, p)
    G += s @ ds_dx

    g_z = hpsi + _endpoint_term(spec, grid, z) + _tail(grid, G)
    g_p = quadrature(grid, np.einsum("ki,kip->kp", s, ds_dp)) if spec.param_dim else np.zeros(0)
    return GradientBundle.from_parts(grid, g_z, np.asarray(g_p, dtype=float))


def grad_I12(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> GradientBundle:
    z, x, p = _prepare(spec, grid, z, p)
    r = closed_loop_residual(spec, grid, z, p)
    s = surface_eval(spec.surface, x, p)
    ds_dx, ds_dp = surface_jacobians(spec.surface, x, p)
    ctrl = control_nodes(spec, x, s)
    rc = r[:, :spec.m]

    G = -r @ spec.A - np.einsum("ki,kij->kj", rc, ctrl.total_dx(ds_dx))
    g_z = r + _endpoint_term(spec, grid, z) + _tail(grid, G)
    if spec.param_dim:
        g_p = -quadrature(grid, np.einsum("ki,kip->kp", rc * ctrl.d_s, ds_dp))
    else:
        g_p = np.zeros(0)
    return GradientBundle.from_parts(grid, g_z, np.asarray(g_p, dtype=float))


@dataclass(kw_only=True, frozen=True)
class FunctionalHandle:
    """ A discretized functional on a fixed grid, with its value and (optionally) its analytic gradient. """
    name: str
    grid: TimeGrid
    evaluate: Callable[[np.ndarray, np.ndarray], FunctionalBreakdown]
    differentiate: Callable[[np.ndarray, np.ndarray], GradientBundle] | None = None

    def value(self, z: Samples, p: Sequence[float] | np.ndarray) -> FunctionalBreakdown:
        return self.evaluate(as_values(z), np.asarray(p, dtype=float))

    def total(self, z: Samples, p: Sequence[float] | np.ndarray) -> float:
        return self.value(z, p).total

    def gradient(self, z: Samples, p: Sequence[float] | np.ndarray) -> GradientBundle:
        if self.differentiate is None:
            raise ControlKindError(f"functional `{self.name}` has no analytic gradient")
        return self.differentiate(as_values(z), np.asarray(p, dtype=float))


def functional_for(spec: ProblemSpec, grid: TimeGrid) -> FunctionalHandle:
    """ I for relay problems, I12 for the smooth control laws. """
    if spec.control_kind is ControlKind.relay:
        return FunctionalHandle(
            name="I", grid=grid,
            evaluate=lambda z, p: eval_I(spec, grid, z, p),
            differentiate=lambda z, p: grad_I(spec, grid, z, p))
    return FunctionalHandle(
        name="I12", grid=grid,
        evaluate=lambda z, p: eval_I12(spec, grid, z, p),
        differentiate=lambda z, p: grad_I12(spec, grid, z, p))


def fd_gradient(
        handle: FunctionalHandle, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray,
        step: float = 1e-6) -> GradientBundle:
    """
    Central differences of `handle` in every z[k, i] (divided by w_k) and every parameter.
    The step is scaled by max(1, |v|) for each perturbed value v.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    z = np.array(as_values(z), dtype=float)
    p = np.array(p, dtype=float)

    def central(arr: np.ndarray, index: tuple) -> float:
        orig = arr[index]
        dv = step * max(1.0, abs(orig))
        arr[index] = orig + dv
        plus = handle.total(z, p)
        arr[index] = orig - dv
        minus = handle.total(z, p)
        arr[index] = orig
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise NonFiniteError("functional is not finite along a finite-difference probe", extra={"index": index})
        return (plus - minus) / (2 * dv)

    g_z = np.zeros_like(z)
    for k in range(z.shape[0]):
        for i in range(z.shape[1]):
            g_z[k, i] = central(z, (k, i)) / grid.weights[k]
    g_p = np.array([central(p, (j,)) for j in range(p.shape[0])], dtype=float)
    return GradientBundle.from_parts(grid, g_z, g_p)


def compare_bundles(analytic: GradientBundle, numeric: GradientBundle, floor: float = 1e-12) -> dict[str, float]:
    """
    Relative errors of `analytic` against `numeric`: per-entry maximum and median for the z-part
    (entries are compared against max(|numeric|, 1e-6 * max|numeric|, floor)), norm-wise for both parts.
    """
    def rel(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))

    scale = max(float(np.abs(numeric.g_z).max(initial=0.0)) * 1e-6, floor)
    entrywise = np.abs(analytic.g_z - numeric.g_z) / np.maximum(np.abs(numeric.g_z), scale)
    return {
        "max_rel_z": float(entrywise.max(initial=0.0)),
        "median_rel_z": float(np.median(entrywise)) if entrywise.size else 0.0,
        "rel_z": rel(analytic.g_z, numeric.g_z),
        "rel_p": rel(analytic.g_p, numeric.g_p) if numeric.g_p.size else 0.0
    }
