from __future__ import annotations

import math
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import *
from .problem import ProblemSpec, ControlKind, surface_eval
from .inclusion import h_nodes
from .controls import control_nodes
from .grid import TimeGrid, Samples, as_values, build_state, quadrature


_log = logging.getLogger(__name__)


@dataclass(kw_only=True, frozen=True)
class FunctionalBreakdown:
    phi: float
    chi: float
    # None for the closed-loop functional, which has no surface term
    omega: float | None
    total: float

    def to_dict(self) -> dict[str, float | None]:
        return {"phi": self.phi, "chi": self.chi, "omega": self.omega, "total": self.total}


def _states(spec: ProblemSpec, grid: TimeGrid, z: Samples) -> tuple[np.ndarray, np.ndarray]:
    z = as_values(z)
    if z.ndim != 2 or z.shape[1] != spec.n:
        raise DimensionError(f"derivative samples must have shape ({grid.nodes}, {spec.n}), got {z.shape}")
    return z, build_state(grid, z, spec.x0).values


def _finite(value: float, name: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteError(f"{name} is not finite", extra={name: value})
    return value


def endpoint_residual(spec: ProblemSpec, grid: TimeGrid, z: Samples) -> np.ndarray:
    """ x0_j + integral of z_j - target_j for every constrained index j, in sorted index order. """
    z = as_values(z)
    idx = spec.endpoint_indices
    if not idx.size:
        return np.zeros(0)
    return spec.x0[idx] + quadrature(grid, z[:, idx]) - spec.endpoint_targets


def eval_phi(spec: ProblemSpec, grid: TimeGrid, z: Samples) -> float:
    z, x = _states(spec, grid, z)
    h, _ = h_nodes(spec, x, z)
    return 0.5 * quadrature(grid, (h ** 2).sum(axis=1))


def eval_chi(spec: ProblemSpec, grid: TimeGrid, z: Samples) -> float:
    _states(spec, grid, z)
    resid = endpoint_residual(spec, grid, z)
    return 0.5 * float((resid ** 2).sum())


def eval_omega(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> float:
    _, x = _states(spec, grid, z)
    s = surface_eval(spec.surface, x, p)
    return 0.5 * quadrature(grid, (s ** 2).sum(axis=1))


def eval_I(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> FunctionalBreakdown:
    """ I = phi + chi + omega: zero exactly when z solves the inclusion, meets the endpoints and stays on s = 0. """
    phi = _finite(eval_phi(spec, grid, z), "phi")
    chi = _finite(eval_chi(spec, grid, z), "chi")
    omega = _finite(eval_omega(spec, grid, z, p), "omega")
    return FunctionalBreakdown(phi=phi, chi=chi, omega=omega, total=phi + chi + omega)


def closed_loop_residual(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> np.ndarray:
    """ Signed residuals z_i - A_i x - u_i (u_i = 0 for uncontrolled channels), shape (N, n). """
    if spec.control_kind is ControlKind.relay:
        raise ControlKindError("the closed-loop residual needs a smooth control law (u1 or u2)")
    z, x = _states(spec, grid, z)
    s = surface_eval(spec.surface, x, p)
    r = z - x @ spec.A.T
    r[:, :spec.m] -= control_nodes(spec, x, s).value
    return r


def eval_I12(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> FunctionalBreakdown:
    r = closed_loop_residual(spec, grid, z, p)
    phi = _finite(0.5 * quadrature(grid, (r ** 2).sum(axis=1)), "phi")
    chi = _finite(eval_chi(spec, grid, z), "chi")
    return FunctionalBreakdown(phi=phi, chi=chi, omega=None, total=phi + chi)


@dataclass(kw_only=True, frozen=True, eq=False)
class ResidualProfile:
    """ residual: h_i (relay) or signed z_i - A_i x - u_i (u1, u2) per node, shape (N, n); surface: s, shape (N, m). """
    residual: np.ndarray
    surface: np.ndarray

    def worst_node(self) -> int:
        return int(np.argmax(np.abs(self.residual).sum(axis=1)))


def residual_profile(spec: ProblemSpec, grid: TimeGrid, z: Samples, p: Sequence[float] | np.ndarray) -> ResidualProfile:
    z, x = _states(spec, grid, z)
    s = surface_eval(spec.surface, x, p)
    if spec.control_kind is ControlKind.relay:
        residual, _ = h_nodes(spec, x, z)
    else:
        residual = closed_loop_residual(spec, grid, z, p)
    return ResidualProfile(residual=residual, surface=s)


def kink_nodes(spec: ProblemSpec, grid: TimeGrid, z: Samples, atol: float = 1e-9) -> list[int]:
    """
    Nodes where the gradient formulas rely on a selector: some x_j(t_k) = 0 exactly, or x_j stays within
    `atol` of zero on two or more consecutive nodes (x_j does not vanish at isolated moments only).
    """
    _, x = _states(spec, grid, z)
    flagged = np.any(x == 0, axis=1)
    near = np.abs(x) <= atol
    # a node is in a run if it and a neighbour are both near zero in the same coordinate
    run = np.zeros_like(near)
    run[1:] |= near[1:] & near[:-1]
    run[:-1] |= near[:-1] & near[1:]
    flagged |= np.any(run, axis=1)
    nodes = np.flatnonzero(flagged).tolist()
    if nodes:
        _log.warning("State coordinates vanish on grid nodes", extra={"kink_nodes": len(nodes), "first": nodes[0]})
    return nodes
