"""
Closed-loop verification of a solution.

Relay problems are integrated on the switching surface: s(x, p) = 0 is solved for x_1..x_m and the remaining
coordinates follow x' = A x. Problems with a smooth control law integrate the full loop x' = A x + B u(x, p).
"""
from __future__ import annotations

import math
import logging
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import *
from .config import IntegratorMethod, VerifyConfig, config_to_dict
from .problem import ProblemSpec, ControlKind, surface_eval
from .controls import control_nodes
from .inclusion import h_nodes
from .grid import TimeGrid, StateGrid, Samples, as_values


_log = logging.getLogger(__name__)

# Largest acceptable condition number of the leading surface block
_REDUCTION_COND_LIMIT = 1e12

Rhs = Callable[[float, np.ndarray], np.ndarray]


def rk4_fixed(rhs: Rhs, x0: Sequence[float] | np.ndarray, T: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Classical fourth-order Runge-Kutta on [0, T]. The step is shrunk to T / ceil(T / h) so the last step lands on T.

    :return: (times, states) including both ends.
    :raises StiffnessError: if the state stops being finite.
    """
    if not (T > 0 and h > 0):
        raise ValueError(f"T and h must be positive, got T={T}, h={h}")
    steps = max(1, math.ceil(T / h - 1e-9))
    h = T / steps
    x = np.array(x0, dtype=float)
    states = np.empty((steps + 1, x.shape[0]))
    states[0] = x
    for k in range(steps):
        t = k * h
        k1 = rhs(t, x)
        k2 = rhs(t + h / 2, x + h / 2 * k1)
        k3 = rhs(t + h / 2, x + h / 2 * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise StiffnessError(
                "fixed-step integration diverged, reduce the step", extra={"t": t + h, "h": h})
        states[k + 1] = x
    return np.arange(steps + 1) * h, states


@dataclass(kw_only=True, frozen=True, eq=False)
class _SurfaceReduction:
    """ x_lead = M x_rest + v from s(x, p) = 0 with the leading m x m block inverted. """
    m: int
    M: np.ndarray
    v: np.ndarray

    def full(self, x_rest: np.ndarray) -> np.ndarray:
        """ Full states from reduced ones; x_rest is (n - m,) or (N, n - m). """
        x_lead = x_rest @ self.M.T + self.v
        return np.concatenate([x_lead, x_rest], axis=-1)


def _reduce_surface(spec: ProblemSpec, p: np.ndarray) -> _SurfaceReduction:
    W = spec.surface.weights(p)
    beta = spec.surface.offsets_at(p)
    lead, rest = W[:, :spec.m], W[:, spec.m:]
    cond = np.linalg.cond(lead)
    if not cond < _REDUCTION_COND_LIMIT:
        raise SurfaceReductionError(
            "s(x, p) = 0 cannot be solved for the controlled coordinates: the leading block is singular",
            extra={"cond": float(cond), "p": p.tolist()})
    return _SurfaceReduction(m=spec.m, M=-np.linalg.solve(lead, rest), v=np.linalg.solve(lead, beta))


def _closed_loop_rhs(spec: ProblemSpec, p: np.ndarray) -> Rhs:
    def rhs(_t: float, x: np.ndarray) -> np.ndarray:
        s = surface_eval(spec.surface, x[None, :], p)
        dx = spec.A @ x
        dx[:spec.m] += control_nodes(spec, x[None, :], s).value[0]
        return dx
    return rhs


def _integrate(rhs: Rhs, y0: np.ndarray, grid: TimeGrid, config: VerifyConfig) -> np.ndarray:
    """ States (N, len(y0)) at the grid times. """
    T = grid.horizon
    if y0.shape[0] == 0:
        return np.zeros((grid.nodes, 0))

    if config.method is IntegratorMethod.rk45:
        result = solve_ivp(rhs, (0.0, T), y0, method="RK45", rtol=config.rtol, atol=config.atol, dense_output=True)
        if not result.success:
            _log.error("Closed-loop integration failed", extra={"method": "rk45", "message": result.message})
            raise StiffnessError(f"RK45 integration failed: {result.message}", extra={"t": float(result.t[-1])})
        states = result.sol(grid.times).T
        if not np.all(np.isfinite(states)):
            raise StiffnessError("RK45 integration produced non-finite states")
        return states

    h = config.h if config.h is not None else 1e-4 * T
    # substeps per grid interval so the RK4 nodes include every grid node
    substeps = max(1, math.ceil(grid.dt / h - 1e-9))
    try:
        _, states = rk4_fixed(rhs, y0, T, grid.dt / substeps)
    except StiffnessError:
        _log.error("Closed-loop integration failed", extra={"method": "rk4", "h": grid.dt / substeps})
        raise
    return states[::substeps]


def integrate_closed_loop(
        spec: ProblemSpec, grid: TimeGrid, p: Sequence[float] | np.ndarray,
        config: VerifyConfig | None = None, x0: Sequence[float] | np.ndarray | None = None) -> StateGrid:
    """
    Integrate the closed loop with parameters p and sample it on `grid`.

    :raises SurfaceReductionError: relay problems whose surface cannot be solved for x_1..x_m.
    :raises StiffnessError: integrator failure or divergence.
    """
    config = config or spec.verify
    p = spec.surface.check_params(p)
    x0 = np.array(spec.x0 if x0 is None else x0, dtype=float)

    if spec.control_kind is ControlKind.relay:
        reduction = _reduce_surface(spec, p)
        A_rest = spec.A[spec.m:]

        def rhs(_t: float, x_rest: np.ndarray) -> np.ndarray:
            return A_rest @ reduction.full(x_rest)

        rest = _integrate(rhs, x0[spec.m:], grid, config)
        states = reduction.full(rest)
    else:
        states = _integrate(_closed_loop_rhs(spec, p), x0, grid, config)
    return StateGrid(grid=grid, values=states)


def forward_difference(grid: TimeGrid, x: Samples) -> np.ndarray:
    """ z[k] = (x[k+1] - x[k]) / dt, the last node copies its left neighbour. """
    x = as_values(x)
    z = np.empty_like(x)
    z[:-1] = np.diff(x, axis=0) / grid.dt
    z[-1] = z[-2]
    return z


@dataclass(kw_only=True, frozen=True)
class InclusionResidual:
    max_inclusion_residual: float
    # None when the problem has a smooth control law
    max_surface_residual: float | None
    worst_node: int


def inclusion_residual(
        spec: ProblemSpec, grid: TimeGrid, x: Samples, p: Sequence[float] | np.ndarray) -> InclusionResidual:
    """
    Scan a sampled trajectory: per node the sum over channels of h_i (relay) or |z_i - A_i x - u_i|,
    with z from forward differences.
    """
    x = as_values(x)
    p = spec.surface.check_params(p)
    z = forward_difference(grid, x)
    s = surface_eval(spec.surface, x, p)
    if spec.control_kind is ControlKind.relay:
        h, _ = h_nodes(spec, x, z)
        per_node = h.sum(axis=1)
        surface_residual = float(np.abs(s).max(initial=0.0))
    else:
        r = z - x @ spec.A.T
        r[:, :spec.m] -= control_nodes(spec, x, s).value
        per_node = np.abs(r).sum(axis=1)
        surface_residual = None
    return InclusionResidual(
        max_inclusion_residual=float(per_node.max()),
        max_surface_residual=surface_residual,
        worst_node=int(np.argmax(per_node)))


@dataclass(kw_only=True, frozen=True, eq=False)
class VerifyReport:
    endpoint_values: dict[int, float]
    endpoint_errors: dict[int, float]
    max_inclusion_residual: float
    max_surface_residual: float | None
    integrator: dict[str, Any]
    trajectory_deviation: float | None
    passed: bool
    state: StateGrid

    @property
    def max_endpoint_error(self) -> float:
        return max(self.endpoint_errors.values(), default=0.0)

    def to_dict(self) -> dict[str, Any]:
        """ Endpoint keys are the 1-based coordinate indices used in problem files. """
        return {
            "passed": self.passed,
            "endpoint_values": {str(j + 1): v for j, v in self.endpoint_values.items()},
            "endpoint_errors": {str(j + 1): v for j, v in self.endpoint_errors.items()},
            "max_endpoint_error": self.max_endpoint_error,
            "max_inclusion_residual": self.max_inclusion_residual,
            "max_surface_residual": self.max_surface_residual,
            "trajectory_deviation": self.trajectory_deviation,
            "integrator": self.integrator
        }

    def raise_for_status(self) -> None:
        if not self.passed:
            raise VerificationError(
                "closed-loop verification exceeded its thresholds",
                extra={"max_endpoint_error": self.max_endpoint_error,
                       "max_inclusion_residual": self.max_inclusion_residual})


def verify_solution(
        spec: ProblemSpec, grid: TimeGrid, p: Sequence[float] | np.ndarray,
        solver_state: Samples | None = None, config: VerifyConfig | None = None) -> VerifyReport:
    config = config or spec.verify
    p = spec.surface.check_params(p)
    state = integrate_closed_loop(spec, grid, p, config)
    scan = inclusion_residual(spec, grid, state, p)

    final = state.final
    values = {j: float(final[j]) for j in sorted(spec.endpoint)}
    errors = {j: abs(values[j] - target) for j, target in sorted(spec.endpoint.items())}

    deviation = None
    if solver_state is not None:
        solver_x = as_values(solver_state)
        if solver_x.shape != state.values.shape:
            raise DimensionError(f"solver trajectory has shape {solver_x.shape}, expected {state.values.shape}")
        idx = spec.endpoint_indices if spec.endpoint else np.arange(spec.n)
        deviation = float(np.abs(solver_x[:, idx] - state.values[:, idx]).max())

    integrator = config_to_dict(config)
    if config.method is IntegratorMethod.rk4:
        integrator["h"] = config.h if config.h is not None else 1e-4 * grid.horizon

    passed = max(errors.values(), default=0.0) <= config.endpoint_tol
    if config.inclusion_tol is not None:
        passed = passed and scan.max_inclusion_residual <= config.inclusion_tol

    report = VerifyReport(
        endpoint_values=values,
        endpoint_errors=errors,
        max_inclusion_residual=scan.max_inclusion_residual,
        max_surface_residual=scan.max_surface_residual,
        integrator=integrator,
        trajectory_deviation=deviation,
        passed=passed,
        state=state)
    _log.info("Verification finished", extra={
        "passed": passed, "max_endpoint_error": report.max_endpoint_error,
        "max_inclusion_residual": scan.max_inclusion_residual})
    return report
