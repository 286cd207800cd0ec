"""
Steepest descent over (z, p) with alternating phases: one fast phase moves the derivative samples z with the
surface parameters frozen, then `slow_inner_iters` slow phases move p with z frozen.
A slow step never moves a parameter by more than `p_max_move`. Only I <= tol_i counts as convergence.
"""
from __future__ import annotations

import math
import logging
from enum import Enum
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import *
from .config import DescentConfig, config_to_dict
from .problem import ProblemSpec
from .grid import TimeGrid, DerivativeGrid, Samples, as_values
from .functionals import FunctionalBreakdown, kink_nodes, residual_profile
from .gradients import FunctionalHandle, GradientBundle, functional_for


_log = logging.getLogger(__name__)

# Bounds of the adaptive trial step relative to the configured initial step
_STEP_GROWTH_CAP = 1e6


class Phase(str, Enum):
    init = "init"
    fast = "fast"
    slow = "slow"


class StopReason(str, Enum):
    tol_i = "tol_i"
    tol_grad = "tol_grad"
    max_outer_iters = "max_outer_iters"
    stalled = "stalled"
    nonfinite = "nonfinite"


@dataclass(kw_only=True, frozen=True)
class LineSearchResult:
    step: float
    value: FunctionalBreakdown
    evaluations: int
    # True when no step down to the floor passed the sufficient-decrease test
    stalled: bool


def line_search(
        handle: FunctionalHandle,
        z: Samples,
        p: Sequence[float] | np.ndarray,
        d_z: np.ndarray | None,
        d_p: np.ndarray | None,
        init_step: float,
        config: DescentConfig,
        current: FunctionalBreakdown | None = None,
        slope: float | None = None) -> LineSearchResult:
    """
    Backtracking search for the largest step t = init_step * backtrack^j with
    f(point + t d) <= f(point) + armijo * t * slope.
    An init_step already below the floor probes nothing and reports a stall.

    :param d_z: direction in z, None to keep z fixed.
    :param d_p: direction in p, None to keep p fixed.
    :param slope: directional derivative of the functional along d; computed from the gradient when omitted.
    :raises NonFiniteError: if the functional is not finite at the start point or at every probed step.
    """
    z = as_values(z)
    p = np.asarray(p, dtype=float)
    evaluations = 0
    if current is None:
        current = handle.value(z, p)
        evaluations += 1
    if slope is None:
        grad = handle.gradient(z, p)
        slope = 0.0
        if d_z is not None:
            slope += float(handle.grid.weights @ (grad.g_z * d_z).sum(axis=1))
        if d_p is not None:
            slope += float(grad.g_p @ d_p)

    if not slope < 0:
        return LineSearchResult(step=0.0, value=current, evaluations=evaluations, stalled=True)

    step = init_step
    trials = nonfinite = 0
    while step >= config.step_floor:
        trial_z = z + step * d_z if d_z is not None else z
        trial_p = p + step * d_p if d_p is not None else p
        evaluations += 1
        trials += 1
        try:
            trial = handle.value(trial_z, trial_p)
        except NonFiniteError:
            nonfinite += 1
        else:
            if trial.total <= current.total + config.armijo * step * slope:
                return LineSearchResult(step=step, value=trial, evaluations=evaluations, stalled=False)
        step *= config.backtrack

    if trials and nonfinite == trials:
        raise NonFiniteError("functional is not finite along the search ray", extra={"init_step": init_step})
    return LineSearchResult(step=0.0, value=current, evaluations=evaluations, stalled=True)


@dataclass(kw_only=True, frozen=True)
class IterationRecord:
    iteration: int
    phase: Phase
    phi: float
    chi: float
    omega: float | None
    total: float
    grad_norm: float
    step: float
    evaluations: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "iter": self.iteration, "phase": self.phase.value, "phi": self.phi, "chi": self.chi,
            "omega": self.omega, "total": self.total, "grad_norm": self.grad_norm, "step": self.step,
            "evaluations": self.evaluations
        }


@dataclass(kw_only=True, frozen=True, eq=False)
class SolveReport:
    iterations: list[IterationRecord]
    final_z: DerivativeGrid
    final_p: np.ndarray
    final: FunctionalBreakdown
    final_grad_norm: float
    kink_nodes: list[int]
    # grid node with the largest residual at the final point
    worst_node: int
    converged: bool
    reason: StopReason
    outer_iterations: int
    config: DescentConfig = field(default_factory=DescentConfig)

    def to_dict(self) -> dict[str, Any]:
        return {
            "converged": self.converged,
            "reason": self.reason.value,
            "outer_iterations": self.outer_iterations,
            "final": self.final.to_dict(),
            "final_grad_norm": self.final_grad_norm,
            "final_p": self.final_p.tolist(),
            "kink_nodes": self.kink_nodes,
            "worst_node": self.worst_node,
            "descent": config_to_dict(self.config),
            "iterations": [r.to_dict() for r in self.iterations]
        }

    def raise_for_status(self) -> None:
        if not self.converged:
            raise ConvergenceError(
                f"descent stopped with reason `{self.reason.value}` at total {self.final.total:.6g}",
                extra={"outer_iterations": self.outer_iterations})


class _TrialStep:
    """ Per-phase trial step that grows after accepted steps and shrinks after rejected ones. """
    def __init__(self, initial: float, backtrack: float):
        self.initial = initial
        self.current = initial
        self.backtrack = backtrack

    def update(self, accepted: float) -> None:
        if accepted > 0:
            nxt = accepted / self.backtrack
        else:
            nxt = self.current / 2
        self.current = min(max(nxt, self.initial / _STEP_GROWTH_CAP), self.initial * _STEP_GROWTH_CAP)


def solve(
        spec: ProblemSpec,
        grid: TimeGrid,
        z0: Samples | None = None,
        p0: Sequence[float] | np.ndarray | None = None,
        config: DescentConfig | None = None) -> SolveReport:
    """
    Minimize I (relay) or I12 (u1, u2) from (z0, p0). z0 defaults to the zero grid, p0 to the problem's
    initial parameters, config to the problem's descent settings.
    """
    config = config or spec.descent
    handle = functional_for(spec, grid)
    z = np.zeros((grid.nodes, spec.n)) if z0 is None else np.array(as_values(z0), dtype=float)
    p = np.array(spec.initial_params if p0 is None else p0, dtype=float)
    spec.surface.check_params(p)

    z_trial = _TrialStep(config.z_step_init, config.backtrack)
    p_trial = _TrialStep(config.p_step, config.backtrack)

    current = handle.value(z, p)
    grad = handle.gradient(z, p)
    records = [_record(0, Phase.init, current, grad, 0.0, 1)]
    reason = StopReason.max_outer_iters
    outer = 0

    _log.info("Descent started", extra={"functional": handle.name, "total": current.total, "nodes": grid.nodes})
    while True:
        if current.total <= config.tol_i:
            reason = StopReason.tol_i
            break
        if grad.norm <= config.tol_grad:
            reason = StopReason.tol_grad
            break
        if outer >= config.max_outer_iters:
            reason = StopReason.max_outer_iters
            break
        outer += 1

        try:
            # fast phase: z moves, p is untouched
            ls = line_search(handle, z, p, -grad.g_z, None, z_trial.current, config,
                             current=current, slope=-grad.z_norm_sq(grid))
            z_trial.update(ls.step)
            moved = not ls.stalled
            if moved:
                z = z - ls.step * grad.g_z
                current = ls.value
                grad = handle.gradient(z, p)
            records.append(_record(outer, Phase.fast, current, grad, ls.step, ls.evaluations + int(moved)))
            _log.debug("Fast phase", extra={"iter": outer, "total": current.total, "step": ls.step})

            # slow phases: p moves, z is untouched
            for _ in range(config.slow_inner_iters if spec.param_dim else 0):
                init_step = _bounded_step(p_trial.current, grad.g_p, config)
                ls = line_search(handle, z, p, None, -grad.g_p, init_step, config,
                                 current=current, slope=-grad.p_norm_sq())
                p_trial.update(ls.step)
                if not ls.stalled:
                    moved = True
                    p = p - ls.step * grad.g_p
                    current = ls.value
                    grad = handle.gradient(z, p)
                records.append(_record(outer, Phase.slow, current, grad, ls.step, ls.evaluations + int(not ls.stalled)))
                _log.debug("Slow phase", extra={"iter": outer, "total": current.total, "step": ls.step})
                if ls.stalled:
                    break
        except NonFiniteError as e:
            _log.error("Descent hit a non-finite value", extra={"iter": outer, "error": str(e)})
            reason = StopReason.nonfinite
            break

        _log.info("Descent cycle", extra={
            "iter": outer, "total": current.total, "grad_norm": grad.norm, "p": np.round(p, 8).tolist()})
        if not moved:
            _log.warning("Line search stalled in every phase", extra={"iter": outer, "total": current.total})
            reason = StopReason.stalled
            break

    kinks = kink_nodes(spec, grid, z)
    worst = residual_profile(spec, grid, z, p).worst_node()
    # a stationary point with I > 0 is not a solution
    converged = reason is StopReason.tol_i
    _log.info("Descent finished", extra={
        "reason": reason.value, "converged": converged, "iterations": outer, "total": current.total,
        "worst_node": worst})
    return SolveReport(
        iterations=records,
        final_z=DerivativeGrid(grid=grid, values=z),
        final_p=p,
        final=current,
        final_grad_norm=grad.norm,
        kink_nodes=kinks,
        worst_node=worst,
        converged=converged,
        reason=reason,
        outer_iterations=outer,
        config=config)


def _bounded_step(step: float, g_p: np.ndarray, config: DescentConfig) -> float:
    """ Shrink a slow trial step so that no parameter moves by more than p_max_move. """
    largest = float(np.max(np.abs(g_p))) if g_p.size else 0.0
    if config.p_max_move is None or largest * step <= config.p_max_move:
        return step
    return config.p_max_move / largest


def _record(
        iteration: int, phase: Phase, value: FunctionalBreakdown, grad: GradientBundle,
        step: float, evaluations: int) -> IterationRecord:
    if not math.isfinite(value.total):
        raise NonFiniteError("functional is not finite", extra={"iter": iteration})
    return IterationRecord(
        iteration=iteration, phase=phase, phi=value.phi, chi=value.chi, omega=value.omega, total=value.total,
        grad_norm=grad.norm, step=step, evaluations=evaluations)
