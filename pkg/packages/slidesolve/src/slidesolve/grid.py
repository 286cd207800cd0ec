from __future__ import annotations

from functools import cached_property
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import *


@dataclass(kw_only=True, frozen=True)
class TimeGrid:
    """ Uniform grid t_k = k T / (N - 1), k = 0..N-1, with trapezoid weights. """
    nodes: int
    horizon: float

    def __post_init__(self):
        if self.nodes < 2:
            raise ProblemValidationError(f"a time grid needs at least 2 nodes, got {self.nodes}", field_path="/grid_nodes")
        if not self.horizon > 0:
            raise ProblemValidationError(f"T must be positive, got {self.horizon}", field_path="/T")

    @property
    def dt(self) -> float:
        return self.horizon / (self.nodes - 1)

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.nodes) * self.dt
        t.setflags(write=False)
        return t

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.nodes, self.dt)
        w[0] = w[-1] = self.dt / 2
        w.setflags(write=False)
        return w


@dataclass(kw_only=True, frozen=True, eq=False)
class DerivativeGrid:
    """ Samples z[k, i] of z(t) = x'(t) on a time grid. """
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != self.grid.nodes:
            raise DimensionError(f"derivative samples must have shape ({self.grid.nodes}, n), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("derivative samples must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: TimeGrid, n: int) -> DerivativeGrid:
        return cls(grid=grid, values=np.zeros((grid.nodes, n)))


@dataclass(kw_only=True, frozen=True, eq=False)
class StateGrid:
    """ Samples x[k, i] of the trajectory; x[0] = x0. """
    grid: TimeGrid
    values: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


Samples = Union[np.ndarray, DerivativeGrid, StateGrid]


def as_values(samples: Samples) -> np.ndarray:
    if isinstance(samples, (DerivativeGrid, StateGrid)):
        return samples.values
    return np.asarray(samples, dtype=float)


def _check_nodes(grid: TimeGrid, values: np.ndarray) -> None:
    if values.shape[0] != grid.nodes:
        raise DimensionError(f"expected {grid.nodes} samples, got {values.shape[0]}")


def quadrature(grid: TimeGrid, samples: Samples) -> np.ndarray | float:
    """ Trapezoid integral over [0, T] of per-node samples (N,) or (N, n). """
    values = as_values(samples)
    _check_nodes(grid, values)
    result = grid.weights @ values
    return float(result) if np.ndim(result) == 0 else result


def cumulative(grid: TimeGrid, samples: Samples) -> np.ndarray:
    """ head_k = trapezoid integral over [0, t_k]; head_0 = 0. """
    values = as_values(samples)
    _check_nodes(grid, values)
    return cumulative_trapezoid(values, dx=grid.dt, axis=0, initial=0)


def reverse_cumulative(grid: TimeGrid, samples: Samples) -> np.ndarray:
    """ tail_k = trapezoid integral over [t_k, T]; tail_{N-1} = 0 and head_k + tail_k = full integral. """
    values = as_values(samples)
    _check_nodes(grid, values)
    return cumulative_trapezoid(values[::-1], dx=grid.dt, axis=0, initial=0)[::-1]


def cumulative_adjoint(grid: TimeGrid, samples: Samples) -> np.ndarray:
    """
    Transpose of `cumulative`: result[l] = sum_k c[k, l] y[k] where head_k = sum_l c[k, l] y[l].

    Divided by the quadrature weight w_l this is the tail integral of y over [t_l, T] at interior nodes,
    and the exact discrete counterpart of it at the two end nodes.
    """
    y = as_values(samples)
    _check_nodes(grid, y)
    dt = grid.dt
    # strictly-after sums: after[l] = sum_{k > l} y[k]
    after = np.zeros_like(y)
    after[:-1] = np.cumsum(y[::-1], axis=0)[::-1][1:]
    result = dt * after + dt / 2 * y
    result[0] = dt / 2 * after[0]
    return result


def build_state(grid: TimeGrid, z: Samples, x0: np.ndarray) -> StateGrid:
    """ x(t_k) = x0 + integral of z over [0, t_k], so x[0] = x0 holds by construction. """
    values = as_values(z)
    x0 = np.asarray(x0, dtype=float)
    if values.ndim != 2 or values.shape[1] != x0.shape[0]:
        raise DimensionError(f"derivative samples {values.shape} do not match x0 of length {x0.shape[0]}")
    _check_nodes(grid, values)
    return StateGrid(grid=grid, values=x0 + cumulative(grid, values))
