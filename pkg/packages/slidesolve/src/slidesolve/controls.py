"""
Control laws u_i(x, s_i) for the controlled channels i < m.

All three laws share the shape u_i = -alpha_i |x|_1 q(s_i):
  relay:  q(s) = sign(s)
  u1:     q(s) = s exp(-|s|)
  u2:     q(s) = k sqrt(s) for s >= delta, e s^3 + f s on [-delta, delta], -k sqrt(-s) for s <= -delta
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import *
from .problem import ProblemSpec, ControlKind


@dataclass(kw_only=True, frozen=True)
class CubicCoeffs:
    """ Coefficients of the inner branch e s^3 + f s of u2, C1-matched to k sqrt(s) at s = delta. """
    e: float
    f: float


def derive_cubic_coeffs(k: float, delta: float) -> CubicCoeffs:
    """
    Solve e delta^3 + f delta = k sqrt(delta) and 3 e delta^2 + f = k / (2 sqrt(delta)).
    Odd symmetry covers s = -delta.
    """
    if not k > 0:
        raise ProblemValidationError(f"k must be positive, got {k}", field_path="/u2_k")
    if not delta > 0:
        raise ProblemValidationError(f"delta must be positive, got {delta}", field_path="/u2_delta")
    return CubicCoeffs(e=-k / (4 * delta ** 2.5), f=5 * k / (4 * math.sqrt(delta)))


@dataclass(kw_only=True, frozen=True, eq=False)
class ControlPartials:
    """
    value: u_i; d_s: du_i/ds_i; d_x: du_i/dx with s_i held fixed (the |x|_1 factor only).
    """
    value: float
    d_s: float
    d_x: np.ndarray

    def total_dx(self, ds_dx: np.ndarray) -> np.ndarray:
        """ du_i/dx once s_i = s_i(x) is substituted. """
        return self.d_x + self.d_s * np.asarray(ds_dx, dtype=float)


def _controlled(spec: ProblemSpec, i: int) -> None:
    if not 0 <= i < spec.m:
        raise DimensionError(f"control index {i} is outside 0..{spec.m - 1}")


def _q1(s):
    return s * np.exp(-np.abs(s))


def _q1_prime(s):
    return (1 - np.abs(s)) * np.exp(-np.abs(s))


def _q2(s, k: float, delta: float, cubic: CubicCoeffs):
    s = np.asarray(s, dtype=float)
    outer = np.sign(s) * k * np.sqrt(np.abs(s))
    return np.where(np.abs(s) <= delta, cubic.e * s ** 3 + cubic.f * s, outer)


def _q2_prime(s, k: float, delta: float, cubic: CubicCoeffs):
    s = np.asarray(s, dtype=float)
    # |s| > delta on the outer branch; the clip only keeps the discarded lanes finite
    outer = k / (2 * np.sqrt(np.maximum(np.abs(s), delta)))
    return np.where(np.abs(s) <= delta, 3 * cubic.e * s ** 2 + cubic.f, outer)


def _shape(spec: ProblemSpec, s):
    """ (q(s), q'(s)) for the problem's smooth control kind. """
    if spec.control_kind is ControlKind.u1:
        return _q1(s), _q1_prime(s)
    if spec.control_kind is ControlKind.u2:
        cubic = derive_cubic_coeffs(spec.u2_k, spec.u2_delta)
        return _q2(s, spec.u2_k, spec.u2_delta, cubic), _q2_prime(s, spec.u2_k, spec.u2_delta, cubic)
    raise ControlKindError(f"control kind `{spec.control_kind.value}` has no smooth control law")


def relay_control(spec: ProblemSpec, i: int, x: np.ndarray, s_i: float) -> float:
    """ u_i = -alpha_i |x|_1 sign(s_i), with sign(0) = 0. """
    _controlled(spec, i)
    x = np.asarray(x, dtype=float)
    return float(-spec.alpha[i] * np.abs(x).sum() * np.sign(s_i))


def _partials(spec: ProblemSpec, i: int, x: np.ndarray, q: float, dq: float) -> ControlPartials:
    x = np.asarray(x, dtype=float)
    alpha = spec.alpha[i]
    norm1 = float(np.abs(x).sum())
    return ControlPartials(value=float(-alpha * norm1 * q), d_s=float(-alpha * norm1 * dq), d_x=-alpha * q * np.sign(x))


def u1_control(spec: ProblemSpec, i: int, x: np.ndarray, s_i: float) -> ControlPartials:
    """ u_i = -alpha_i |x|_1 s_i exp(-|s_i|); sign(s)(-s) = -|s| keeps the law smooth at s = 0. """
    _controlled(spec, i)
    return _partials(spec, i, x, float(_q1(s_i)), float(_q1_prime(s_i)))


def u2_control(spec: ProblemSpec, i: int, x: np.ndarray, s_i: float, cubic: CubicCoeffs | None = None) -> ControlPartials:
    _controlled(spec, i)
    k, delta = spec.u2_k, spec.u2_delta
    cubic = cubic or derive_cubic_coeffs(k, delta)
    return _partials(spec, i, x, float(_q2(s_i, k, delta, cubic)), float(_q2_prime(s_i, k, delta, cubic)))


def control_value_and_partials(spec: ProblemSpec, i: int, x: np.ndarray, s_i: float) -> ControlPartials:
    if spec.control_kind is ControlKind.u1:
        return u1_control(spec, i, x, s_i)
    if spec.control_kind is ControlKind.u2:
        return u2_control(spec, i, x, s_i)
    raise ControlKindError(
        f"control kind `{spec.control_kind.value}` has no smooth control law", extra={"channel": i})


@dataclass(kw_only=True, frozen=True, eq=False)
class ControlNodes:
    """ Node-vectorized controls: value and d_s of shape (N, m), d_x of shape (N, m, n) with s held fixed. """
    value: np.ndarray
    d_s: np.ndarray
    d_x: np.ndarray

    def total_dx(self, ds_dx: np.ndarray) -> np.ndarray:
        """ du/dx of shape (N, m, n) for the surface Jacobian ds_dx of shape (m, n). """
        return self.d_x + self.d_s[:, :, None] * ds_dx[None, :, :]


def control_nodes(spec: ProblemSpec, x: np.ndarray, s: np.ndarray) -> ControlNodes:
    """
    :param x: states (N, n).
    :param s: surface values (N, m).
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.ndim != 2 or s.shape != (x.shape[0], spec.m):
        raise DimensionError(f"expected s of shape ({x.shape[0]}, {spec.m}), got {s.shape}")
    q, dq = _shape(spec, s)
    scale = -spec.alpha * np.abs(x).sum(axis=1, keepdims=True)
    return ControlNodes(
        value=scale * q,
        d_s=scale * dq,
        d_x=(-spec.alpha * q)[:, :, None] * np.sign(x)[:, None, :])
