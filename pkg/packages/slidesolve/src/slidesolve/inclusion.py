"""
Pointwise kernel of the inclusion x_i' in F_i(x).

For a controlled channel (i < m) the set F_i(x) is the interval A_i x + [-a_i, a_i] |x|_1 with a_i the upper gain;
for an uncontrolled channel it is the single point A_i x. Everything below is derived from the support function
c(F_i(x), psi) = psi A_i x + a_i |x|_1 |psi| over psi in S_1 = {-1, +1}.

Channel indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import *
from .problem import ProblemSpec


# psi* used where h_i = 0 and the maximizer over S_1 is not unique
PSI_0 = 1.0
S_1 = (-1.0, 1.0)


@dataclass(kw_only=True, frozen=True)
class ChannelKind:
    index: int
    controlled: bool


def channel(spec: ProblemSpec, i: int) -> ChannelKind:
    if not 0 <= i < spec.n:
        raise DimensionError(f"channel index {i} is outside 0..{spec.n - 1}")
    return ChannelKind(index=i, controlled=i < spec.m)


def _radius(spec: ProblemSpec, ch: ChannelKind, x: np.ndarray) -> float:
    return float(spec.gain_upper[ch.index] * np.abs(x).sum()) if ch.controlled else 0.0


def support_value(spec: ProblemSpec, i: int, x: np.ndarray, psi: float) -> float:
    ch = channel(spec, i)
    x = np.asarray(x, dtype=float)
    center = float(spec.A[i] @ x)
    if ch.controlled:
        return psi * center + _radius(spec, ch, x) * abs(psi)
    return psi * center


def _ell(spec: ProblemSpec, i: int, x: np.ndarray, z_i: float, psi: float) -> float:
    return z_i * psi - support_value(spec, i, x, psi)


def h_value(spec: ProblemSpec, i: int, x: np.ndarray, z_i: float) -> float:
    """
    Distance from z_i to F_i(x): max(0, |z_i - A_i x| - a_i |x|_1) for controlled channels and |z_i - A_i x| otherwise.
    Evaluated as the maximum of the two candidates psi = -1, +1, so it agrees bit for bit with a direct search over S_1.
    """
    channel(spec, i)
    return max(0.0, *(_ell(spec, i, x, z_i, psi) for psi in S_1))


def psi_star(spec: ProblemSpec, i: int, x: np.ndarray, z_i: float) -> float:
    """ The unique maximizer sign(z_i - A_i x) of ell_i over S_1 when h_i > 0, PSI_0 otherwise. """
    channel(spec, i)
    lm, lp = (_ell(spec, i, x, z_i, psi) for psi in S_1)
    if max(lm, lp) <= 0.0:
        return PSI_0
    return 1.0 if lp > lm else -1.0


@dataclass(kw_only=True, frozen=True)
class SuperdiffInterval:
    """
    Superdifferential of h_i at (x, z) as a box: coordinate j of the x-part ranges over [lower[j], upper[j]],
    the z_i-slot coefficient is psi*. `active` is False when h_i = 0, in which case the box describes the
    psi_0 branch ell_i(psi_0, .) of the maximum.
    """
    lower: np.ndarray
    upper: np.ndarray
    z_coeff: float
    active: bool

    @property
    def degenerate(self) -> np.ndarray:
        return self.lower == self.upper

    def min_pairing(self, d_x: np.ndarray, d_z: float) -> float:
        """ min over w in the set of <w, (d_x, d_z)>. """
        d_x = np.asarray(d_x, dtype=float)
        return float(self.z_coeff * d_z + np.minimum(self.lower * d_x, self.upper * d_x).sum())


def superdifferential_h(spec: ProblemSpec, i: int, x: np.ndarray, z_i: float) -> SuperdiffInterval:
    ch = channel(spec, i)
    x = np.asarray(x, dtype=float)
    psi = psi_star(spec, i, x, z_i)
    smooth = -psi * spec.A[i]
    if not ch.controlled:
        return SuperdiffInterval(lower=smooth.copy(), upper=smooth.copy(), z_coeff=psi, active=h_value(spec, i, x, z_i) > 0)

    # superdifferential of -a_i |x_j| |psi*|
    scale = spec.gain_upper[i] * abs(psi)
    kink = -scale * np.sign(x)
    lower = np.where(x == 0, -scale, kink)
    upper = np.where(x == 0, scale, kink)
    return SuperdiffInterval(
        lower=smooth + lower, upper=smooth + upper, z_coeff=psi, active=h_value(spec, i, x, z_i) > 0)


def h_directional_derivative(
        spec: ProblemSpec, i: int, x: np.ndarray, z_i: float, d_x: np.ndarray, d_z: float) -> float:
    """
    One-sided derivative of h_i at (x, z_i) in the direction (d_x, d_z), exact at kinks x_j = 0 and on the
    boundary h_i = 0.
    """
    ch = channel(spec, i)
    x = np.asarray(x, dtype=float)
    d_x = np.asarray(d_x, dtype=float)
    h = h_value(spec, i, x, z_i)
    # derivative of |x_j| along d_x_j, one-sided at zeros
    abs_rate = np.where(x == 0, np.abs(d_x), np.sign(x) * d_x).sum()

    rates = []
    for psi in S_1:
        if _ell(spec, i, x, z_i, psi) != h:
            continue
        rate = psi * (d_z - float(spec.A[i] @ d_x))
        if ch.controlled:
            rate -= spec.gain_upper[i] * abs(psi) * abs_rate
        rates.append(rate)
    if not rates:
        return 0.0
    return max(rates) if h > 0 else max(0.0, *rates)


def h_nodes(spec: ProblemSpec, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Node-vectorized h and psi*.

    :param x: states, shape (N, n).
    :param z: derivative samples, shape (N, n).
    :return: (h, psi) both of shape (N, n).
    """
    if x.shape != z.shape or x.shape[-1] != spec.n:
        raise DimensionError(f"expected matching (N, {spec.n}) arrays, got {x.shape} and {z.shape}")
    center = x @ spec.A.T
    radius = np.zeros_like(x)
    radius[:, :spec.m] = np.abs(x).sum(axis=1, keepdims=True) * spec.gain_upper
    lp = z - (center + radius)
    lm = -z - (-center + radius)
    h = np.maximum(0.0, np.maximum(lp, lm))
    psi = np.where(h > 0, np.where(lp > lm, 1.0, -1.0), PSI_0)
    return h, psi
