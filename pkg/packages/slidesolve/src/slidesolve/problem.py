from __future__ import annotations

import os
import json
import logging
from enum import Enum
from functools import cached_property
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, Union

import numpy as np
import yaml
from pydantic import ValidationError

from .common import normalize_dict_keys, json_pointer
from .config import DEFAULT_GRID_NODES, DescentConfig, VerifyConfig, config_to_dict
from .errors import *
from ._schema import ProblemFileModel, ParamRefModel


_log = logging.getLogger(__name__)


class ControlKind(str, Enum):
    relay = "relay"
    u1 = "u1"
    u2 = "u2"


@dataclass(kw_only=True, frozen=True)
class ParamRef:
    slot: int  # 0-based slot in the parameter vector


Coefficient = Union[float, ParamRef]


def _readonly(values: Any, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(kw_only=True, frozen=True)
class SurfaceFamily:
    """
    Affine switching surface s_i(x, p) = sum_j w_ij(p) x_j - beta_i(p).

    Every coefficient is either a constant or a reference to one slot of the parameter vector p.
    A slot may be referenced by several coefficients; every slot must be referenced at least once.
    """
    coeffs: tuple[tuple[Coefficient, ...], ...]
    offsets: tuple[Coefficient, ...]
    param_dim: int

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(tuple(row) for row in self.coeffs))
        object.__setattr__(self, "offsets", tuple(self.offsets))
        if len(self.offsets) != len(self.coeffs):
            raise DimensionError(
                f"surface has {len(self.coeffs)} rows but {len(self.offsets)} offsets", field_path="/surface/rows")
        widths = {len(row) for row in self.coeffs}
        if len(widths) > 1:
            raise DimensionError("surface rows have different lengths", field_path="/surface/rows")

        used: set[int] = set()
        for i, row in enumerate(self.coeffs):
            for j, c in enumerate(row):
                if isinstance(c, ParamRef):
                    self._check_slot(c, json_pointer(["surface", "rows", i, "coeffs", j]))
                    used.add(c.slot)
            if isinstance(self.offsets[i], ParamRef):
                self._check_slot(self.offsets[i], json_pointer(["surface", "rows", i, "offset"]))
                used.add(self.offsets[i].slot)
        missing = sorted(set(range(self.param_dim)) - used)
        if missing:
            raise ProblemValidationError(
                f"parameter slots {[k + 1 for k in missing]} are never referenced", field_path="/surface/params")

    def _check_slot(self, ref: ParamRef, path: str) -> None:
        if not 0 <= ref.slot < self.param_dim:
            raise ProblemValidationError(
                f"parameter slot {ref.slot + 1} is outside 1..{self.param_dim}", field_path=path)

    @property
    def m_rows(self) -> int:
        return len(self.coeffs)

    @property
    def n_cols(self) -> int:
        return len(self.coeffs[0]) if self.coeffs else 0

    @cached_property
    def _fixed_weights(self) -> np.ndarray:
        return _readonly([[0.0 if isinstance(c, ParamRef) else c for c in row] for row in self.coeffs])

    @cached_property
    def _fixed_offsets(self) -> np.ndarray:
        return _readonly([0.0 if isinstance(c, ParamRef) else c for c in self.offsets])

    @cached_property
    def weight_selector(self) -> np.ndarray:
        """ One-hot tensor sel[i, j, k] = 1 iff w_ij is parameter slot k. """
        sel = np.zeros((self.m_rows, self.n_cols, self.param_dim))
        for i, row in enumerate(self.coeffs):
            for j, c in enumerate(row):
                if isinstance(c, ParamRef):
                    sel[i, j, c.slot] = 1.0
        sel.setflags(write=False)
        return sel

    @cached_property
    def offset_selector(self) -> np.ndarray:
        """ One-hot matrix sel[i, k] = 1 iff beta_i is parameter slot k. """
        sel = np.zeros((self.m_rows, self.param_dim))
        for i, c in enumerate(self.offsets):
            if isinstance(c, ParamRef):
                sel[i, c.slot] = 1.0
        sel.setflags(write=False)
        return sel

    def check_params(self, p: Sequence[float] | np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.param_dim,):
            raise ParameterLengthError(
                f"surface expects {self.param_dim} parameters, got shape {p.shape}", extra={"shape": p.shape})
        return p

    def weights(self, p: Sequence[float] | np.ndarray) -> np.ndarray:
        """ The m x n matrix w(p), which is also ds/dx. """
        p = self.check_params(p)
        return self._fixed_weights + self.weight_selector @ p

    def offsets_at(self, p: Sequence[float] | np.ndarray) -> np.ndarray:
        p = self.check_params(p)
        return self._fixed_offsets + self.offset_selector @ p


def surface_eval(surface: SurfaceFamily, x: np.ndarray, p: Sequence[float] | np.ndarray) -> np.ndarray:
    """
    :param x: a single state (n,) or a stack of states (N, n).
    :return: s with shape (m,) or (N, m).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != surface.n_cols:
        raise DimensionError(f"surface expects states of length {surface.n_cols}, got {x.shape[-1]}")
    return x @ surface.weights(p).T - surface.offsets_at(p)


def surface_jacobians(
        surface: SurfaceFamily, x: np.ndarray, p: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    :return: (ds/dx with shape (m, n), ds/dp with shape (m, param_dim) or (N, m, param_dim) for stacked x).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != surface.n_cols:
        raise DimensionError(f"surface expects states of length {surface.n_cols}, got {x.shape[-1]}")
    ds_dx = surface.weights(p)
    ds_dp = np.einsum("ijk,...j->...ik", surface.weight_selector, x) - surface.offset_selector
    return ds_dx, ds_dp


@dataclass(kw_only=True, frozen=True, eq=False)
class ProblemSpec:
    """
    A full problem instance: x' = A x + B u on [0, T], B = diag[E_m, O_{n-m}], x(0) = x0,
    x_j(T) = target_j for the constrained indices, and the switching surface family.

    Endpoint indices are 0-based here; problem files use 1-based indices.
    """
    n: int
    m: int
    A: np.ndarray
    gain_upper: np.ndarray
    gain_lower: np.ndarray
    alpha: np.ndarray
    horizon: float
    x0: np.ndarray
    endpoint: Mapping[int, float]
    control_kind: ControlKind = field(default=ControlKind.relay)
    u2_delta: float = field(default=0.01)
    u2_k: float = field(default=1.0)
    surface: SurfaceFamily
    initial_params: np.ndarray
    grid_nodes: int = field(default=DEFAULT_GRID_NODES)
    descent: DescentConfig = field(default_factory=DescentConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def __post_init__(self):
        object.__setattr__(self, "control_kind", ControlKind(self.control_kind))
        for name in ("A", "gain_upper", "gain_lower", "alpha", "x0", "initial_params"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        object.__setattr__(self, "endpoint", {int(j): float(v) for j, v in dict(self.endpoint).items()})
        self._validate()

    def _validate(self) -> None:
        n, m = self.n, self.m
        if n < 1:
            raise DimensionError(f"n must be at least 1, got {n}", field_path="/n")
        if not 1 <= m <= n:
            raise DimensionError(f"m must satisfy 1 <= m <= n = {n}, got {m}", field_path="/m")
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be {n}x{n}, got shape {self.A.shape}", field_path="/A")
        if self.x0.shape != (n,):
            raise DimensionError(f"x0 must have length {n}, got {self.x0.shape}", field_path="/x0")
        for name in ("gain_upper", "gain_lower", "alpha"):
            values = getattr(self, name)
            if values.shape != (m,):
                raise DimensionError(f"{name} must have length m = {m}, got {values.shape}", field_path=f"/{name}")
            if not np.all(values > 0):
                raise ProblemValidationError(f"{name} must be strictly positive", field_path=f"/{name}")
        if np.any(self.gain_lower > self.gain_upper):
            raise ProblemValidationError("gain_lower must not exceed gain_upper", field_path="/gain_lower")
        if not self.horizon > 0:
            raise ProblemValidationError(f"T must be positive, got {self.horizon}", field_path="/T")
        for j in self.endpoint:
            if not 0 <= j < n:
                raise ProblemValidationError(f"endpoint index {j + 1} is outside 1..{n}", field_path=f"/endpoint/{j + 1}")
        if self.control_kind is ControlKind.u2:
            if not self.u2_delta > 0:
                raise ProblemValidationError("u2_delta must be positive", field_path="/u2_delta")
            if not self.u2_k > 0:
                raise ProblemValidationError("u2_k must be positive", field_path="/u2_k")
        if self.surface.m_rows != m:
            raise DimensionError(f"surface must have m = {m} rows, got {self.surface.m_rows}", field_path="/surface/rows")
        if self.surface.n_cols != n:
            raise DimensionError(f"surface rows must have n = {n} coefficients", field_path="/surface/rows/0/coeffs")
        if self.initial_params.shape != (self.surface.param_dim,):
            raise DimensionError(
                f"surface references {self.surface.param_dim} parameters, got {self.initial_params.shape[0]} initial values",
                field_path="/surface/params")
        if self.grid_nodes < 2:
            raise ProblemValidationError("grid_nodes must be at least 2", field_path="/grid_nodes")

    @property
    def controlled(self) -> np.ndarray:
        """ Boolean mask of length n: channel i is controlled iff i < m. """
        return np.arange(self.n) < self.m

    @property
    def endpoint_indices(self) -> np.ndarray:
        return np.array(sorted(self.endpoint), dtype=int)

    @property
    def endpoint_targets(self) -> np.ndarray:
        return np.array([self.endpoint[j] for j in sorted(self.endpoint)], dtype=float)

    @property
    def param_dim(self) -> int:
        return self.surface.param_dim


def _coefficient(value: float | ParamRefModel) -> Coefficient:
    if isinstance(value, ParamRefModel):
        return ParamRef(slot=value.param - 1)
    return float(value)


def problem_from_dict(data: Mapping[str, Any]) -> ProblemSpec:
    """ Validate a decoded problem file and build the problem instance. """
    try:
        raw = ProblemFileModel.model_validate(normalize_dict_keys(dict(data)))
    except ValidationError as e:
        first = e.errors()[0]
        raise ProblemValidationError(
            f"invalid problem file: {first['msg']}", field_path=json_pointer(first["loc"]), extra=e.errors()) from e

    if len(raw.A) != raw.n or any(len(row) != raw.n for row in raw.A):
        raise DimensionError(f"A must be {raw.n}x{raw.n}", field_path="/A")

    rows = raw.surface.rows
    param_dim = len(raw.surface.params)
    surface = SurfaceFamily(
        coeffs=[[_coefficient(c) for c in row.coeffs] for row in rows],
        offsets=[_coefficient(row.offset) for row in rows],
        param_dim=param_dim)

    descent = DescentConfig(**raw.descent.model_dump(exclude_none=True)) if raw.descent else DescentConfig()
    verify = VerifyConfig(**raw.verify.model_dump(exclude_none=True)) if raw.verify else VerifyConfig()

    return ProblemSpec(
        n=raw.n,
        m=raw.m,
        A=raw.A,
        gain_upper=raw.gain_upper,
        gain_lower=raw.gain_lower if raw.gain_lower is not None else raw.gain_upper,
        alpha=raw.alpha if raw.alpha is not None else raw.gain_upper,
        horizon=raw.T,
        x0=raw.x0,
        endpoint={j - 1: v for j, v in raw.endpoint.items()},
        control_kind=ControlKind(raw.control_kind),
        u2_delta=raw.u2_delta,
        u2_k=raw.u2_k,
        surface=surface,
        initial_params=raw.surface.params,
        grid_nodes=raw.grid_nodes if raw.grid_nodes is not None else DEFAULT_GRID_NODES,
        descent=descent,
        verify=verify)


def load_problem(path: str | os.PathLike) -> ProblemSpec:
    """
    Load and validate a problem file. `.json` files are read as JSON, anything else as YAML.
    YAML follows 1.1 number rules, so `1e-4` there is a string and fails validation; write `1.0e-4`.

    :raises FileNotFoundError: if the file does not exist.
    :raises ProblemValidationError: on parse failures and invariant violations, with the field path.
    """
    path = os.fspath(path)
    if not os.path.exists(os.path.expanduser(path)):
        raise FileNotFoundError(f"problem file `{path}` does not exist")
    with open(os.path.expanduser(path), "rt", encoding="utf-8") as f:
        try:
            if path.endswith(".json"):
                data = json.loads(f.read())
            else:
                data = yaml.safe_load(f.read())
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ProblemValidationError(f"cannot parse problem file `{path}`: {e}", field_path="") from e
    if not isinstance(data, dict):
        raise ProblemValidationError(f"problem file `{path}` must contain an object", field_path="")

    spec = problem_from_dict(data)
    _log.debug("Loaded problem", extra={"path": path, "n": spec.n, "m": spec.m, "control": spec.control_kind.value})
    return spec


def _coefficient_to_json(c: Coefficient) -> float | dict[str, int]:
    return {"param": c.slot + 1} if isinstance(c, ParamRef) else c


def problem_to_dict(spec: ProblemSpec) -> dict[str, Any]:
    """ Inverse of `problem_from_dict`, used to echo the resolved problem into reports. """
    return {
        "n": spec.n,
        "m": spec.m,
        "A": spec.A.tolist(),
        "gain_upper": spec.gain_upper.tolist(),
        "gain_lower": spec.gain_lower.tolist(),
        "alpha": spec.alpha.tolist(),
        "T": spec.horizon,
        "x0": spec.x0.tolist(),
        "endpoint": {str(j + 1): v for j, v in sorted(spec.endpoint.items())},
        "control_kind": spec.control_kind.value,
        "u2_delta": spec.u2_delta,
        "u2_k": spec.u2_k,
        "surface": {
            "rows": [
                {"coeffs": [_coefficient_to_json(c) for c in row], "offset": _coefficient_to_json(off)}
                for row, off in zip(spec.surface.coeffs, spec.surface.offsets)
            ],
            "params": spec.initial_params.tolist()
        },
        "grid_nodes": spec.grid_nodes,
        "descent": config_to_dict(spec.descent),
        "verify": config_to_dict(spec.verify)
    }
