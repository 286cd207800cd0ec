from __future__ import annotations

import os
from enum import Enum
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

from .errors import ProblemValidationError


DEFAULT_GRID_NODES = int(os.getenv("SLIDESOLVE_GRID_NODES", 2001))
DEFAULT_LOG_LEVEL = os.getenv("SLIDESOLVE_LOG_LEVEL", "INFO")

# Smallest trial step a line search may try before it reports a stall.
STEP_FLOOR = 1e-14


class IntegratorMethod(str, Enum):
    rk45 = "rk45"
    rk4 = "rk4"


@dataclass(kw_only=True, frozen=True)
class DescentConfig:
    max_outer_iters: int = field(default=500)
    tol_i: float = field(default=1e-4)
    tol_grad: float = field(default=1e-6)
    z_step_init: float = field(default=1.0)
    # None means z_step_init / 10
    p_step_init: float | None = field(default=None)
    # Largest change of any surface parameter in one slow step; None leaves the step unbounded
    p_max_move: float | None = field(default=None)
    backtrack: float = field(default=0.5)
    armijo: float = field(default=1e-4)
    slow_inner_iters: int = field(default=3)
    step_floor: float = field(default=STEP_FLOOR)

    def __post_init__(self):
        if self.max_outer_iters < 0:
            raise ProblemValidationError("max_outer_iters must be nonnegative", field_path="/descent/max_outer_iters")
        if self.slow_inner_iters < 0:
            raise ProblemValidationError("slow_inner_iters must be nonnegative", field_path="/descent/slow_inner_iters")
        for name in ("tol_i", "tol_grad", "z_step_init", "step_floor"):
            if not getattr(self, name) > 0:
                raise ProblemValidationError(f"{name} must be positive", field_path=f"/descent/{name}")
        for name in ("p_step_init", "p_max_move"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ProblemValidationError(f"{name} must be positive", field_path=f"/descent/{name}")
        for name in ("backtrack", "armijo"):
            if not 0 < getattr(self, name) < 1:
                raise ProblemValidationError(f"{name} must lie in (0, 1)", field_path=f"/descent/{name}")

    @property
    def p_step(self) -> float:
        return self.p_step_init if self.p_step_init is not None else self.z_step_init / 10


@dataclass(kw_only=True, frozen=True)
class VerifyConfig:
    method: IntegratorMethod = field(default=IntegratorMethod.rk45)
    rtol: float = field(default=1e-9)
    atol: float = field(default=1e-9)
    # Fixed RK4 step; None means 1e-4 * T
    h: float | None = field(default=None)
    endpoint_tol: float = field(default=1e-2)
    inclusion_tol: float | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "method", IntegratorMethod(self.method))
        for name in ("rtol", "atol", "endpoint_tol"):
            if not getattr(self, name) > 0:
                raise ProblemValidationError(f"{name} must be positive", field_path=f"/verify/{name}")
        if self.h is not None and not self.h > 0:
            raise ProblemValidationError("h must be positive", field_path="/verify/h")


def config_with_overrides(config: Any, overrides: Mapping[str, Any]) -> Any:
    """
    Return a copy of a frozen config with the non-None overrides applied.
    Unknown keys are ignored so CLI namespaces can be passed as-is.
    """
    names = {f.name for f in fields(config)}
    changes = {k: v for k, v in overrides.items() if k in names and v is not None}
    return replace(config, **changes) if changes else config


def config_to_dict(config: Any) -> dict[str, Any]:
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        out[f.name] = value.value if isinstance(value, Enum) else value
    return out
