"""
Raw problem-file schema. Only types and shapes that pydantic can check on its own live here;
cross-field invariants (dimensions, index ranges, parameter slots) are checked by `ProblemSpec`.
Numbers are strict: a quoted "1" is reported at its field path instead of being coerced.
"""
from __future__ import annotations

from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, StrictFloat, StrictInt, field_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamRefModel(_Strict):
    # 1-based slot in the surface parameter vector
    param: StrictInt = Field(ge=1)


CoefficientModel = Union[StrictFloat, ParamRefModel]


class SurfaceRowModel(_Strict):
    coeffs: list[CoefficientModel]
    offset: CoefficientModel = 0.0


class SurfaceModel(_Strict):
    rows: list[SurfaceRowModel]
    # initial values of the free parameter slots
    params: list[StrictFloat] = Field(default_factory=list)


class DescentModel(_Strict):
    max_outer_iters: StrictInt | None = None
    tol_i: StrictFloat | None = None
    tol_grad: StrictFloat | None = None
    z_step_init: StrictFloat | None = None
    p_step_init: StrictFloat | None = None
    p_max_move: StrictFloat | None = None
    backtrack: StrictFloat | None = None
    armijo: StrictFloat | None = None
    slow_inner_iters: StrictInt | None = None
    step_floor: StrictFloat | None = None


class VerifyModel(_Strict):
    method: Literal["rk45", "rk4"] | None = None
    rtol: StrictFloat | None = None
    atol: StrictFloat | None = None
    h: StrictFloat | None = None
    endpoint_tol: StrictFloat | None = None
    inclusion_tol: StrictFloat | None = None


class ProblemFileModel(_Strict):
    n: StrictInt
    m: StrictInt
    A: list[list[StrictFloat]]
    gain_upper: list[StrictFloat]
    gain_lower: list[StrictFloat] | None = None
    alpha: list[StrictFloat] | None = None
    T: StrictFloat
    x0: list[StrictFloat]
    endpoint: dict[StrictInt, StrictFloat] = Field(default_factory=dict)
    control_kind: Literal["relay", "u1", "u2"] = "relay"
    u2_delta: StrictFloat = 0.01
    u2_k: StrictFloat = 1.0
    surface: SurfaceModel
    grid_nodes: StrictInt | None = None
    descent: DescentModel | None = None
    verify: VerifyModel | None = None

    @field_validator("endpoint", mode="before")
    @classmethod
    def _endpoint_indices(cls, value: Any) -> Any:
        # JSON object keys are strings; "1" and "01" name the same coordinate
        if not isinstance(value, dict):
            return value
        out: dict[int, Any] = {}
        for key, target in value.items():
            if isinstance(key, bool) or not isinstance(key, (int, str)):
                raise ValueError(f"endpoint index {key!r} is not an integer")
            try:
                index = int(key)
            except ValueError:
                raise ValueError(f"endpoint index {key!r} is not an integer") from None
            if index in out:
                raise ValueError(f"endpoint index {index} is given more than once")
            out[index] = target
        return out
