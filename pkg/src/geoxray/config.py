"""Strict JSON experiment configuration."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, field_validator, model_validator

from .errors import ConfigError

TASKS = ("forward", "invert-function", "invert-potential", "verify-jacobi",
         "kernel-norm", "scaling-study")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EuclideanMetric(_Strict):
    kind: Literal["euclidean"]


class ConstantCurvatureMetric(_Strict):
    kind: Literal["constant-curvature"]
    c: float

    @field_validator("c")
    @classmethod
    def _chart(cls, c):
        if 1.0 + c / 4.0 <= 0.0:
            raise ValueError("c must satisfy 1 + c/4 > 0 so the conformal factor is finite on the disk")
        return c


class BumpMetric(_Strict):
    kind: Literal["conformal-bump"]
    epsilon: float
    center: tuple[float, float] = (0.0, 0.0)
    width: PositiveFloat = 0.3


class ExpressionMetric(_Strict):
    kind: Literal["conformal-expression"]
    expression: str


MetricBlock = Annotated[Union[EuclideanMetric, ConstantCurvatureMetric, BumpMetric, ExpressionMetric],
                        Field(discriminator="kind")]


class Grids(_Strict):
    n: PositiveInt = 64
    n_s: PositiveInt = 64
    n_theta: PositiveInt = 64
    kernel_n: PositiveInt = 24

    @field_validator("n_theta")
    @classmethod
    def _pow2(cls, v):
        if v & (v - 1):
            raise ValueError(f"n_theta must be a power of two (got {v})")
        return v


class Solver(_Strict):
    h_t: PositiveFloat = 1e-2
    kernel_h_t: PositiveFloat = 5e-2
    tol: PositiveFloat = 1e-8
    max_terms: PositiveInt = 50


class GaussianPhantom(_Strict):
    kind: Literal["gaussian"]
    center: tuple[float, float] = (0.0, 0.0)
    width: PositiveFloat = 0.3


class PolynomialPotential(_Strict):
    kind: Literal["polynomial-potential"]


class GridFilePhantom(_Strict):
    kind: Literal["custom-grid-file"]
    path: str


PhantomBlock = Annotated[Union[GaussianPhantom, PolynomialPotential, GridFilePhantom],
                         Field(discriminator="kind")]


class Study(_Strict):
    epsilons: list[PositiveFloat] = [0.01, 0.02, 0.05, 0.1]
    n_rays: PositiveInt = 200


class ExperimentConfig(_Strict):
    task: Literal[TASKS]  # type: ignore[valid-type]
    metric: MetricBlock
    grids: Grids = Grids()
    solver: Solver = Solver()
    phantom: PhantomBlock | None = None
    study: Study = Study()
    output: str = "out"
    seed: Annotated[int, Field(ge=0)] = 0

    @model_validator(mode="after")
    def _needs_phantom(self):
        if self.task in ("forward", "invert-function", "invert-potential") and self.phantom is None:
            raise ValueError(f"task {self.task!r} needs a phantom block")
        if self.task == "invert-potential" and self.phantom.kind != "polynomial-potential":
            raise ValueError("invert-potential needs a boundary-vanishing potential phantom "
                             "(polynomial-potential)")
        return self


def _format(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping; every problem is listed in the raised ConfigError."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return parse_config(data)
