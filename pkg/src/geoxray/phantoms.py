"""Named test fields with exact gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import FieldGrid, read_field


@dataclass(frozen=True)
class Phantom:
    name: str
    f: Callable
    grad: Callable | None = None

    def __call__(self, x, y):
        return self.f(x, y)


def gaussian(center=(0.0, 0.0), width: float = 0.3) -> Phantom:
    cx, cy = (float(v) for v in center)
    a = 1.0 / float(width) ** 2

    def f(x, y):
        return np.exp(-a * ((x - cx) ** 2 + (y - cy) ** 2))

    def grad(x, y):
        g = f(x, y)
        return -2.0 * a * (x - cx) * g, -2.0 * a * (y - cy) * g

    return Phantom(f"gaussian({cx},{cy},{width})", f, grad)


def polynomial_potential() -> Phantom:
    """(1 - |x|^2)^2: vanishes to second order on the boundary circle."""

    def f(x, y):
        return (1.0 - x * x - y * y) ** 2

    def grad(x, y):
        s = 1.0 - x * x - y * y
        return -4.0 * x * s, -4.0 * y * s

    return Phantom("polynomial-potential", f, grad)


def boundary_vanishing_potentials() -> list[Phantom]:
    """Three distinct smooth functions vanishing on |x| = 1."""

    def p1(x, y):
        return 1.0 - x * x - y * y

    def g1(x, y):
        return -2.0 * x, -2.0 * y

    def p2(x, y):
        return (1.0 - x * x - y * y) * (x + 0.5 * y * y)

    def g2(x, y):
        s = 1.0 - x * x - y * y
        u = x + 0.5 * y * y
        return s - 2.0 * x * u, s * y - 2.0 * y * u

    def p3(x, y):
        return (1.0 - x * x - y * y) * np.sin(2.0 * x + y)

    def g3(x, y):
        s = 1.0 - x * x - y * y
        sn, cs = np.sin(2.0 * x + y), np.cos(2.0 * x + y)
        return -2.0 * x * sn + 2.0 * s * cs, -2.0 * y * sn + s * cs

    return [Phantom("1-r^2", p1, g1), Phantom("(1-r^2)(x+y^2/2)", p2, g2),
            Phantom("(1-r^2)sin(2x+y)", p3, g3)]


def from_grid_file(path) -> Phantom:
    grid: FieldGrid = read_field(path)
    if grid.is_vector:
        raise ValueError("phantom grid must be scalar")
    return Phantom(f"grid:{path}", grid)
