"""Discretizations: interior mesh, influx boundary grid, full boundary fiber
grid, sphere-bundle grid, plus the binary grid exchange format."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metric import MetricModel

MASK_RULE = "x^2 + y^2 < 1 on cell-centred nodes"


@dataclass(frozen=True)
class DiskMesh:
    """n x n cell-centred nodes on [-1, 1]^2; values are indexed ``[i, j] -> (x_i, y_j)``."""

    n: int

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def coords(self) -> np.ndarray:
        return -1.0 + (np.arange(self.n) + 0.5) * self.h

    @property
    def XY(self):
        return np.meshgrid(self.coords, self.coords, indexing="ij")

    @property
    def mask(self) -> np.ndarray:
        X, Y = self.XY
        return X * X + Y * Y < 1.0

    @property
    def nodes(self) -> np.ndarray:
        X, Y = self.XY
        m = self.mask
        return np.column_stack([X[m], Y[m]])

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def weights(self, m: MetricModel) -> np.ndarray:
        """Quadrature weights h^2 sqrt(g) at the masked-in nodes."""
        p = self.nodes
        return self.h ** 2 * m.sqrt_det(p[:, 0], p[:, 1])

    def scatter(self, masked: np.ndarray, fill: float = 0.0) -> np.ndarray:
        masked = np.asarray(masked)
        out = np.full((self.n, self.n) + masked.shape[1:], fill, dtype=masked.dtype)
        out[self.mask] = masked
        return out


@dataclass
class FieldGrid:
    """Scalar (n, n) or contravariant vector (2, n, n) samples on a DiskMesh."""

    mesh: DiskMesh
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 3

    @classmethod
    def from_function(cls, mesh: DiskMesh, f) -> "FieldGrid":
        """Sample a callable ``f(x, y)`` at every mesh node (inside and outside the disk)."""
        X, Y = mesh.XY
        v = np.asarray(f(X, Y), dtype=float)
        if v.ndim == 3 and v.shape[0] != 2:
            v = np.moveaxis(v, -1, 0)
        return cls(mesh, np.broadcast_to(v, v.shape).copy())

    @classmethod
    def from_masked(cls, mesh: DiskMesh, masked: np.ndarray) -> "FieldGrid":
        masked = np.asarray(masked, dtype=float)
        if masked.ndim == 2:
            return cls(mesh, np.moveaxis(mesh.scatter(masked), -1, 0))
        return cls(mesh, mesh.scatter(masked))

    def masked(self) -> np.ndarray:
        if self.is_vector:
            return np.column_stack([self.values[0][self.mesh.mask], self.values[1][self.mesh.mask]])
        return self.values[self.mesh.mask]

    def __call__(self, x, y):
        """Bilinear interpolation (constant extension beyond the node box)."""
        if self.is_vector:
            return np.stack([bilinear(self.values[0], self.mesh, x, y),
                             bilinear(self.values[1], self.mesh, x, y)])
        return bilinear(self.values, self.mesh, x, y)

    def norm(self, m: MetricModel) -> float:
        w = self.mesh.weights(m)
        v = self.masked()
        if v.ndim == 2:
            v2 = m.sqrt_det(*self.mesh.nodes.T) * np.sum(v * v, axis=1)
        else:
            v2 = v * v
        return float(np.sqrt(np.sum(w * v2)))


def bilinear(values: np.ndarray, mesh: DiskMesh, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = mesh.n
    u = np.clip((x + 1.0) / mesh.h - 0.5, 0.0, n - 1.0)
    v = np.clip((y + 1.0) / mesh.h - 0.5, 0.0, n - 1.0)
    i = np.minimum(np.floor(u).astype(int), n - 2)
    j = np.minimum(np.floor(v).astype(int), n - 2)
    fu, fv = u - i, v - j
    return ((1 - fu) * (1 - fv) * values[i, j] + fu * (1 - fv) * values[i + 1, j]
            + (1 - fu) * fv * values[i, j + 1] + fu * fv * values[i + 1, j + 1])


def relative_error(m: MetricModel, approx: FieldGrid, truth: FieldGrid) -> float:
    diff = FieldGrid(approx.mesh, approx.values - truth.values)
    return diff.norm(m) / truth.norm(m)


@dataclass
class BoundaryDataGrid:
    """Values on the influx boundary: arc parameter s_i = 2 pi i / n_s and
    inward angle theta_j = -pi/2 + (j + 1/2) pi / n_theta."""

    n_s: int
    n_theta: int
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.n_s, self.n_theta))
        if self.values.shape != (self.n_s, self.n_theta):
            raise ValueError("values shape does not match (n_s, n_theta)")

    @property
    def s(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_s) / self.n_s

    @property
    def theta(self) -> np.ndarray:
        return -0.5 * np.pi + (np.arange(self.n_theta) + 0.5) * np.pi / self.n_theta

    @property
    def grazing(self) -> np.ndarray:
        return np.abs(np.abs(self.theta) - 0.5 * np.pi) < 1e-6

    def rays(self):
        """Start points (n_s*n_theta, 2) and Euclidean direction angles, row-major in (s, theta)."""
        S, T = np.meshgrid(self.s, self.theta, indexing="ij")
        S, T = S.ravel(), T.ravel()
        return np.column_stack([np.cos(S), np.sin(S)]), S + np.pi + T

    def weights(self, m: MetricModel) -> np.ndarray:
        """<nu, xi> ds_g dtheta on the grid; vanishes on grazing columns."""
        lam = m.lam(np.cos(self.s), np.sin(self.s))
        ds = 2.0 * np.pi / self.n_s * np.exp(lam)
        w = np.outer(ds, np.cos(self.theta) * np.pi / self.n_theta)
        w[:, self.grazing] = 0.0
        return w

    def with_values(self, values) -> "BoundaryDataGrid":
        return BoundaryDataGrid(self.n_s, self.n_theta, np.asarray(values, dtype=float).reshape(self.n_s, self.n_theta))

    def interpolate(self, s, theta_in) -> np.ndarray:
        """Bilinear in (s, theta_in); periodic in s, clamped in theta_in."""
        u = np.asarray(s) / (2.0 * np.pi) * self.n_s
        v = (np.asarray(theta_in) + 0.5 * np.pi) / np.pi * self.n_theta - 0.5
        v = np.clip(v, 0.0, self.n_theta - 1.0)
        i0 = np.floor(u).astype(int)
        fu = u - i0
        i0 %= self.n_s
        i1 = (i0 + 1) % self.n_s
        j0 = np.minimum(np.floor(v).astype(int), self.n_theta - 2)
        fv = v - j0
        V = self.values
        return ((1 - fu) * (1 - fv) * V[i0, j0] + fu * (1 - fv) * V[i1, j0]
                + (1 - fu) * fv * V[i0, j0 + 1] + fu * fv * V[i1, j0 + 1])


@dataclass
class BoundaryFiberGrid:
    """Values on all of dSM: arc parameter s_i and relative angle
    psi_k = -pi + (k + 1/2) 2 pi / n_psi measured from the inward normal.

    The direction angle is s + pi + psi; |psi| < pi/2 is influx.  With
    n_psi = 2 n_theta the influx columns coincide with a BoundaryDataGrid and
    the fiber antipode is the column shift by n_psi / 2.
    """

    n_s: int
    n_psi: int
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.n_s, self.n_psi))
        if self.n_psi % 4:
            raise ValueError("n_psi must be a multiple of 4")

    @property
    def s(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_s) / self.n_s

    @property
    def psi(self) -> np.ndarray:
        return -np.pi + (np.arange(self.n_psi) + 0.5) * 2.0 * np.pi / self.n_psi

    @property
    def influx(self) -> slice:
        return slice(self.n_psi // 4, 3 * self.n_psi // 4)

    def antipode(self) -> np.ndarray:
        return np.roll(self.values, self.n_psi // 2, axis=1)

    def with_values(self, values) -> "BoundaryFiberGrid":
        return BoundaryFiberGrid(self.n_s, self.n_psi, np.asarray(values, dtype=float))

    def interpolate(self, s, psi, order: int = 1) -> np.ndarray:
        """Periodic interpolation in (s, psi); ``order`` 1 is bilinear, 3 a cubic B-spline."""
        u = np.asarray(s) / (2.0 * np.pi) * self.n_s
        v = (np.asarray(psi) + np.pi) / (2.0 * np.pi) * self.n_psi - 0.5
        if order != 1:
            from scipy.ndimage import map_coordinates
            return map_coordinates(self.values, [u.ravel(), v.ravel()], order=order,
                                   mode="grid-wrap").reshape(u.shape)
        i0 = np.floor(u).astype(int)
        j0 = np.floor(v).astype(int)
        fu, fv = u - i0, v - j0
        i0 %= self.n_s
        j0 %= self.n_psi
        i1 = (i0 + 1) % self.n_s
        j1 = (j0 + 1) % self.n_psi
        V = self.values
        return ((1 - fu) * (1 - fv) * V[i0, j0] + fu * (1 - fv) * V[i1, j0]
                + (1 - fu) * fv * V[i0, j1] + fu * fv * V[i1, j1])


@dataclass
class SphereBundleGrid:
    """Values u(x_k, theta_j) at masked-in mesh nodes and n_theta uniform
    Euclidean direction angles theta_j = 2 pi j / n_theta."""

    mesh: DiskMesh
    n_theta: int
    values: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta


# -- exchange format --------------------------------------------------------

def write_grid(stem: str | Path, values: np.ndarray, kind: str, **header) -> tuple[Path, Path]:
    """Write ``stem.f64grid`` (raw little-endian float64, row-major) and ``stem.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(values, dtype="<f8")
    bin_path = stem.with_suffix(".f64grid")
    json_path = stem.with_suffix(".json")
    data.tofile(bin_path)
    head = {"kind": kind, "n": None, "n_s": None, "n_theta": None, "h": None,
            "mask_rule": MASK_RULE, "shape": list(data.shape)}
    head.update(header)
    json_path.write_text(json.dumps(head, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def read_grid(stem: str | Path) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    if stem.suffix in (".f64grid", ".json"):
        stem = stem.with_suffix("")
    head = json.loads(stem.with_suffix(".json").read_text())
    data = np.fromfile(stem.with_suffix(".f64grid"), dtype="<f8")
    return data.reshape(head["shape"]), head


def write_field(stem, f: FieldGrid, **extra):
    return write_grid(stem, f.values, "vector" if f.is_vector else "scalar",
                      n=f.mesh.n, h=f.mesh.h, **extra)


def read_field(stem) -> FieldGrid:
    data, head = read_grid(stem)
    if head.get("n") is None:
        raise ValueError("grid header has no mesh size 'n'")
    return FieldGrid(DiskMesh(int(head["n"])), data)


def write_boundary(stem, d: BoundaryDataGrid, **extra):
    return write_grid(stem, d.values, "boundary", n_s=d.n_s, n_theta=d.n_theta, **extra)


def read_boundary(stem) -> BoundaryDataGrid:
    data, head = read_grid(stem)
    return BoundaryDataGrid(int(head["n_s"]), int(head["n_theta"]), data)


def write_csv(path: str | Path, columns: dict[str, np.ndarray], float_format: str = "%.12e"):
    """Write equal-length columns to CSV with a fixed float format (byte-reproducible)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in range(n):
            w.writerow([_fmt(c[r], float_format) for c in cols])
    return path


def _fmt(v, float_format):
    if isinstance(v, (float, np.floating)):
        return float_format % v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)
