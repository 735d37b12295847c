"""Collocation solver for the volume (Lippmann-Schwinger) integral equation.

Inside the box the total field satisfies

    u(x) - int_P (k(y)^2 - k0^2) G(x, y) u(y) dy = u0(x),

discretised with piecewise-constant ``k`` and ``u`` on the voxels and
collocation at voxel centers. Outside the box the same volume potential gives
the scattered field.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .geometry import Grid
from .kernels import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    collocation_kernel_matrix,
    incident_field,
    voxel_kernel_integrals,
)


class DomainError(ValueError):
    """A point that must lie outside the scatterer does not."""


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message, cond_estimate=np.inf):
        super().__init__(message)
        self.cond_estimate = cond_estimate


@dataclass(frozen=True, eq=False)
class ComplexVoxelField:
    """One complex value per voxel, in the grid's row-major order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex).reshape(-1)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} voxel values, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def as_array(self) -> np.ndarray:
        """Values reshaped to ``grid.n``."""
        return self.values.reshape(self.grid.n)


@dataclass(frozen=True, eq=False)
class RefractiveField(ComplexVoxelField):
    """Voxel-constant wavenumber ``k = n k0`` (1/m); requires ``Im k >= 0``."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values.imag < 0):
            raise ValueError("refractive field must satisfy Im k >= 0 in every voxel")

    @property
    def k_vox(self) -> np.ndarray:
        return self.values

    @classmethod
    def uniform(cls, grid: Grid, k) -> "RefractiveField":
        return cls(grid, np.full(grid.size, complex(k)))

    @classmethod
    def from_inclusions(cls, grid: Grid, background, inclusions: Iterable[Tuple[Sequence, Sequence, complex]]):
        """Rasterise axis-aligned inclusion boxes ``(lo, hi, k)`` given in meters.

        A voxel takes the value of the last inclusion containing its center.
        """
        k = np.full(grid.size, complex(background))
        centers = grid.centers()
        for lo, hi, kval in inclusions:
            inside = np.all((centers >= np.asarray(lo, float)) & (centers <= np.asarray(hi, float)), axis=1)
            k[inside] = complex(kval)
        return cls(grid, k)

    def contrast(self, k0) -> np.ndarray:
        return self.values**2 - complex(k0) ** 2


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    u_in: ComplexVoxelField
    residual: float
    cond_estimate: float


def assemble_ls_matrix(field: RefractiveField, k0, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Discrete ``I - A``: ``M[i, j] = delta_ij - (k_j^2 - k0^2) int_{voxel j} G(x_i, y) dy``."""
    contrast = field.contrast(k0)
    n = field.grid.size
    if not np.any(contrast):
        return np.eye(n, dtype=complex)
    C = collocation_kernel_matrix(k0, field.grid, spec)
    return np.eye(n, dtype=complex) - C * contrast[None, :]


def _check_exterior(grid: Grid, pts: np.ndarray, what: str):
    inside = grid.box.contains(pts, closed=True)
    if np.any(inside):
        raise DomainError(f"{what} must lie strictly outside the closed scatterer box")


def solve_forward(field: RefractiveField, k0, source, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> ForwardSolution:
    """Total field at the voxel centers for a point source at ``source``."""
    grid = field.grid
    source = np.asarray(source, dtype=float)
    _check_exterior(grid, source[None], "source")
    u0 = np.asarray(incident_field(k0, source, grid.centers()), dtype=complex)
    M = assemble_ls_matrix(field, k0, spec)
    anorm = np.max(np.sum(np.abs(M), axis=0))
    try:
        lu, piv = linalg.lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"LU factorisation failed: {exc}") from exc
    rcond, info = lapack.zgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    # singular to working precision: no correct digits survive the solve
    if info != 0 or not rcond > M.shape[0] * np.finfo(float).eps:
        raise SingularSystemError(f"collocation matrix is numerically singular (cond ~ {cond:.3g})", cond)
    u = linalg.lu_solve((lu, piv), u0)
    residual = float(np.linalg.norm(M @ u - u0) / np.linalg.norm(u0))
    return ForwardSolution(ComplexVoxelField(grid, u), residual, float(cond))


def current_from_solution(u_in: ComplexVoxelField, field: RefractiveField, k0) -> ComplexVoxelField:
    """``J = (k^2 - k0^2) u`` per voxel."""
    if u_in.grid != field.grid:
        raise ValueError("field and solution live on different grids")
    return ComplexVoxelField(field.grid, field.contrast(k0) * u_in.values)


def potential_at(J: ComplexVoxelField, k0, x, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Volume potential ``sum_j J_j int_{voxel j} G(x, y) dy`` at exterior points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    _check_exterior(J.grid, pts, "evaluation point")
    live = np.flatnonzero(J.values)
    if live.size == 0:
        out = np.zeros(pts.shape[0], dtype=complex)
    else:
        lo, hi = J.grid.bounds()
        m, n = pts.shape[0], live.size
        vals = voxel_kernel_integrals(
            k0, np.repeat(pts, n, axis=0), np.tile(lo[live], (m, 1)), np.tile(hi[live], (m, 1)), spec
        ).reshape(m, n)
        out = vals @ J.values[live]
    return complex(out[0]) if np.ndim(x) == 1 else out


def scattered_field_at(u_in: ComplexVoxelField, field: RefractiveField, k0, x,
                       spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Scattered field at exterior point(s) ``x``; add ``incident_field`` for the total field."""
    return potential_at(current_from_solution(u_in, field, k0), k0, x, spec)


# CSV ------------------------------------------------------------------------

_FMT = "{:.17g}"


def write_voxel_csv(field: ComplexVoxelField, path) -> Path:
    path = Path(path)
    idx = field.grid.multi_indices()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i1", "i2", "i3", "re", "im"])
        for (i1, i2, i3), v in zip(idx, field.values):
            w.writerow([i1, i2, i3, _FMT.format(v.real), _FMT.format(v.imag)])
    return path


def read_voxel_csv(path, grid: Grid, cls=ComplexVoxelField) -> ComplexVoxelField:
    values = np.zeros(grid.size, dtype=complex)
    seen = np.zeros(grid.size, dtype=bool)
    with Path(path).open(newline="") as fh:
        rows = csv.DictReader(fh)
        if rows.fieldnames != ["i1", "i2", "i3", "re", "im"]:
            raise ValueError(f"{path}: unexpected header {rows.fieldnames}")
        for row in rows:
            lin = grid.index((int(row["i1"]), int(row["i2"]), int(row["i3"]))).linear
            values[lin] = complex(float(row["re"]), float(row["im"]))
            seen[lin] = True
    if not seen.all():
        raise ValueError(f"{path}: {np.count_nonzero(~seen)} voxels missing")
    return cls(grid, values)
