"""Parallelepiped scatterer and its uniform voxel mesh."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np


class UnsupportedRegionError(ValueError):
    """Raised when a refinement region is not an axis-aligned block of voxels."""


def _vec3(v, dtype=float) -> np.ndarray:
    arr = np.asarray(v, dtype=dtype).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(v)}")
    return arr


@dataclass(frozen=True, eq=False)
class Parallelepiped:
    """Axis-aligned box ``{a < x < b}`` in meters."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a, b = _vec3(self.a), _vec3(self.b)
        if not np.all(a < b):
            raise ValueError(f"degenerate box: a={a}, b={b}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def size(self) -> np.ndarray:
        return self.b - self.a

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, x, closed: bool = True) -> np.ndarray:
        """Vectorised membership test for points of shape (..., 3)."""
        x = np.asarray(x, dtype=float)
        if closed:
            return np.all((x >= self.a) & (x <= self.b), axis=-1)
        return np.all((x > self.a) & (x < self.b), axis=-1)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from points (..., 3) to the closed box (0 inside)."""
        x = np.asarray(x, dtype=float)
        gap = np.maximum(np.maximum(self.a - x, x - self.b), 0.0)
        return np.sqrt(np.sum(gap**2, axis=-1))

    def __eq__(self, other):
        if not isinstance(other, Parallelepiped):
            return NotImplemented
        return bool(np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b))

    def __hash__(self):
        return hash((tuple(self.a), tuple(self.b)))

    def __repr__(self):
        return f"Parallelepiped(a={self.a.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True)
class VoxelIndex:
    i: Tuple[int, int, int]
    linear: int


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform ``n1 x n2 x n3`` partition of a :class:`Parallelepiped`.

    Voxel ``I = (i1, i2, i3)`` is the cell ``a + r_I + [0, h]`` with shift
    ``r_I = (i1 h1, i2 h2, i3 h3)``. Linear indices are row-major
    (``i3`` fastest), so ``linear = i1 n2 n3 + i2 n3 + i3``.
    """

    box: Parallelepiped
    n: Tuple[int, int, int]

    def __post_init__(self):
        n = tuple(int(v) for v in np.asarray(self.n).reshape(-1))
        if len(n) != 3 or min(n) < 1:
            raise ValueError(f"voxel counts must be three positive integers, got {self.n}")
        object.__setattr__(self, "n", n)

    @classmethod
    def cube(cls, edge: float, n: int, origin: Sequence[float] = (0.0, 0.0, 0.0)) -> "Grid":
        o = _vec3(origin)
        return cls(Parallelepiped(o, o + edge), (n, n, n))

    @property
    def h(self) -> np.ndarray:
        return self.box.size / np.asarray(self.n, dtype=float)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.h))

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.box == other.box and self.n == other.n

    def __hash__(self):
        return hash((self.box, self.n))

    def __repr__(self):
        return f"Grid(box={self.box!r}, n={self.n})"

    # indexing -----------------------------------------------------------

    def index(self, i) -> VoxelIndex:
        """Build a validated :class:`VoxelIndex` from a multi-index or linear index."""
        if np.isscalar(i):
            lin = int(i)
            if not 0 <= lin < self.size:
                raise IndexError(f"linear index {lin} out of range for {self.size} voxels")
            return VoxelIndex(tuple(int(v) for v in np.unravel_index(lin, self.n)), lin)
        multi = tuple(int(v) for v in i)
        if len(multi) != 3 or any(not 0 <= m < nk for m, nk in zip(multi, self.n)):
            raise IndexError(f"voxel index {multi} out of range for n={self.n}")
        return VoxelIndex(multi, int(np.ravel_multi_index(multi, self.n)))

    def multi_indices(self) -> np.ndarray:
        """All multi-indices, shape (N, 3), in linear order."""
        return np.stack(np.unravel_index(np.arange(self.size), self.n), axis=-1)

    def centers(self) -> np.ndarray:
        """All voxel centers (collocation points), shape (N, 3)."""
        return self.box.a + (self.multi_indices() + 0.5) * self.h

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of every voxel, each of shape (N, 3)."""
        idx = self.multi_indices()
        lo = self.box.a + idx * self.h
        return lo, self._upper(idx, lo)

    def _upper(self, idx, lo):
        # the last cell along an axis ends exactly on the box face
        # and every cell face is the grid line a + j h, computed the same way
        return np.where(idx == np.asarray(self.n) - 1, self.box.b, self.box.a + (idx + 1) * self.h)

    def voxel_box(self, idx) -> Parallelepiped:
        vi = idx if isinstance(idx, VoxelIndex) else self.index(idx)
        i = np.asarray(vi.i)
        lo = self.box.a + i * self.h
        return Parallelepiped(lo, self._upper(i, lo))


def voxel_center(grid: Grid, idx) -> np.ndarray:
    vi = idx if isinstance(idx, VoxelIndex) else grid.index(idx)
    if vi.i != grid.index(vi.i).i:
        raise IndexError(vi)
    return grid.box.a + (np.asarray(vi.i) + 0.5) * grid.h


def locate(grid: Grid, x) -> Optional[VoxelIndex]:
    """Voxel owning point ``x``, or ``None`` if ``x`` lies outside the closed box.

    Cells are half-open ``[x_i, x_{i+1})``; points on the upper face of the
    box belong to the last cell along that axis.
    """
    x = _vec3(x)
    if not grid.box.contains(x, closed=True):
        return None
    rel = (x - grid.box.a) / grid.h
    i = np.floor(rel).astype(int)
    i = np.minimum(np.maximum(i, 0), np.asarray(grid.n) - 1)
    return grid.index(tuple(i))


def locate_many(grid: Grid, x) -> np.ndarray:
    """Vectorised :func:`locate`; returns linear indices with -1 for outside points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    inside = grid.box.contains(x, closed=True)
    i = np.floor((x - grid.box.a) / grid.h).astype(int)
    i = np.clip(i, 0, np.asarray(grid.n) - 1)
    lin = np.ravel_multi_index(i.T, grid.n)
    return np.where(inside, lin, -1)


def region_bounds(grid: Grid, region: Iterable) -> Tuple[np.ndarray, np.ndarray]:
    """Inclusive lower and upper multi-index of a box-shaped voxel region."""
    idx = []
    for r in region:
        vi = r if isinstance(r, VoxelIndex) else grid.index(r)
        idx.append(vi.i)
    if not idx:
        raise UnsupportedRegionError("empty region")
    idx = np.unique(np.asarray(idx, dtype=int), axis=0)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    if len(idx) != int(np.prod(hi - lo + 1)):
        raise UnsupportedRegionError("region is not an axis-aligned block of voxels")
    return lo, hi


def refine(grid: Grid, region: Iterable, factor: int) -> Grid:
    """New grid over the bounding block of ``region`` with each voxel split ``factor**3`` ways."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("refinement factor must be a positive integer")
    lo, hi = region_bounds(grid, region)
    a = grid.box.a + lo * grid.h
    b = grid.box.a + (hi + 1) * grid.h
    # keep the outer faces bit-exact where the region touches them
    full_hi = hi + 1 == np.asarray(grid.n)
    b = np.where(full_hi, grid.box.b, b)
    a = np.where(lo == 0, grid.box.a, a)
    n = tuple(int(v) for v in (hi - lo + 1) * factor)
    return Grid(Parallelepiped(a, b), n)
