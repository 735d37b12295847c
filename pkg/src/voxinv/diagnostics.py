"""Uniqueness diagnostics for piecewise-constant currents.

Two pieces live here. The Gram matrix of the plane waves ``exp(i r_I . xi)``
on the sphere ``|xi| = k0`` (one row per voxel shift ``r_I``), whose
nonsingularity is what makes a voxel-constant current identifiable from
exterior data; and a numerical witness that general currents are *not*
identifiable: ``J = -(Delta + k0^2) psi`` for a bump ``psi`` supported on
``[-1, 1]^3`` radiates nothing outside the cube.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .geometry import Grid, Parallelepiped
from .kernels import FOUR_PI, DEFAULT_QUADRATURE, QuadratureSpec

ORACLE_BOX = Parallelepiped((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def _real_k0(k0) -> float:
    k = complex(k0)
    if k.imag != 0 or not k.real > 0:
        raise ValueError(f"k0 must be real and positive here, got {k0!r}")
    return k.real


@dataclass(frozen=True, eq=False)
class GramMatrix:
    gamma: np.ndarray
    k0: float
    grid: Grid

    @property
    def normalized(self) -> np.ndarray:
        """``gamma / (4 pi k0)``: diagonal ``k0``, off-diagonal ``sin(k0 r)/r``."""
        return self.gamma / (FOUR_PI * self.k0)


def _shift_distances(grid: Grid) -> np.ndarray:
    r = grid.multi_indices() * grid.h
    d = r[:, None, :] - r[None, :, :]
    return np.sqrt(np.sum(d * d, axis=-1))


def gram_matrix(grid: Grid, k0) -> GramMatrix:
    """``Gamma[I, I'] = int_{|xi|=k0} exp(i (r_I - r_I') . xi) dS = 4 pi k0 sin(k0 r)/r``."""
    k0 = _real_k0(k0)
    r = _shift_distances(grid)
    # sinc(x/pi) = sin(x)/x, with the r = 0 limit giving 4 pi k0^2 on the diagonal
    gamma = FOUR_PI * k0 * k0 * np.sinc(k0 * r / np.pi)
    return GramMatrix(gamma, k0, grid)


def sphere_rule(n_theta: int = 200, n_phi: int = 100):
    """Lat-long rule on the unit sphere: Gauss in ``cos(theta)``, trapezoid in ``phi``.

    Returns unit directions (n_theta * n_phi, 3) and weights summing to ``4 pi``.
    """
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - ct * ct)
    dirs = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones(n_phi))], axis=-1
    ).reshape(-1, 3)
    w = np.outer(wt, np.full(n_phi, 2.0 * np.pi / n_phi)).reshape(-1)
    return dirs, w


def gram_entry_quadrature(k0, r_vec, n_theta: int = 200, n_phi: int = 100) -> complex:
    """Surface integral of ``exp(i r . xi)`` over ``|xi| = k0`` by direct quadrature."""
    k0 = _real_k0(k0)
    dirs, w = sphere_rule(n_theta, n_phi)
    phase = k0 * (dirs @ np.asarray(r_vec, dtype=float))
    return complex(k0 * k0 * np.sum(w * np.exp(1j * phase)))


def uniqueness_bound(grid: Grid, k0) -> Dict[str, Optional[float]]:
    """Sufficient condition ``k0 > pi^2 n^3 / (2 l)`` and the diagonal-dominance margin.

    ``n`` is the per-axis voxel count and ``l`` the shortest box edge. For
    grids with unequal counts only the row sum and margin are reported
    (``bound`` and ``satisfied`` are None).
    """
    k0 = _real_k0(k0)
    g = gram_matrix(grid, k0).normalized
    off = np.abs(g - np.diag(np.diag(g)))
    offdiag_norm = float(np.max(np.sum(off, axis=1)))
    if len(set(grid.n)) == 1:
        n = grid.n[0]
        l = float(np.min(grid.box.size))
        bound = np.pi**2 * n**3 / (2.0 * l)
        satisfied = bool(k0 > bound)
    else:
        bound, satisfied = None, None
    return {
        "bound": bound,
        "satisfied": satisfied,
        "offdiag_norm": offdiag_norm,
        "dominance_margin": k0 - offdiag_norm,
    }


# non-uniqueness witness ------------------------------------------------------


def _bump(t):
    return (1.0 - t * t) ** 2


def _bump_dd(t):
    return 12.0 * t * t - 4.0


def bump_psi(y) -> np.ndarray:
    """``psi = prod_i (1 - y_i^2)^2``, which vanishes with its gradient on the cube faces."""
    y = np.asarray(y, dtype=float)
    return _bump(y[..., 0]) * _bump(y[..., 1]) * _bump(y[..., 2])


def bump_current(k0, y) -> np.ndarray:
    """``J = -Delta psi - k0^2 psi`` in closed form."""
    y = np.asarray(y, dtype=float)
    f = [_bump(y[..., i]) for i in range(3)]
    fdd = [_bump_dd(y[..., i]) for i in range(3)]
    lap = fdd[0] * f[1] * f[2] + f[0] * fdd[1] * f[2] + f[0] * f[1] * fdd[2]
    return -lap - complex(k0) ** 2 * f[0] * f[1] * f[2]


def _panels(order: int, splits: int):
    """Composite Gauss nodes/weights on [-1, 1] with ``splits`` equal panels."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, splits + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return (mid[:, None] + half[:, None] * t).ravel(), (half[:, None] * w).ravel()


def _exterior_potential(k0, x, order: int, splits: int) -> complex:
    s, w = _panels(order, splits)
    y = np.stack(np.meshgrid(s, s, s, indexing="ij"), axis=-1).reshape(-1, 3)
    wy = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    r = np.linalg.norm(y - x, axis=1)
    return complex(np.sum(wy * bump_current(k0, y) * np.exp(1j * k0 * r) / (FOUR_PI * r)))


def _interior_potential(k0, x, order: int, splits: int) -> complex:
    """Volume potential at an interior point via six pyramids with apex ``x``.

    On the pyramid over face ``F`` the substitution ``y = x + t (z - x)``
    gives ``dy = t^2 h_F dt dA_z``; one power of ``t`` cancels ``1/r``.
    """
    s, w = _panels(order, splits)
    t = 0.5 * (s + 1.0)
    wt = 0.5 * w
    u1, u2 = np.meshgrid(s, s, indexing="ij")
    wa = np.outer(w, w).ravel()
    total = 0j
    for axis in range(3):
        a1, a2 = [i for i in range(3) if i != axis]
        for side in (-1.0, 1.0):
            hF = abs(side - x[axis])
            z = np.empty((u1.size, 3))
            z[:, axis] = side
            z[:, a1], z[:, a2] = u1.ravel(), u2.ravel()
            dz = z - x
            rho = np.linalg.norm(dz, axis=1)
            y = x + t[:, None, None] * dz[None, :, :]
            f = t[:, None] * np.exp(1j * k0 * t[:, None] * rho) * bump_current(k0, y)
            total += hF * np.sum(wt[:, None] * wa[None, :] * f / (FOUR_PI * rho))
    return complex(total)


@dataclass
class NonuniquenessReport:
    max_exterior_potential: float
    interior_match_error: float
    levels: List[int] = field(default_factory=list)
    exterior_by_level: List[float] = field(default_factory=list)
    interior_by_level: List[float] = field(default_factory=list)

    def lines(self) -> List[str]:
        out = [
            f"max_exterior_potential = {self.max_exterior_potential:.6e}",
            f"interior_match_error = {self.interior_match_error:.6e}",
        ]
        for lev, e, i in zip(self.levels, self.exterior_by_level, self.interior_by_level):
            out.append(f"level.{lev}.exterior = {e:.6e}")
            out.append(f"level.{lev}.interior = {i:.6e}")
        return out


def probe_points(n_exterior: int = 24, n_interior: int = 24, seed: int = 0):
    """Random probes: exterior at distance 0.5 to 1.5 from the cube, interior in ``[-0.8, 0.8]^3``."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_exterior, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ext = []
    for v in d:
        # walk out along v until the distance to the cube hits the target
        target = rng.uniform(0.5, 1.5)
        lo, hi = 0.0, 10.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ORACLE_BOX.distance(mid * v) < target else (lo, mid)
        ext.append(hi * v)
    inner = rng.uniform(-0.8, 0.8, size=(n_interior, 3))
    return np.asarray(ext), inner


def nonuniqueness_oracle(k0=1.0, spec: QuadratureSpec = DEFAULT_QUADRATURE, levels: Sequence[int] = (1, 2, 4),
                         order: Optional[int] = None, n_exterior: int = 24, n_interior: int = 24,
                         seed: int = 0) -> NonuniquenessReport:
    """Potential of ``J = -(Delta + k0^2) psi`` outside and inside ``[-1, 1]^3``.

    Outside the cube the exact potential is zero; inside it equals ``psi``.
    Each entry of ``levels`` is a number of equal panels per axis, with
    ``order`` Gauss points per panel (default ``2 * spec.smooth_order``).
    The last level sets the reported values.
    """
    k0 = _real_k0(k0)
    order = 2 * spec.smooth_order if order is None else int(order)
    ext, inner = probe_points(n_exterior, n_interior, seed)
    if np.any(ORACLE_BOX.distance(ext) < 0.5 - 1e-9):
        raise ValueError("exterior probes must stay at least 0.5 from the cube")
    psi = bump_psi(inner)
    rep = NonuniquenessReport(np.nan, np.nan, list(levels))
    for lev in levels:
        vext = np.array([_exterior_potential(k0, x, order, lev) for x in ext])
        vin = np.array([_interior_potential(k0, x, order, lev) for x in inner])
        rep.exterior_by_level.append(float(np.max(np.abs(vext))))
        rep.interior_by_level.append(float(np.max(np.abs(vin - psi))))
    rep.max_exterior_potential = rep.exterior_by_level[-1]
    rep.interior_match_error = rep.interior_by_level[-1]
    return rep


def report_lines(grid: Grid, k0, oracle: Optional[NonuniquenessReport] = None) -> List[str]:
    """``key = value`` lines for the Gram checks and, optionally, the oracle."""
    ub = uniqueness_bound(grid, k0)
    fmt = lambda v: "none" if v is None else (str(v).lower() if isinstance(v, bool) else f"{v:.6e}")
    out = [f"{k} = {fmt(v)}" for k, v in ub.items()]
    g = gram_matrix(grid, k0).gamma
    out.append(f"gram.min_eigenvalue = {np.linalg.eigvalsh(g)[0]:.6e}")
    if oracle is not None:
        out.extend("oracle." + line for line in oracle.lines())
    return out
