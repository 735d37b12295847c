"""Helmholtz kernels and their integrals over voxels.

The voxel integral ``int_box G(x, y) dy`` is split as

    G = 1/(4 pi r) + (exp(i k0 r) - 1)/(4 pi r)

for targets within one voxel diameter of the box. The static part uses the
closed-form Newton potential of a box; the bounded remainder is integrated in
Duffy coordinates after cutting the box into signed corner boxes anchored at
the target, which makes the integrand smooth whether the target sits inside,
on, or outside the box. Far targets use tensor Gauss-Legendre directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

FOUR_PI = 4.0 * np.pi


class SingularityError(ValueError):
    """A point kernel was evaluated at coincident points."""


class QuadratureError(RuntimeError):
    """Requested accuracy was not reached at the configured quadrature depth."""

    def __init__(self, message, value=None, error_estimate=None):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature controls for voxel integrals.

    smooth_order : Gauss points per axis on each panel.
    near_split : maximum number of dyadic panel refinements.
    tol : target relative error per integral.
    """

    smooth_order: int = 4
    near_split: int = 3
    tol: float = 1e-8

    def __post_init__(self):
        if self.smooth_order < 1:
            raise ValueError("smooth_order must be >= 1")
        if self.near_split < 0:
            raise ValueError("near_split must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()


def check_wavenumber(k0) -> complex:
    k0 = complex(k0)
    if not (k0.real > 0 or k0 == 0) or k0.imag < 0:
        raise ValueError(f"wavenumber must have Re k0 > 0 and Im k0 >= 0, got {k0}")
    return k0


# point kernels ---------------------------------------------------------------


def _distance(x, y) -> np.ndarray:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


def _scalar_or_array(v):
    return complex(v) if np.ndim(v) == 0 else v


def green(k0, x, y):
    """Outgoing Helmholtz Green function ``exp(i k0 r) / (4 pi r)``."""
    r = _distance(x, y)
    if np.any(r == 0):
        raise SingularityError("green() is singular at x == y; use voxel_kernel_integral")
    return _scalar_or_array(np.exp(1j * complex(k0) * r) / (FOUR_PI * r))


def green_conj(k0, x, y):
    """Incoming fundamental solution ``exp(-i k0 r) / (4 pi r)``."""
    r = _distance(x, y)
    if np.any(r == 0):
        raise SingularityError("green_conj() is singular at x == y")
    return _scalar_or_array(np.exp(-1j * complex(k0) * r) / (FOUR_PI * r))


def green_sinc(k0, x, y):
    """``sin(k0 r) / (4 pi r)``, equal to ``k0 / (4 pi)`` at ``r = 0``."""
    k0 = complex(k0)
    r = _distance(x, y)
    # np.sinc(t) = sin(pi t) / (pi t)
    return _scalar_or_array(k0 * np.sinc(k0 * r / np.pi) / FOUR_PI)


def incident_field(k0, x0, x):
    """Field of a unit point source at ``x0``."""
    r = _distance(x, x0)
    if np.any(r == 0):
        raise SingularityError("incident field evaluated at the source position")
    return _scalar_or_array(np.exp(1j * complex(k0) * r) / (FOUR_PI * r))


# static part: Newton potential of a box ---------------------------------------


def _log_u_plus_r(u, r, rest2):
    # log(u + r) without cancellation for u < 0: u + r = rest2 / (r - u)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.log(np.where(u >= 0, u + r, 1.0))
        neg = np.log(np.where(u < 0, rest2, 1.0)) - np.log(np.where(u < 0, r - u, 1.0))
    return np.where(u >= 0, pos, neg)


def _newton_corner(u1, u2, u3):
    s1, s2, s3 = u1 * u1, u2 * u2, u3 * u3
    r = np.sqrt(s1 + s2 + s3)
    out = np.zeros(np.broadcast(u1, u2, u3).shape)
    for a, b, c, sb, sc in ((u1, u2, u3, s2, s3), (u2, u3, u1, s3, s1), (u3, u1, u2, s1, s2)):
        # b c log(a + r)
        coef = b * c
        lg = _log_u_plus_r(a, r, sb + sc)
        out = out + np.where(coef != 0, coef * np.where(coef != 0, lg, 0.0), 0.0)
        # -(a^2 / 2) atan(b c / (a r))
        with np.errstate(divide="ignore", invalid="ignore"):
            at = np.arctan(np.where(a != 0, b * c / (a * np.where(r > 0, r, 1.0)), 0.0))
        out = out - 0.5 * a * a * at
    return out


def box_newton_potential(x, lo, hi) -> np.ndarray:
    """``int_{[lo, hi]} dy / |x - y|`` in closed form (no 1/(4 pi) factor).

    Broadcasts over leading dimensions of ``x``, ``lo`` and ``hi`` (last axis 3).
    """
    x, lo, hi = (np.asarray(v, dtype=float) for v in (x, lo, hi))
    a = lo - x
    b = hi - x
    total = 0.0
    for c1 in (0, 1):
        for c2 in (0, 1):
            for c3 in (0, 1):
                u1 = b[..., 0] if c1 else a[..., 0]
                u2 = b[..., 1] if c2 else a[..., 1]
                u3 = b[..., 2] if c3 else a[..., 2]
                sign = (-1) ** (3 - c1 - c2 - c3)
                total = total + sign * _newton_corner(u1, u2, u3)
    return total


# remainder part: Duffy coordinates on corner boxes ----------------------------


@lru_cache(maxsize=None)
def _gauss_unit(order: int, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    edges = np.arange(panels) / panels
    nodes = (edges[:, None] + t[None, :] / panels).ravel()
    weights = np.tile(w / panels, panels)
    return nodes, weights


def _radial_remainder(k0: complex, rho: np.ndarray) -> np.ndarray:
    """``int_0^1 s^2 g(s rho) ds`` for ``g(r) = (exp(i k0 r) - 1) / (4 pi r)``."""
    a = k0 * rho
    small = np.abs(a) < 0.1
    out = np.empty(np.shape(rho), dtype=complex)
    if np.any(small):
        # sum_{m>=1} (i k0)^m rho^(m-1) / (m! (m+2)), written to avoid 1/rho
        ik = 1j * k0
        rs = rho[small]
        term = np.full(rs.shape, ik, dtype=complex)
        acc = term / 3.0
        for m in range(2, 14):
            term = term * ik * rs / m
            acc = acc + term / (m + 2)
        out[small] = acc
    big = ~small
    if np.any(big):
        ab = a[big]
        f = (np.exp(1j * ab) * (1.0 - 1j * ab) - 1.0) / (ab * ab)
        out[big] = (f - 0.5) / rho[big]
    return out / FOUR_PI


def _remainder_duffy(k0: complex, x, lo, hi, order: int, panels: int) -> np.ndarray:
    """Remainder integral for targets inside or on the box, target-anchored Duffy rule."""
    t, w = _gauss_unit(order, panels)
    T, U = np.meshgrid(t, t, indexing="ij")
    T, U = T.ravel(), U.ravel()
    W = np.outer(w, w).ravel()
    total = np.zeros(x.shape[0], dtype=complex)
    lo_rel = lo - x
    hi_rel = hi - x
    # signed oriented intervals [x, hi] - [x, lo] per axis
    for c1 in (0, 1):
        for c2 in (0, 1):
            for c3 in (0, 1):
                ends = np.stack(
                    [
                        hi_rel[:, 0] if c1 else lo_rel[:, 0],
                        hi_rel[:, 1] if c2 else lo_rel[:, 1],
                        hi_rel[:, 2] if c3 else lo_rel[:, 2],
                    ],
                    axis=1,
                )
                sign = (-1.0) ** (3 - c1 - c2 - c3) * np.prod(np.sign(ends), axis=1)
                d = np.abs(ends)
                vol = np.prod(d, axis=1)
                live = vol > 0
                if not np.any(live):
                    continue
                d = d[live]
                acc = np.zeros(d.shape[0], dtype=complex)
                for p, q, s in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
                    # pyramid with apex at the target and base on the far face normal to axis p:
                    # y = s (d_p, t d_q, u d_s), radial integral done analytically
                    rho = np.sqrt(
                        d[:, p, None] ** 2 + (T[None, :] * d[:, q, None]) ** 2 + (U[None, :] * d[:, s, None]) ** 2
                    )
                    acc += _radial_remainder(k0, rho) @ W
                total[live] += sign[live] * vol[live] * acc
    return total


def _remainder_tensor(k0: complex, x, lo, hi, order: int, panels: int) -> np.ndarray:
    """Remainder integral by tensor Gauss, for targets off the box."""
    return _tensor_gauss(k0, x, lo, hi, order, panels, kernel=_remainder_kernel)


def _remainder_kernel(k0: complex, r: np.ndarray) -> np.ndarray:
    a = k0 * r
    small = np.abs(a) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        full = np.expm1(1j * a) / (FOUR_PI * r)
    return np.where(small, (1j * k0 - 0.5 * k0 * k0 * r) / FOUR_PI, full)


def _green_kernel(k0: complex, r: np.ndarray) -> np.ndarray:
    return np.exp(1j * k0 * r) / (FOUR_PI * r)


def _tensor_gauss(k0: complex, x, lo, hi, order: int, panels: int, kernel=_green_kernel) -> np.ndarray:
    t, w = _gauss_unit(order, panels)
    h = hi - lo
    d = lo[:, :, None] + t[None, None, :] * h[:, :, None] - x[:, :, None]
    total = np.zeros(x.shape[0], dtype=complex)
    # loop over the first axis to bound memory
    for a, wa in enumerate(w):
        r = np.sqrt(d[:, 0, a, None, None] ** 2 + d[:, 1, :, None] ** 2 + d[:, 2, None, :] ** 2)
        total += wa * np.einsum("pjk,j,k->p", kernel(k0, r), w, w)
    return total * np.prod(h, axis=1)


def _rules(order: int, near_split: int):
    """Quadrature ladder: one order bump, then dyadic panel refinements."""
    return [(order, 1), (order + 2, 1)] + [(order + 2, 2**j) for j in range(1, near_split + 1)]


def _adaptive(fn, k0, x, lo, hi, spec: QuadratureSpec, order: int, offset=None) -> np.ndarray:
    """Run the rule ladder until successive estimates agree to ``spec.tol``."""
    npts = x.shape[0]
    result = np.zeros(npts, dtype=complex)
    base = np.zeros(npts, dtype=complex) if offset is None else offset
    todo = np.arange(npts)
    rules = _rules(order, spec.near_split)
    prev = fn(k0, x, lo, hi, *rules[0])
    for rule in rules[1:]:
        cur = fn(k0, x[todo], lo[todo], hi[todo], *rule)
        err = np.abs(cur - prev)
        scale = np.abs(cur + base[todo])
        ok = err <= spec.tol * scale
        result[todo[ok]] = cur[ok]
        todo, prev = todo[~ok], cur[~ok]
        if todo.size == 0:
            return result
    worst = float(np.max(err[~ok] / np.maximum(scale[~ok], 1e-300)))
    result[todo] = prev
    raise QuadratureError(
        f"voxel quadrature did not reach tol={spec.tol:g} for {todo.size} integrals "
        f"(worst relative error estimate {worst:.3g})",
        value=result,
        error_estimate=worst,
    )


_CHUNK = 4096


def voxel_kernel_integrals(k0, x, lo, hi, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Vectorised ``int_{[lo_p, hi_p]} G(x_p, y) dy`` for P (target, box) pairs."""
    k0 = complex(k0)
    x, lo, hi = np.broadcast_arrays(*(np.atleast_2d(np.asarray(v, dtype=float)) for v in (x, lo, hi)))
    if np.any(hi <= lo):
        raise ValueError("degenerate voxel")
    npts = x.shape[0]
    out = np.empty(npts, dtype=complex)
    diam = np.sqrt(np.sum((hi - lo) ** 2, axis=1))
    gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    dist = np.sqrt(np.sum(gap**2, axis=1))
    near = dist <= diam
    # targets inside or hugging the box need the target-anchored rule
    hug = dist <= 0.1 * np.min(hi - lo, axis=1)
    classes = (
        (hug, _remainder_duffy, 2 * spec.smooth_order, True),
        (near & ~hug, _remainder_tensor, spec.smooth_order + 2, True),
        (~near, _tensor_gauss, spec.smooth_order, False),
    )
    for mask, fn, order, split in classes:
        idx = np.flatnonzero(mask)
        for start in range(0, idx.size, _CHUNK):
            sl = idx[start : start + _CHUNK]
            xs, ls, hs = x[sl], lo[sl], hi[sl]
            if split:
                static = box_newton_potential(xs, ls, hs) / FOUR_PI
                try:
                    out[sl] = static + _adaptive(fn, k0, xs, ls, hs, spec, order, offset=static.astype(complex))
                except QuadratureError as exc:
                    exc.value = exc.value + static
                    raise
            else:
                out[sl] = _adaptive(fn, k0, xs, ls, hs, spec, order)
    return out


def voxel_kernel_integral(k0, x, voxel, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> complex:
    """``int_voxel G(x, y) dy`` for a single target; ``voxel`` is a box or ``(lo, hi)`` pair."""
    lo, hi = (voxel.a, voxel.b) if hasattr(voxel, "a") else voxel
    return complex(voxel_kernel_integrals(k0, np.asarray(x, float)[None], np.asarray(lo, float)[None],
                                          np.asarray(hi, float)[None], spec)[0])


def kernel_matrix(k0, points, grid, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Matrix ``B[i, j] = int_{voxel j} G(points_i, y) dy`` of shape (M, N)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = grid.bounds()
    m, n = points.shape[0], lo.shape[0]
    xi = np.repeat(points, n, axis=0)
    lj = np.tile(lo, (m, 1))
    hj = np.tile(hi, (m, 1))
    return voxel_kernel_integrals(k0, xi, lj, hj, spec).reshape(m, n)


def collocation_kernel_matrix(k0, grid, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """``kernel_matrix`` evaluated at the grid's own voxel centers.

    On a uniform grid the entry depends only on ``|i - j|`` per axis, so only
    ``n1 n2 n3`` distinct integrals are computed and then gathered.
    """
    h = grid.h
    idx = grid.multi_indices()
    offsets = np.stack(np.meshgrid(*(np.arange(nk) for nk in grid.n), indexing="ij"), axis=-1).reshape(-1, 3)
    vals = voxel_kernel_integrals(k0, offsets * h, -0.5 * h, 0.5 * h, spec)
    table = vals.reshape(grid.n)
    diff = np.abs(idx[:, None, :] - idx[None, :, :])
    return table[diff[..., 0], diff[..., 1], diff[..., 2]]
