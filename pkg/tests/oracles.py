"""Reference computations that share no code with the package under test."""
from __future__ import annotations

import numpy as np
from scipy import integrate

FOUR_PI = 4.0 * np.pi


def _radial_antiderivative(k0, R):
    """``F(R) = int_0^R G(r) r^2 dr`` for ``G = exp(i k0 r) / (4 pi r)``."""
    if k0 == 0:
        return R * R / 2.0 / FOUR_PI
    a = 1j * k0
    return ((np.exp(a * R) * (a * R - 1.0) + 1.0) / (a * a)) / FOUR_PI


def surface_voxel_integral(k0, x, lo, hi, rel=1e-12):
    """``int_box G(x, y) dy`` as a surface integral over the box faces.

    Writing the integrand as ``f(r) = div((y - x) F(r) / r^3)`` with
    ``F' = f r^2`` turns the volume integral into
    ``sum_faces int F(r) (y - x).n / r^3 dA``, which is smooth whenever ``x``
    is not on a face. Valid for ``x`` inside or outside the box.
    """
    x, lo, hi = (np.asarray(v, dtype=float) for v in (x, lo, hi))
    total = 0j
    for ax in range(3):
        o1, o2 = [i for i in range(3) if i != ax]
        for val, nrm in ((lo[ax], -1.0), (hi[ax], 1.0)):
            def f(v, u, part):
                y = np.empty(3)
                y[ax], y[o1], y[o2] = val, u, v
                d = y - x
                r = np.sqrt(d @ d)
                z = _radial_antiderivative(k0, r) * nrm * d[ax] / r**3
                return z.real if part == 0 else z.imag

            re = integrate.dblquad(f, lo[o1], hi[o1], lo[o2], hi[o2], args=(0,), epsabs=1e-14, epsrel=rel)[0]
            im = integrate.dblquad(f, lo[o1], hi[o1], lo[o2], hi[o2], args=(1,), epsabs=1e-14, epsrel=rel)[0]
            total += re + 1j * im
    return total


def monte_carlo_voxel_integral(k0, x, lo, hi, samples=10**6, seed=0):
    """Plain Monte-Carlo estimate and its standard error (complex, componentwise).

    ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    vol = float(np.prod(hi - lo))
    y = lo + (hi - lo) * rng.random((samples, 3))
    r = np.linalg.norm(y - np.asarray(x, dtype=float), axis=1)
    g = np.exp(1j * k0 * r) / (FOUR_PI * r) * vol
    se = (np.std(g.real) + 1j * np.std(g.imag)) / np.sqrt(samples)
    return g.mean(), se


def cube_center_static(levels=(16, 32, 64)):
    """``int_{[-1/2, 1/2]^3} dy / (4 pi |y|)`` by dyadic midpoint sums with the core excluded.

    On a uniform ``m^3`` subdivision (``m`` even) the midpoint rule is summed
    over every subcell except the ``2^3`` block around the origin. That block
    is a cube of edge ``s = 2/m`` whose integral is exactly ``s^2`` times the
    unit-cube value, so ``I = outer + s^2 I``. Two Richardson steps in
    ``1/m^2`` remove the leading midpoint errors.
    """
    vals = []
    for m in levels:
        if m % 2:
            raise ValueError("levels must be even")
        c = (np.arange(m) + 0.5) / m - 0.5
        X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
        r = np.sqrt(X * X + Y * Y + Z * Z)
        keep = np.maximum.reduce([np.abs(X), np.abs(Y), np.abs(Z)]) > 1.0 / m
        outer = np.sum(1.0 / r[keep]) / m**3
        vals.append(outer / (1.0 - (2.0 / m) ** 2) / FOUR_PI)
    v = np.asarray(vals)
    r1 = (4.0 * v[1:] - v[:-1]) / 3.0
    r2 = (16.0 * r1[1:] - r1[:-1]) / 15.0
    return float(r2[-1])


def neumann_series(A, u0, tail_tol=1e-9, max_terms=500):
    """``u = sum_m A^m u0`` truncated once the latest term is below ``tail_tol`` relative."""
    if np.linalg.norm(A, 1) >= 0.5:
        raise ValueError("Neumann oracle requires ||A||_1 < 0.5")
    term = np.array(u0, dtype=complex)
    total = term.copy()
    for _ in range(max_terms):
        term = A @ term
        total += term
        if np.linalg.norm(term) < tail_tol * np.linalg.norm(total):
            return total
    raise RuntimeError("Neumann series did not converge")


def gram_offdiag_rowsum(shifts, k0):
    """Brute-force ``max_I sum_{I' != I} |sin(k0 r)/r|`` by explicit loops."""
    best = 0.0
    for i, ri in enumerate(shifts):
        s = 0.0
        for j, rj in enumerate(shifts):
            if i == j:
                continue
            r = float(np.linalg.norm(np.subtract(ri, rj)))
            s += abs(np.sin(k0 * r) / r)
        best = max(best, s)
    return best
