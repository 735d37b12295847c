"""Shared fixtures for building small inverse problems."""
import numpy as np

from voxinv.forward import RefractiveField
from voxinv.geometry import Grid
from voxinv.measurement import ReceiverArray, build_receivers, place_source, synthesize

K0 = 40.0
EDGE = 0.15


def random_truth(n, rng, k0=K0, lo=1.1, hi=2.0):
    """Piecewise-constant field with ``|k / k0|`` uniform in ``[lo, hi]`` and small losses."""
    g = Grid.cube(EDGE, n)
    mag = k0 * rng.uniform(lo, hi, g.size)
    k = mag * np.exp(1j * rng.uniform(0.0, 0.05, g.size))
    return RefractiveField(g, k)


def square_receivers(grid, d_r=0.005, factor=2):
    """``factor * N`` receivers: ``factor * n3`` xy-planes of ``n1 x n2`` points."""
    n1, n2, n3 = grid.n
    return build_receivers(grid.box, "xy", d_r, n_planes=factor * n3, plane_gap=0.004,
                           per_plane=(n1, n2), margin=0.0)


def three_face_receivers(grid, d_r=0.005):
    """``2 N`` receivers: ``2 n3`` lattice planes dealt in turn to the +z, +y and +x faces.

    Viewing the box from three sides keeps the first-kind matrix far better
    conditioned than the same number of planes stacked over one face.
    """
    n1, n2, n3 = grid.n
    planes = 2 * n3
    counts = [planes // 3 + (i < planes % 3) for i in range(3)]
    lattices = ((n1, n2), (n1, n3), (n2, n3))
    blocks = [build_receivers(grid.box, ax, d_r, n_planes=c, plane_gap=0.004, per_plane=pp, margin=0.0)
              for ax, c, pp in zip(("xy", "xz", "yz"), counts, lattices) if c]
    return ReceiverArray.stack(blocks)


def crime_data(truth, k0=K0, noise=None, face="+z", d_r=0.005, layout=square_receivers):
    src = place_source(truth.grid.box, face, 0.003)
    rec = layout(truth.grid, d_r)
    return synthesize(truth, k0, src, rec, noise=noise)
