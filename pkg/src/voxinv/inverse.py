"""Two-step reconstruction of a voxel-constant wavenumber from exterior data.

Step one solves the first-kind system ``B J = u_s`` for the current
``J = (k^2 - k0^2) u`` on the voxels. Step two recovers ``k`` voxel by voxel
from ``J / (k^2 - k0^2) = u0 + int_P G J``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .forward import ComplexVoxelField, RefractiveField
from .geometry import Grid, refine
from .kernels import DEFAULT_QUADRATURE, QuadratureSpec, collocation_kernel_matrix, incident_field, kernel_matrix
from .measurement import MeasurementSet, ReceiverArray


class DegenerateRegularizationError(ValueError):
    """Every singular mode was discarded."""


class InsufficientDataError(ValueError):
    """Too few receivers left to determine the unknowns."""


class NothingToRefine(Exception):
    """No voxel of a reconstruction exceeds the refinement threshold."""


@dataclass(frozen=True)
class RegularizationSpec:
    """How to regularise the first-kind solve.

    ``truncated-svd`` drops singular values below ``svd_rel_cutoff * s_max``;
    ``tikhonov`` minimises ``|B J - u|^2 + tikhonov_lambda |J|^2``.
    """

    method: str = "truncated-svd"
    svd_rel_cutoff: float = 1e-8
    tikhonov_lambda: float = 0.0

    def __post_init__(self):
        if self.method not in ("truncated-svd", "tikhonov"):
            raise ValueError(f"unknown regularization method {self.method!r}")
        if self.method == "truncated-svd" and not 0 < self.svd_rel_cutoff < 1:
            raise ValueError("svd_rel_cutoff must lie in (0, 1)")
        if not self.tikhonov_lambda >= 0:
            raise ValueError("tikhonov_lambda must be >= 0")


@dataclass(frozen=True, eq=False)
class FirstKindSystem:
    B: np.ndarray
    receivers: ReceiverArray
    grid: Grid
    k0: complex
    rhs: Optional[np.ndarray] = None

    def restrict(self, receivers: ReceiverArray) -> "FirstKindSystem":
        """Rows of this system belonging to a subset of its receivers."""
        lookup = {tuple(p): i for i, p in enumerate(self.receivers.positions)}
        try:
            rows = np.array([lookup[tuple(p)] for p in receivers.positions], dtype=int)
        except KeyError:
            raise ValueError("receivers are not a subset of the system's receivers") from None
        return FirstKindSystem(self.B[rows], self.receivers.take(rows), self.grid, self.k0)

    def with_data(self, meas: MeasurementSet) -> "FirstKindSystem":
        if not self.receivers.same_positions(meas.receivers):
            raise ValueError("measurement receivers do not match the system receivers")
        return replace(self, rhs=meas.u_scattered)


@dataclass(frozen=True, eq=False)
class Reconstruction:
    k_rec: RefractiveField
    J_rec: ComplexVoxelField
    mask: np.ndarray
    k0: complex
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.k_rec.grid

    @property
    def masked_count(self) -> int:
        return int(np.count_nonzero(~self.mask))


def assemble_first_kind(grid: Grid, k0, receivers: ReceiverArray,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> FirstKindSystem:
    """``B[i, j] = int_{voxel j} G(r_i, y) dy`` for receivers ``r_i``."""
    if np.any(grid.box.contains(receivers.positions, closed=True)):
        raise ValueError("receivers must lie outside the closed scatterer box")
    return FirstKindSystem(kernel_matrix(k0, receivers.positions, grid, spec), receivers, grid, complex(k0))


def _svd_solve(B, rhs, reg: RegularizationSpec):
    U, s, Vh = np.linalg.svd(B, full_matrices=False)
    coef = U.conj().T @ rhs
    if reg.method == "truncated-svd":
        keep = (s >= reg.svd_rel_cutoff * s[0]) & (s > 0)
        if not np.any(keep):
            raise DegenerateRegularizationError("all singular modes fall below the cutoff")
        filt = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        dropped = int(np.count_nonzero(~keep))
        cond = float(s[0] / s[keep][-1])
    else:
        if not s[0] > 0:
            raise DegenerateRegularizationError("first-kind matrix is identically zero")
        pos = s > 0
        filt = np.where(pos, s / np.where(pos, s * s + reg.tikhonov_lambda, 1.0), 0.0)
        dropped = 0
        cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    return Vh.conj().T @ (filt * coef), s, dropped, cond


def solve_current(system: FirstKindSystem, meas: MeasurementSet, reg: RegularizationSpec = RegularizationSpec()):
    """Regularised least-squares current ``J`` from scattered-field data.

    Returns ``(J_rec, diagnostics)`` with ``cond_B`` (ratio of extreme retained
    singular values), ``dropped_modes`` and the relative data ``residual``.
    """
    if not system.receivers.same_positions(meas.receivers):
        raise ValueError("measurement receivers do not match the system receivers")
    m, n = system.B.shape
    if m < n:
        raise ValueError(f"first-kind system needs at least as many receivers as voxels ({m} < {n})")
    rhs = meas.u_scattered
    J, s, dropped, cond = _svd_solve(system.B, rhs, reg)
    norm = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(system.B @ J - rhs) / norm) if norm > 0 else 0.0
    diag = {"cond_B": cond, "dropped_modes": dropped, "residual": residual}
    return ComplexVoxelField(system.grid, J), diag


def reconstruct_k(J_rec: ComplexVoxelField, k0, source, spec: QuadratureSpec = DEFAULT_QUADRATURE,
                  guard_eps: float = 1e-3) -> Reconstruction:
    """Recover ``k`` from ``J`` via ``k^2 = k0^2 + J / (u0 + int_P G J)`` at voxel centers.

    The principal root is taken, which has ``Im k >= 0`` whenever
    ``Im k^2 >= 0``. Noisy data can push ``Im k^2`` slightly negative; the
    other root would then flip the sign of the refractive index, so instead
    ``Im k`` is clipped to zero and the voxel counted in ``clipped_count``.
    Voxels where the total-field denominator falls below ``guard_eps * |u0|``
    are masked and report ``k0``.
    """
    if not guard_eps > 0:
        raise ValueError("guard_eps must be positive")
    k0 = complex(k0)
    grid = J_rec.grid
    u0 = np.asarray(incident_field(k0, source, grid.centers()), dtype=complex)
    J = J_rec.values
    if np.any(J):
        D = u0 + collocation_kernel_matrix(k0, grid, spec) @ J
    else:
        D = u0.copy()
    mask = np.abs(D) > guard_eps * np.abs(u0)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.sqrt(k0 * k0 + J / np.where(mask, D, 1.0))
    clipped = mask & (k.imag < 0)
    k = np.where(clipped, k.real + 0j, k)
    k = np.where(mask, k, k0)
    diag = {"masked_count": int(np.count_nonzero(~mask)), "clipped_count": int(np.count_nonzero(clipped))}
    return Reconstruction(RefractiveField(grid, k), J_rec, mask, k0, diag)


def invert(system: FirstKindSystem, meas: MeasurementSet, reg: RegularizationSpec = RegularizationSpec(),
           spec: QuadratureSpec = DEFAULT_QUADRATURE, guard_eps: float = 1e-3) -> Reconstruction:
    """Both steps in one call; diagnostics of the two steps are merged."""
    J, diag = solve_current(system, meas, reg)
    rec = reconstruct_k(J, system.k0, meas.source, spec, guard_eps)
    rec.diagnostics.update(diag)
    return rec


# artifact mitigation ---------------------------------------------------------


def _roughness(meas: MeasurementSet, dev: np.ndarray, scale: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Normalised discrete Laplacian of the deviation field on each receiver plane."""
    lat = meas.receivers.lattice
    out = np.zeros(len(meas))
    keyed = {tuple(row): i for i, row in enumerate(lat) if row[0] >= 0}
    for i, (b, p, a, c) in enumerate(lat):
        if b < 0 or not alive[i]:
            continue
        nb = [keyed.get((b, p, a + da, c + dc)) for da, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))]
        nb = [j for j in nb if j is not None and alive[j]]
        if nb:
            out[i] = np.abs(dev[i] - np.mean(dev[nb])) / scale[i]
    return out


def filter_measurements(meas: MeasurementSet, reference: MeasurementSet, max_rel_dev: float, max_rough: float,
                        min_receivers: int = 1) -> MeasurementSet:
    """Drop receivers whose data is not a small, smooth perturbation of ``reference``.

    A receiver is discarded when ``|u - u_ref| / |u_ref| > max_rel_dev`` or when
    the discrete Laplacian of ``u - u_ref`` over its lattice neighbours, scaled
    by ``|u_ref|``, exceeds ``max_rough``. Neighbours already discarded by the
    first test are ignored by the second.
    """
    if not meas.receivers.same_positions(reference.receivers):
        raise ValueError("reference must be sampled on the same receivers")
    dev = meas.u_total - reference.u_total
    scale = np.abs(reference.u_total)
    alive = np.abs(dev) <= max_rel_dev * scale
    rough = _roughness(meas, dev, scale, alive)
    keep = alive & (rough <= max_rough)
    if np.count_nonzero(keep) < min_receivers:
        raise InsufficientDataError(
            f"only {np.count_nonzero(keep)} receivers survive filtering; {min_receivers} required"
        )
    return meas.take(np.flatnonzero(keep))


def _complex_median(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    re = np.where(valid, values.real, np.nan)
    im = np.where(valid, values.imag, np.nan)
    with warnings.catch_warnings():
        # all-NaN columns are masked by the caller
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(re, axis=0) + 1j * np.nanmedian(im, axis=0)


def rotation_fuse(recs: Sequence[Reconstruction]) -> Reconstruction:
    """Voxelwise componentwise median of several reconstructions on one grid.

    Only unmasked inputs vote; a voxel stays trusted when at least half of the
    inputs trust it. Artifacts that move between configurations are outvoted.
    """
    recs = list(recs)
    if len(recs) < 2:
        raise ValueError("fusion needs at least two reconstructions")
    grid = recs[0].grid
    if any(r.grid != grid for r in recs):
        raise ValueError("reconstructions live on different grids")
    k0 = recs[0].k0
    valid = np.stack([r.mask for r in recs])
    votes = valid.sum(axis=0)
    mask = votes * 2 >= len(recs)
    k = _complex_median(np.stack([r.k_rec.values for r in recs]), valid)
    J = _complex_median(np.stack([r.J_rec.values for r in recs]), valid)
    k = np.where(mask, k, k0)
    J = np.where(mask, J, 0.0)
    diag = {"n_inputs": len(recs), "masked_count": int(np.count_nonzero(~mask))}
    return Reconstruction(RefractiveField(grid, k), ComplexVoxelField(grid, J), mask, k0, diag)


def hot_region(rec: Reconstruction, threshold: float) -> List[int]:
    """Linear indices of the bounding block of trusted voxels with ``|k - k0| > threshold |k0|``."""
    hot = rec.mask & (np.abs(rec.k_rec.values - rec.k0) > threshold * abs(rec.k0))
    if not np.any(hot):
        raise NothingToRefine(f"no voxel deviates from k0 by more than {threshold:g} |k0|")
    idx = rec.grid.multi_indices()[hot]
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    block = np.stack(np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij"), -1).reshape(-1, 3)
    return [int(v) for v in np.ravel_multi_index(block.T, rec.grid.n)]


def adaptive_refine(scn, rec: Reconstruction, threshold: float, factor: Optional[int] = None):
    """Scenario restricted to the block of strong deviations, refined ``factor`` times.

    ``scn`` is a scenario configuration. The returned scenario places its
    sources and receivers against the new, smaller box.
    """
    if rec.grid != scn.grid:
        raise ValueError("reconstruction does not live on the scenario grid")
    factor = factor or scn.refine.factor
    new_grid = refine(rec.grid, hot_region(rec, threshold), factor)
    return scn.with_grid(new_grid)


# CSV ------------------------------------------------------------------------

RECON_HEADER = ["i1", "i2", "i3", "re_k", "im_k", "masked"]


def _diag_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "{:.17g}".format(float(v))


def write_reconstruction(rec: Reconstruction, path):
    """Voxel table ``i1,i2,i3,re_k,im_k,masked`` plus a ``.diag`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECON_HEADER)
        for (i1, i2, i3), k, ok in zip(rec.grid.multi_indices(), rec.k_rec.values, rec.mask):
            w.writerow([i1, i2, i3, "{:.17g}".format(k.real), "{:.17g}".format(k.imag), int(not ok)])
    diag = dict(rec.diagnostics)
    diag["masked_count"] = rec.masked_count
    sidecar = path.with_suffix(".diag")
    sidecar.write_text("".join(f"{key} = {_diag_value(v)}\n" for key, v in diag.items()))
    return path, sidecar


def read_reconstruction(path, grid: Grid, k0, J_rec: Optional[ComplexVoxelField] = None) -> Reconstruction:
    path = Path(path)
    k = np.full(grid.size, complex(k0))
    mask = np.ones(grid.size, dtype=bool)
    with path.open(newline="") as fh:
        rows = csv.DictReader(fh)
        if rows.fieldnames != RECON_HEADER:
            raise ValueError(f"{path}: unexpected header {rows.fieldnames}")
        for row in rows:
            lin = grid.index((int(row["i1"]), int(row["i2"]), int(row["i3"]))).linear
            k[lin] = complex(float(row["re_k"]), float(row["im_k"]))
            mask[lin] = row["masked"].strip() == "0"
    diag = {}
    sidecar = path.with_suffix(".diag")
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            key, _, val = line.partition("=")
            if key.strip():
                val = val.strip()
                diag[key.strip()] = int(val) if val.lstrip("-").isdigit() else float(val)
    J = J_rec if J_rec is not None else ComplexVoxelField(grid, np.zeros(grid.size))
    return Reconstruction(RefractiveField(grid, k), J, mask, complex(k0), diag)
