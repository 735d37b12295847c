"""Receiver layouts, source placement and synthetic near-field data."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .forward import DomainError, ForwardSolution, RefractiveField, scattered_field_at, solve_forward
from .geometry import Parallelepiped
from .kernels import DEFAULT_QUADRATURE, QuadratureSpec, incident_field

# axis normal to each receiver plane, and the two in-plane axes
PLANE_AXES = {"xy": (2, (0, 1)), "xz": (1, (0, 2)), "yz": (0, (1, 2))}
FACES = {"-x": (0, -1), "+x": (0, 1), "-y": (1, -1), "+y": (1, 1), "-z": (2, -1), "+z": (2, 1)}


@dataclass(frozen=True)
class ReceiverBlock:
    """Layout parameters of one lattice of receiver planes."""

    plane_axis: str
    planes: Tuple[float, ...]
    per_plane: Tuple[int, int]
    side: int = 1


@dataclass(frozen=True, eq=False)
class ReceiverArray:
    """Receiver positions plus their lattice coordinates.

    ``lattice`` rows are ``(block, plane, i, j)``; rows of -1 mark receivers
    read back without layout information.
    """

    positions: np.ndarray
    lattice: np.ndarray
    blocks: Tuple[ReceiverBlock, ...] = ()

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        lat = np.array(self.lattice, dtype=int).reshape(-1, 4)
        if pos.shape[0] != lat.shape[0]:
            raise ValueError("positions and lattice rows differ in length")
        pos.setflags(write=False)
        lat.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "lattice", lat)

    def __len__(self):
        return self.positions.shape[0]

    def _single(self) -> ReceiverBlock:
        if len(self.blocks) != 1:
            raise AttributeError("receiver array holds several blocks; inspect .blocks")
        return self.blocks[0]

    @property
    def plane_axis(self) -> str:
        return self._single().plane_axis

    @property
    def planes(self) -> Tuple[float, ...]:
        return self._single().planes

    @property
    def per_plane(self) -> Tuple[int, int]:
        return self._single().per_plane

    def take(self, idx) -> "ReceiverArray":
        idx = np.asarray(idx)
        return ReceiverArray(self.positions[idx], self.lattice[idx], self.blocks)

    def same_positions(self, other: "ReceiverArray") -> bool:
        return self.positions.shape == other.positions.shape and np.array_equal(self.positions, other.positions)

    @classmethod
    def stack(cls, arrays: Sequence["ReceiverArray"]) -> "ReceiverArray":
        pos, lat, blocks = [], [], []
        for arr in arrays:
            shifted = arr.lattice.copy()
            shifted[:, 0] = np.where(shifted[:, 0] >= 0, shifted[:, 0] + len(blocks), -1)
            pos.append(arr.positions)
            lat.append(shifted)
            blocks.extend(arr.blocks)
        return cls(np.concatenate(pos), np.concatenate(lat), tuple(blocks))


def build_receivers(box: Parallelepiped, plane_axis: str, d_r: float, n_planes: int = 1, plane_gap: float = 0.0,
                    per_plane=(4, 4), side: int = 1, margin=0.0) -> ReceiverArray:
    """Lattice of receivers on planes parallel to a pair of coordinate axes.

    Planes sit at ``d_r + j * plane_gap`` beyond the face of ``box`` normal to
    the plane, on the positive (``side=1``) or negative (``side=-1``) side.
    Each plane carries ``per_plane[0] x per_plane[1]`` points spanning the face
    extended by ``margin`` (scalar or one value per in-plane axis).
    """
    if plane_axis not in PLANE_AXES:
        raise ValueError(f"plane_axis must be one of {sorted(PLANE_AXES)}, got {plane_axis!r}")
    if not d_r > 0:
        raise ValueError("d_r must be positive")
    if n_planes < 1 or min(per_plane) < 1:
        raise ValueError("need at least one plane and one receiver per lattice axis")
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    normal, (ax1, ax2) = PLANE_AXES[plane_axis]
    m1, m2 = np.broadcast_to(np.asarray(margin, dtype=float), (2,))
    p1, p2 = (int(v) for v in per_plane)

    def span(ax, m, p):
        lo, hi = box.a[ax] - m, box.b[ax] + m
        return np.array([0.5 * (lo + hi)]) if p == 1 else np.linspace(lo, hi, p)

    s1, s2 = span(ax1, m1, p1), span(ax2, m2, p2)
    offsets = tuple(float(d_r + j * plane_gap) for j in range(n_planes))
    face = box.b[normal] if side > 0 else box.a[normal]
    pos, lat = [], []
    for j, off in enumerate(offsets):
        for i1, c1 in enumerate(s1):
            for i2, c2 in enumerate(s2):
                x = np.empty(3)
                x[normal] = face + side * off
                x[ax1], x[ax2] = c1, c2
                pos.append(x)
                lat.append((0, j, i1, i2))
    pos = np.asarray(pos)
    if np.any(box.contains(pos, closed=True)):
        raise DomainError("receiver lattice intersects the scatterer")
    nearest = float(np.min(box.distance(pos)))
    if abs(nearest - d_r) > 1e-12:
        raise ValueError(
            f"no receiver lies over the face (nearest distance {nearest:.6g} != d_r {d_r:.6g}); "
            "use more points per plane or a smaller margin"
        )
    return ReceiverArray(pos, lat, (ReceiverBlock(plane_axis, offsets, (p1, p2), side),))


def place_source(box: Parallelepiped, face: str, d_s: float) -> np.ndarray:
    """Point at distance ``d_s`` from the center of ``face`` along its outward normal."""
    if face not in FACES:
        raise ValueError(f"face must be one of {sorted(FACES)}, got {face!r}")
    if not d_s > 0:
        raise ValueError("d_s must be positive")
    ax, sgn = FACES[face]
    x = box.center.copy()
    x[ax] = (box.b[ax] if sgn > 0 else box.a[ax]) + sgn * d_s
    return x


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative complex Gaussian noise ``u (1 + eps)``.

    ``rel_sigma`` is the standard deviation of each real component of ``eps``.
    """

    rel_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.rel_sigma >= 0:
            raise ValueError("rel_sigma must be >= 0")


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    source: np.ndarray
    k0: complex
    receivers: ReceiverArray
    u_total: np.ndarray
    u_incident: np.ndarray
    u_scattered: np.ndarray
    noise: Optional[NoiseSpec] = None

    def __post_init__(self):
        m = len(self.receivers)
        arrs = []
        for name in ("u_total", "u_incident", "u_scattered"):
            a = np.array(getattr(self, name), dtype=complex).reshape(-1)
            if a.size != m:
                raise ValueError(f"{name} has {a.size} samples for {m} receivers")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrs.append(a)
        gap = np.abs(arrs[2] - (arrs[0] - arrs[1]))
        if np.any(gap > 1e-12 * np.maximum(1.0, np.abs(arrs[0]))):
            raise ValueError("u_scattered must equal u_total - u_incident")
        src = np.array(self.source, dtype=float).reshape(3)
        if np.any(np.all(self.receivers.positions == src, axis=1)):
            raise ValueError("source coincides with a receiver")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "k0", complex(self.k0))

    def __len__(self):
        return len(self.receivers)

    def take(self, idx) -> "MeasurementSet":
        idx = np.asarray(idx)
        return replace(self, receivers=self.receivers.take(idx), u_total=self.u_total[idx],
                       u_incident=self.u_incident[idx], u_scattered=self.u_scattered[idx])

    @classmethod
    def from_total(cls, source, k0, receivers: ReceiverArray, u_total, noise=None) -> "MeasurementSet":
        u_inc = np.asarray(incident_field(k0, source, receivers.positions), dtype=complex).reshape(-1)
        u_total = np.asarray(u_total, dtype=complex)
        return cls(source, k0, receivers, u_total, u_inc, u_total - u_inc, noise)


def synthesize(field: RefractiveField, k0, source, receivers: ReceiverArray,
               spec: QuadratureSpec = DEFAULT_QUADRATURE, noise: Optional[NoiseSpec] = None,
               solution: Optional[ForwardSolution] = None) -> MeasurementSet:
    """Simulated total-field samples at ``receivers`` for a point source at ``source``.

    Pass ``solution`` to reuse an existing forward solve for this source.
    """
    if solution is None:
        solution = solve_forward(field, k0, source, spec)
    u_s = np.asarray(scattered_field_at(solution.u_in, field, k0, receivers.positions, spec))
    u_inc = np.asarray(incident_field(k0, source, receivers.positions), dtype=complex).reshape(-1)
    u_total = u_inc + u_s
    if noise is not None:
        rng = np.random.default_rng(noise.seed)
        m = len(receivers)
        eps = rng.normal(0.0, noise.rel_sigma, m) + 1j * rng.normal(0.0, noise.rel_sigma, m)
        u_total = u_total * (1.0 + eps)
    return MeasurementSet(source, k0, receivers, u_total, u_inc, u_total - u_inc, noise)


def corrupt_outliers(meas: MeasurementSet, fraction: float, scale: float = 10.0, seed: int = 0):
    """Multiply the total field at a random ``fraction`` of receivers by ``scale``.

    Returns the corrupted set and the sorted indices of the altered receivers.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    m = len(meas)
    count = int(round(fraction * m))
    idx = np.sort(np.random.default_rng(seed).choice(m, count, replace=False))
    u = meas.u_total.copy()
    u[idx] *= scale
    return replace(meas, u_total=u, u_scattered=u - meas.u_incident), idx


# CSV ------------------------------------------------------------------------

_FMT = "{:.17g}"
MEAS_HEADER = ["rx", "ry", "rz", "re_total", "im_total", "re_inc", "im_inc"]


def _fmt_complex(z: complex) -> str:
    return f"{_FMT.format(z.real)}{'+' if z.imag >= 0 else '-'}{_FMT.format(abs(z.imag))}j"


def write_measurements(meas: MeasurementSet, path) -> Tuple[Path, Path]:
    """Write the receiver table and its ``.meta`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEAS_HEADER)
        for p, ut, ui in zip(meas.receivers.positions, meas.u_total, meas.u_incident):
            w.writerow([_FMT.format(v) for v in (p[0], p[1], p[2], ut.real, ut.imag, ui.real, ui.imag)])
    meta = path.with_suffix(".meta")
    lines = [
        f"k0 = {_fmt_complex(meas.k0)}",
        "source = " + " ".join(_FMT.format(v) for v in meas.source),
        f"noise.rel_sigma = {_FMT.format(meas.noise.rel_sigma) if meas.noise else 'none'}",
        f"noise.seed = {meas.noise.seed if meas.noise else 'none'}",
    ]
    meta.write_text("\n".join(lines) + "\n")
    return path, meta


def read_measurements(path, receivers: Optional[ReceiverArray] = None) -> MeasurementSet:
    """Read a measurement table and its sidecar.

    When ``receivers`` is given, the file positions must match it exactly and
    its lattice information is attached.
    """
    path = Path(path)
    meta = {}
    for line in path.with_suffix(".meta").read_text().splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            meta[key.strip()] = val.strip()
    with path.open(newline="") as fh:
        rows = csv.DictReader(fh)
        if rows.fieldnames != MEAS_HEADER:
            raise ValueError(f"{path}: unexpected header {rows.fieldnames}")
        data = np.array([[float(r[c]) for c in MEAS_HEADER] for r in rows]).reshape(-1, 7)
    pos = data[:, :3]
    if receivers is None:
        receivers = ReceiverArray(pos, -np.ones((pos.shape[0], 4), dtype=int))
    elif not np.array_equal(receivers.positions, pos):
        raise ValueError(f"{path}: receiver positions differ from the expected layout")
    noise = None
    if meta.get("noise.rel_sigma", "none") != "none":
        noise = NoiseSpec(float(meta["noise.rel_sigma"]), int(meta["noise.seed"]))
    source = np.array([float(v) for v in meta["source"].split()])
    k0 = complex(meta["k0"])
    u_total = data[:, 3] + 1j * data[:, 4]
    u_inc = data[:, 5] + 1j * data[:, 6]
    return MeasurementSet(source, k0, receivers, u_total, u_inc, u_total - u_inc, noise)
