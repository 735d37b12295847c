"""Scenario files: line-oriented ``key = value`` text with dotted keys.

Grammar
-------
* One assignment per line, ``key = value``. ``#`` starts a comment.
* Vectors are whitespace-separated numbers (``box.b = 0.15 0.15 0.15``).
* Complex values use Python literal syntax (``60+3j``).
* Lists of sources, receiver blocks, inclusions and configurations use a
  numeric or word label as the second key component
  (``source.1.face = +z``, ``receivers.top.d_r = 0.005``).

Recognised keys
---------------
name, k0, box.a, box.b, grid.n, guard_eps, output_dir, workers
truth.n, truth.inclusion.<id>.{lo, hi, k}
source.<id>.{face, d_s} or source.<id>.position
receivers.<id>.{plane_axis, side, d_r, n_planes, plane_gap, per_plane, margin}
noise.{rel_sigma, seed}
outliers.{fraction, scale, seed}
regularization.{method, svd_rel_cutoff, tikhonov_lambda}
filter.{enabled, order, max_rel_dev, max_rough}
fusion.enabled
refine.{threshold, factor}
quadrature.{smooth_order, near_split, tol}
config.<name>.{source, receivers}

Without ``config.*`` entries every source is paired with every receiver
block, one configuration per pair.

``truth.n`` sets the voxel counts of the ground-truth model on the original
box (default: ``grid.n``, i.e. an inverse crime). It fixes an absolute
resolution, so after a refinement the truth is rasterised on the new box at
the same voxel size. ``regularization.svd_rel_cutoff`` defaults to ``1e-8``,
or ``1e-2`` when the scenario adds noise or outliers. ``per_plane = auto``
(the default) sizes each lattice from the grid so that every block alone
gives at least ``2 N`` receivers.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import Grid, Parallelepiped
from .inverse import RegularizationSpec
from .kernels import QuadratureSpec
from .measurement import FACES, PLANE_AXES, NoiseSpec, ReceiverArray, build_receivers, place_source


class ConfigError(ValueError):
    """Invalid scenario file, reported with the offending line and key."""

    def __init__(self, message, key=None, line=None, source=None):
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")
        self.key, self.line = key, line


@dataclass(frozen=True)
class Inclusion:
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]
    k: complex


@dataclass(frozen=True)
class SourceSpec:
    face: Optional[str] = None
    d_s: Optional[float] = None
    position: Optional[Tuple[float, float, float]] = None

    def point(self, box: Parallelepiped) -> np.ndarray:
        if self.position is not None:
            return np.asarray(self.position, dtype=float)
        return place_source(box, self.face, self.d_s)


@dataclass(frozen=True)
class ReceiverSpec:
    plane_axis: str = "xy"
    d_r: float = 0.005
    side: int = 1
    n_planes: int = 1
    plane_gap: float = 0.0
    # None: sized from the grid, see lattice_shape
    per_plane: Optional[Tuple[int, int]] = None
    # None means one voxel width on each in-plane axis
    margin: Optional[float] = None

    def lattice_shape(self, grid: Grid) -> Tuple[int, int]:
        if self.per_plane is not None:
            return tuple(self.per_plane)
        normal, (ax1, ax2) = PLANE_AXES[self.plane_axis]
        s = int(np.ceil(np.sqrt(2.0 * grid.n[normal] / self.n_planes)))
        return grid.n[ax1] * s, grid.n[ax2] * s

    def build(self, grid: Grid) -> ReceiverArray:
        _, (ax1, ax2) = PLANE_AXES[self.plane_axis]
        margin = (grid.h[ax1], grid.h[ax2]) if self.margin is None else self.margin
        return build_receivers(grid.box, self.plane_axis, self.d_r, self.n_planes, self.plane_gap,
                               self.lattice_shape(grid), self.side, margin)


@dataclass(frozen=True)
class FilterSpec:
    enabled: bool = False
    order: str = "before"
    max_rel_dev: float = 0.5
    max_rough: float = 1.0


@dataclass(frozen=True)
class OutlierSpec:
    fraction: float = 0.0
    scale: float = 10.0
    seed: int = 0


@dataclass(frozen=True)
class RefineSpec:
    threshold: float = 0.1
    factor: int = 2


@dataclass(frozen=True)
class RunConfig:
    name: str
    source: str
    receivers: Tuple[str, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    box: Parallelepiped
    n: Tuple[int, int, int]
    k0: complex
    sources: Dict[str, SourceSpec]
    receivers: Dict[str, ReceiverSpec]
    inclusions: Tuple[Inclusion, ...] = ()
    # voxel size of the ground-truth model; None means the inversion grid
    truth_h: Optional[Tuple[float, float, float]] = None
    noise: Optional[NoiseSpec] = None
    outliers: Optional[OutlierSpec] = None
    regularization: RegularizationSpec = RegularizationSpec()
    filter: FilterSpec = FilterSpec()
    fusion: bool = True
    refine: RefineSpec = RefineSpec()
    quadrature: QuadratureSpec = QuadratureSpec()
    guard_eps: float = 1e-3
    output_dir: str = "out"
    name: str = "scenario"
    runs: Tuple[RunConfig, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("at least one source is required", key="source")
        if not self.receivers:
            raise ConfigError("at least one receiver block is required", key="receivers")
        k0 = complex(self.k0)
        if not (k0.real > 0 and k0.imag >= 0):
            raise ConfigError("k0 needs Re k0 > 0 and Im k0 >= 0", key="k0")
        for j, inc in enumerate(self.inclusions):
            if not abs(inc.k) > abs(k0):
                raise ConfigError(f"inclusion wavenumber |k| = {abs(inc.k):.6g} must exceed |k0|",
                                  key=f"truth.inclusion[{j}].k")
            if complex(inc.k).imag < 0:
                raise ConfigError("inclusion wavenumber needs Im k >= 0", key=f"truth.inclusion[{j}].k")
        if not self.runs:
            runs = tuple(RunConfig(f"{s}-{r}" if len(self.sources) * len(self.receivers) > 1 else "main", s, (r,))
                         for s in self.sources for r in self.receivers)
            object.__setattr__(self, "runs", runs)
        for run in self.runs:
            if run.source not in self.sources:
                raise ConfigError(f"unknown source {run.source!r}", key=f"config.{run.name}.source")
            for r in run.receivers:
                if r not in self.receivers:
                    raise ConfigError(f"unknown receiver block {r!r}", key=f"config.{run.name}.receivers")

    @property
    def grid(self) -> Grid:
        return Grid(self.box, self.n)

    @property
    def truth_grid(self) -> Grid:
        if self.truth_h is None:
            return self.grid
        counts = self.box.size / np.asarray(self.truth_h)
        n = np.rint(counts).astype(int)
        if np.any(np.abs(counts - n) > 1e-6 * counts) or np.any(n < 1):
            raise ConfigError(f"box {self.box} is not a whole number of truth voxels", key="truth.n")
        return Grid(self.box, tuple(int(v) for v in n))

    def with_grid(self, grid: Grid) -> "ScenarioConfig":
        """Same experiment on a new inversion grid; receivers follow the new box."""
        return replace(self, box=grid.box, n=grid.n)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        if self.noise is None:
            return self
        return replace(self, noise=replace(self.noise, seed=int(seed)))

    def with_output_dir(self, path) -> "ScenarioConfig":
        return replace(self, output_dir=str(path))

    def receiver_array(self, run: RunConfig, grid: Optional[Grid] = None) -> ReceiverArray:
        g = self.grid if grid is None else grid
        return ReceiverArray.stack([self.receivers[r].build(g) for r in run.receivers])

    def source_point(self, run: RunConfig) -> np.ndarray:
        return self.sources[run.source].point(self.box)

    def dumps(self) -> str:
        """Serialise back to the file format (round-trips through :func:`loads`)."""
        v3 = lambda v: " ".join(repr(float(x)) for x in v)
        lines = [
            f"name = {self.name}",
            f"k0 = {_fmt_complex(self.k0)}",
            f"box.a = {v3(self.box.a)}",
            f"box.b = {v3(self.box.b)}",
            f"grid.n = {' '.join(str(v) for v in self.n)}",
        ]
        if self.truth_h is not None:
            # counts on the current box; equal to the file's truth.n before any refinement
            lines.append(f"truth.n = {' '.join(str(v) for v in self.truth_grid.n)}")
        for j, inc in enumerate(self.inclusions, 1):
            lines += [f"truth.inclusion.{j}.lo = {v3(inc.lo)}", f"truth.inclusion.{j}.hi = {v3(inc.hi)}",
                      f"truth.inclusion.{j}.k = {_fmt_complex(inc.k)}"]
        for sid, s in self.sources.items():
            if s.position is not None:
                lines.append(f"source.{sid}.position = {v3(s.position)}")
            else:
                lines += [f"source.{sid}.face = {s.face}", f"source.{sid}.d_s = {s.d_s!r}"]
        for rid, r in self.receivers.items():
            p = f"receivers.{rid}."
            lines += [p + f"plane_axis = {r.plane_axis}", p + f"side = {r.side:+d}", p + f"d_r = {r.d_r!r}",
                      p + f"n_planes = {r.n_planes}", p + f"plane_gap = {r.plane_gap!r}",
                      p + ("per_plane = auto" if r.per_plane is None else
                           f"per_plane = {r.per_plane[0]} {r.per_plane[1]}")]
            if r.margin is not None:
                lines.append(p + f"margin = {r.margin!r}")
        if self.noise is not None:
            lines += [f"noise.rel_sigma = {self.noise.rel_sigma!r}", f"noise.seed = {self.noise.seed}"]
        if self.outliers is not None:
            o = self.outliers
            lines += [f"outliers.fraction = {o.fraction!r}", f"outliers.scale = {o.scale!r}", f"outliers.seed = {o.seed}"]
        reg = self.regularization
        lines += [f"regularization.method = {reg.method}", f"regularization.svd_rel_cutoff = {reg.svd_rel_cutoff!r}",
                  f"regularization.tikhonov_lambda = {reg.tikhonov_lambda!r}"]
        f = self.filter
        lines += [f"filter.enabled = {str(f.enabled).lower()}", f"filter.order = {f.order}",
                  f"filter.max_rel_dev = {f.max_rel_dev!r}", f"filter.max_rough = {f.max_rough!r}",
                  f"fusion.enabled = {str(self.fusion).lower()}",
                  f"refine.threshold = {self.refine.threshold!r}", f"refine.factor = {self.refine.factor}"]
        q = self.quadrature
        lines += [f"quadrature.smooth_order = {q.smooth_order}", f"quadrature.near_split = {q.near_split}",
                  f"quadrature.tol = {q.tol!r}", f"guard_eps = {self.guard_eps!r}",
                  f"output_dir = {self.output_dir}", f"workers = {self.workers}"]
        for run in self.runs:
            lines += [f"config.{run.name}.source = {run.source}",
                      f"config.{run.name}.receivers = {' '.join(run.receivers)}"]
        return "\n".join(lines) + "\n"


def _fmt_complex(z) -> str:
    z = complex(z)
    return repr(z.real) if z.imag == 0 else repr(z).strip("()")


# parsing ------------------------------------------------------------------------


class _Entries:
    """Parsed assignments with the line each came from; tracks which were used."""

    def __init__(self, items: Dict[str, Tuple[str, int]], source):
        self.items = items
        self.source = source
        self.used = set()

    def err(self, key, msg):
        line = self.items[key][1] if key in self.items else None
        return ConfigError(msg, key=key, line=line, source=self.source)

    def has(self, key):
        return key in self.items

    def raw(self, key, default=None, required=False):
        if key not in self.items:
            if required:
                raise ConfigError("missing required key", key=key, source=self.source)
            return default
        self.used.add(key)
        return self.items[key][0]

    def get(self, key, conv, default=None, required=False):
        text = self.raw(key, None, required)
        if text is None:
            return default
        try:
            return conv(text)
        except (ValueError, TypeError) as exc:
            raise self.err(key, f"cannot parse {text!r}: {exc}") from None

    def labels(self, prefix):
        """Distinct second components of keys ``prefix.<label>.*`` in file order."""
        seen = []
        for key in self.items:
            parts = key.split(".")
            if len(parts) >= 3 and parts[0] == prefix and parts[1] not in seen:
                seen.append(parts[1])
        return seen


def _floats(n):
    def conv(text):
        vals = [float(t) for t in text.split()]
        if len(vals) != n:
            raise ValueError(f"expected {n} numbers")
        return tuple(vals)
    return conv


def _ints(n):
    def conv(text):
        vals = [int(t) for t in text.split()]
        if len(vals) != n:
            raise ValueError(f"expected {n} integers")
        return tuple(vals)
    return conv


def _lattice(text):
    if text.strip() == "auto":
        return None
    return _ints(2)(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true/false")


def _complex(text):
    return complex(text.replace(" ", ""))


def _side(text):
    v = int(text)
    if v not in (1, -1):
        raise ValueError("side must be +1 or -1")
    return v


def _choice(options):
    def conv(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {sorted(options)}")
        return t
    return conv


def _tokenize(text: str, source=None) -> Dict[str, Tuple[str, int]]:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", line=lineno, source=source)
        key, value = (s.strip() for s in body.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError("malformed key", key=key, line=lineno, source=source)
        if key in items:
            raise ConfigError(f"duplicate key (first set on line {items[key][1]})", key=key, line=lineno,
                              source=source)
        items[key] = (value, lineno)
    return items


def loads(text: str, source=None) -> ScenarioConfig:
    e = _Entries(_tokenize(text, source), source)
    a = e.get("box.a", _floats(3), (0.0, 0.0, 0.0))
    b = e.get("box.b", _floats(3), required=True)
    try:
        box = Parallelepiped(a, b)
    except ValueError as exc:
        raise e.err("box.b", str(exc)) from None
    n = e.get("grid.n", _ints(3), required=True)
    if min(n) < 1:
        raise e.err("grid.n", "voxel counts must be positive")
    k0 = e.get("k0", _complex, required=True)

    inclusions = []
    for lab in _sublabels(e, "truth.inclusion"):
        p = f"truth.inclusion.{lab}."
        inc = Inclusion(e.get(p + "lo", _floats(3), required=True), e.get(p + "hi", _floats(3), required=True),
                        e.get(p + "k", _complex, required=True))
        if not abs(inc.k) > abs(k0) or inc.k.imag < 0:
            raise e.err(p + "k", "inclusion wavenumber needs |k| > |k0| and Im k >= 0")
        if not all(l < h for l, h in zip(inc.lo, inc.hi)):
            raise e.err(p + "hi", "inclusion box needs lo < hi on every axis")
        inclusions.append(inc)
    truth_h = None
    if e.has("truth.n"):
        tn = e.get("truth.n", _ints(3))
        if min(tn) < 1 or any(t % g for t, g in zip(tn, n)):
            raise e.err("truth.n", "truth voxel counts must be positive multiples of grid.n")
        truth_h = tuple(float(v) for v in box.size / np.asarray(tn))

    sources = {}
    for lab in e.labels("source"):
        p = f"source.{lab}."
        if e.has(p + "position"):
            pos = e.get(p + "position", _floats(3))
            if box.contains(pos, closed=True):
                raise e.err(p + "position", "source must lie outside the closed box")
            sources[lab] = SourceSpec(position=pos)
        else:
            face = e.get(p + "face", _choice(FACES), required=True)
            d_s = e.get(p + "d_s", float, required=True)
            if not d_s > 0:
                raise e.err(p + "d_s", "d_s must be positive")
            sources[lab] = SourceSpec(face=face, d_s=d_s)

    receivers = {}
    for lab in e.labels("receivers"):
        p = f"receivers.{lab}."
        spec = ReceiverSpec(
            plane_axis=e.get(p + "plane_axis", _choice(PLANE_AXES), "xy"),
            d_r=e.get(p + "d_r", float, required=True),
            side=e.get(p + "side", _side, 1),
            n_planes=e.get(p + "n_planes", int, 1),
            plane_gap=e.get(p + "plane_gap", float, 0.0),
            per_plane=e.get(p + "per_plane", _lattice, None),
            margin=e.get(p + "margin", float, None),
        )
        if not spec.d_r > 0:
            raise e.err(p + "d_r", "d_r must be positive")
        if spec.n_planes < 1 or (spec.per_plane is not None and min(spec.per_plane) < 1):
            raise e.err(p + "per_plane", "need at least one plane and one receiver per lattice axis")
        if spec.n_planes > 1 and not spec.plane_gap > 0:
            raise e.err(p + "plane_gap", "several planes need a positive plane_gap")
        receivers[lab] = spec

    noise = None
    if e.has("noise.rel_sigma") or e.has("noise.seed"):
        sigma = e.get("noise.rel_sigma", float, 0.0)
        if not sigma >= 0:
            raise e.err("noise.rel_sigma", "must be >= 0")
        noise = NoiseSpec(sigma, e.get("noise.seed", int, 0))

    outliers = None
    if any(e.has(f"outliers.{k}") for k in ("fraction", "scale", "seed")):
        outliers = OutlierSpec(e.get("outliers.fraction", float, 0.0), e.get("outliers.scale", float, 10.0),
                               e.get("outliers.seed", int, 0))
        if not 0 <= outliers.fraction <= 1:
            raise e.err("outliers.fraction", "must lie in [0, 1]")

    noisy = (noise is not None and noise.rel_sigma > 0) or (outliers is not None and outliers.fraction > 0)
    try:
        reg = RegularizationSpec(
            method=e.get("regularization.method", _choice({"truncated-svd", "tikhonov"}), "truncated-svd"),
            svd_rel_cutoff=e.get("regularization.svd_rel_cutoff", float, 1e-2 if noisy else 1e-8),
            tikhonov_lambda=e.get("regularization.tikhonov_lambda", float, 0.0),
        )
    except ValueError as exc:
        raise e.err("regularization.svd_rel_cutoff", str(exc)) from None

    filt = FilterSpec(
        enabled=e.get("filter.enabled", _bool, False),
        order=e.get("filter.order", _choice({"before", "after"}), "before"),
        max_rel_dev=e.get("filter.max_rel_dev", float, 0.5),
        max_rough=e.get("filter.max_rough", float, 1.0),
    )
    refine = RefineSpec(e.get("refine.threshold", float, 0.1), e.get("refine.factor", int, 2))
    if refine.factor < 1 or not refine.threshold >= 0:
        raise e.err("refine.factor", "refine needs factor >= 1 and threshold >= 0")
    try:
        quad = QuadratureSpec(e.get("quadrature.smooth_order", int, 4), e.get("quadrature.near_split", int, 3),
                              e.get("quadrature.tol", float, 1e-8))
    except ValueError as exc:
        raise e.err("quadrature.tol", str(exc)) from None
    guard_eps = e.get("guard_eps", float, 1e-3)
    if not guard_eps > 0:
        raise e.err("guard_eps", "must be positive")

    runs = []
    for lab in e.labels("config"):
        p = f"config.{lab}."
        runs.append(RunConfig(lab, e.get(p + "source", str.strip, required=True),
                              tuple(e.get(p + "receivers", str.split, required=True))))

    workers = e.get("workers", int, 1)
    if workers < 1:
        raise e.err("workers", "must be >= 1")
    kwargs = dict(
        box=box, n=n, k0=k0, sources=sources, receivers=receivers, inclusions=tuple(inclusions),
        truth_h=truth_h, noise=noise, outliers=outliers, regularization=reg, filter=filt,
        fusion=e.get("fusion.enabled", _bool, True), refine=refine, quadrature=quad, guard_eps=guard_eps,
        output_dir=e.get("output_dir", str, "out"), name=e.get("name", str, "scenario"), runs=tuple(runs),
        workers=workers,
    )
    unknown = [k for k in e.items if k not in e.used]
    if unknown:
        raise e.err(unknown[0], "unknown key")
    try:
        return ScenarioConfig(**kwargs)
    except ConfigError as exc:
        key = exc.key
        if key and key in e.items:
            raise e.err(key, str(exc).split(": ", 1)[-1]) from None
        raise ConfigError(str(exc), source=source) from None


def _sublabels(e: _Entries, prefix: str) -> List[str]:
    depth = prefix.count(".") + 1
    seen = []
    for key in e.items:
        parts = key.split(".")
        if len(parts) > depth + 1 and ".".join(parts[:depth]) == prefix and parts[depth] not in seen:
            seen.append(parts[depth])
    return seen


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}", source=path) from None
    return loads(text, source=path)


def bundled_names() -> List[str]:
    """Names of the scenario files shipped with the package."""
    root = resources.files("voxinv") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled scenario (``sp_clean`` or ``sp_clean.cfg``)."""
    stem = name[:-4] if name.endswith(".cfg") else name
    if stem not in bundled_names():
        raise ConfigError(f"no bundled scenario named {name!r}; available: {', '.join(bundled_names())}")
    return Path(str(resources.files("voxinv") / "scenarios" / f"{stem}.cfg"))
