import numpy as np
import pytest

from voxinv.config import ConfigError, bundled_names, bundled_path, load, loads

BASE = """
name = t
k0 = 40
box.a = 0 0 0
box.b = 0.15 0.15 0.15
grid.n = 4 4 4
source.top.face = +z
source.top.d_s = 0.003
receivers.near.plane_axis = xy
receivers.near.d_r = 0.005
"""


def test_bundled_scenarios_parse():
    names = bundled_names()
    assert {"sp_clean", "sp_far_noisy", "sp_near_noisy", "sp_near_noisy_xz", "sp_rotation", "sp_filter",
            "sp_refine"} <= set(names)
    for name in names:
        cfg = load(bundled_path(name))
        assert cfg.name == name
        assert len(cfg.runs) >= 1
        assert loads(cfg.dumps()) == cfg


def test_unknown_bundled_name():
    with pytest.raises(ConfigError):
        bundled_path("nope")


def test_defaults():
    cfg = loads(BASE)
    assert cfg.k0 == 40 and cfg.grid.n == (4, 4, 4)
    assert cfg.truth_grid == cfg.grid
    assert cfg.noise is None and cfg.outliers is None
    assert cfg.regularization.method == "truncated-svd" and cfg.regularization.svd_rel_cutoff == 1e-8
    assert cfg.guard_eps == 1e-3 and cfg.filter.order == "before" and not cfg.filter.enabled
    assert [r.name for r in cfg.runs] == ["main"]
    np.testing.assert_allclose(cfg.source_point(cfg.runs[0]), [0.075, 0.075, 0.153])


def test_cutoff_default_follows_noise():
    cut = lambda extra: loads(BASE + extra).regularization.svd_rel_cutoff
    assert cut("noise.rel_sigma = 0.01\n") == 1e-2
    assert cut("noise.rel_sigma = 0\n") == 1e-8
    assert cut("outliers.fraction = 0.05\n") == 1e-2
    assert cut("noise.rel_sigma = 0.01\nregularization.svd_rel_cutoff = 1e-3\n") == 1e-3


def test_auto_lattice_gives_twice_the_voxels():
    cfg = loads(BASE + "receivers.near.n_planes = 2\nreceivers.near.plane_gap = 0.01\n")
    r = cfg.receiver_array(cfg.runs[0])
    assert len(r) >= 2 * cfg.grid.size
    assert abs(np.min(cfg.grid.box.distance(r.positions)) - 0.005) <= 1e-12


def test_product_pairing_and_explicit_configs():
    text = BASE + "source.left.face = -x\nsource.left.d_s = 0.003\nreceivers.side.plane_axis = xz\nreceivers.side.d_r = 0.05\n"
    cfg = loads(text)
    assert [r.name for r in cfg.runs] == ["top-near", "top-side", "left-near", "left-side"]
    cfg = loads(text + "config.a.source = left\nconfig.a.receivers = near side\n")
    assert [(r.name, r.source, tuple(r.receivers)) for r in cfg.runs] == [("a", "left", ("near", "side"))]


def test_overrides():
    cfg = loads(BASE + "noise.rel_sigma = 0.01\nnoise.seed = 3\n")
    assert cfg.with_seed(9).noise.seed == 9
    assert str(cfg.with_output_dir("/tmp/x").output_dir) == "/tmp/x"


def test_truth_resolution():
    cfg = loads(BASE + "truth.n = 8 8 8\n")
    assert cfg.truth_grid.n == (8, 8, 8)
    g = cfg.grid
    small = cfg.with_grid(type(g)(type(g.box)((0, 0, 0), (0.075, 0.075, 0.0375)), (4, 4, 2)))
    # same absolute truth voxel size on the smaller box
    np.testing.assert_allclose(small.truth_grid.h, cfg.truth_grid.h)


@pytest.mark.parametrize(
    "extra, key",
    [
        ("foo.bar = 1", "foo.bar"),
        ("k0 = 41", "k0"),
        ("grid.n = 4 4", "grid.n"),
        ("truth.n = 5 5 5", "truth.n"),
        ("truth.inclusion.z.lo = 0 0 0\ntruth.inclusion.z.hi = 0.1 0.1 0.1\ntruth.inclusion.z.k = 39", "truth.inclusion.z.k"),
        ("truth.inclusion.z.lo = 0 0 0\ntruth.inclusion.z.hi = 0.1 0.1 0.1\ntruth.inclusion.z.k = 50-1j", "truth.inclusion.z.k"),
        ("truth.inclusion.z.lo = 0.1 0 0\ntruth.inclusion.z.hi = 0.05 0.1 0.1\ntruth.inclusion.z.k = 50", None),
        ("filter.order = sideways", "filter.order"),
        ("regularization.method = lasso", None),
        ("receivers.near.per_plane = 0 4", None),
        ("noise.rel_sigma = -1", None),
        ("config.a.source = nowhere\nconfig.a.receivers = near", None),
    ],
)
def test_validation_errors_carry_context(extra, key):
    with pytest.raises(ConfigError) as info:
        loads(BASE + extra + "\n", "case.cfg")
    msg = str(info.value)
    assert "case.cfg" in msg
    if key is not None:
        assert info.value.key == key and f"'{key}'" in msg
        assert info.value.line is not None


def test_missing_required_blocks():
    no_src = "\n".join(line for line in BASE.splitlines() if not line.startswith("source"))
    with pytest.raises(ConfigError):
        loads(no_src)
    no_rec = "\n".join(line for line in BASE.splitlines() if not line.startswith("receivers"))
    with pytest.raises(ConfigError):
        loads(no_rec)


def test_malformed_line():
    with pytest.raises(ConfigError) as info:
        loads(BASE + "junk\n")
    assert info.value.line == BASE.count("\n") + 1


def test_comments_and_blank_lines():
    cfg = loads("# header\n\n" + BASE.replace("k0 = 40", "k0 = 40  # per meter"))
    assert cfg.k0 == 40
