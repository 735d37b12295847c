"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N PASS|FAIL`` line. The lines are also
collected into a section of the pytest terminal summary.
"""
import time
from pathlib import Path

import numpy as np

from helpers import K0, crime_data, random_truth, three_face_receivers
from oracles import neumann_series
from voxinv.config import bundled_names, bundled_path, load
from voxinv.diagnostics import gram_entry_quadrature, gram_matrix, nonuniqueness_oracle, uniqueness_bound
from voxinv.forward import RefractiveField, assemble_ls_matrix, solve_forward
from voxinv.geometry import Grid, Parallelepiped
from voxinv.inverse import RegularizationSpec, assemble_first_kind, filter_measurements, invert
from voxinv.kernels import incident_field
from voxinv.measurement import MeasurementSet, build_receivers, place_source, synthesize
from voxinv.scenario import (
    invert_run,
    reconstruction_metrics,
    run_refinement_loop,
    run_scenario,
    simulate_run,
    truth_field,
)


def test_criterion_1_zero_contrast(verdict):
    g = Grid.cube(0.15, 5)
    field = RefractiveField.uniform(g, K0)
    src = place_source(g.box, "+z", 0.003)
    t0 = time.perf_counter()
    sol = solve_forward(field, K0, src)
    elapsed = time.perf_counter() - t0
    u0 = incident_field(K0, src, g.centers())
    rel = float(np.max(np.abs(sol.u_in.values - u0) / np.abs(u0)))
    rec = build_receivers(g.box, "xy", 0.005, n_planes=2, plane_gap=0.01, per_plane=(5, 5))
    us = synthesize(field, K0, src, rec, solution=sol).u_scattered
    ok = rel <= 1e-12 and not np.any(us) and elapsed < 1.0
    verdict(1, "zero contrast gives u = u0 and u_s = 0", ok,
            f"max rel dev {rel:.1e}, max |u_s| {np.abs(us).max():.1e}, solve {elapsed:.2f} s")


def test_criterion_2_born_series(verdict):
    # a mild random contrast at k0 = 20 keeps ||A||_1 near 0.3 at n = 4
    k0 = 20.0
    rng = np.random.default_rng(3)
    g = Grid.cube(0.15, 4)
    k = k0 * (1 + 0.1 * rng.uniform(0, 1, g.size)) * np.exp(1j * rng.uniform(0, 0.02, g.size))
    field = RefractiveField(g, k)
    src = place_source(g.box, "+z", 0.003)
    t0 = time.perf_counter()
    A = np.eye(g.size) - assemble_ls_matrix(field, k0)
    norm = np.linalg.norm(A, 1)
    ref = neumann_series(A, incident_field(k0, src, g.centers()))
    sol = solve_forward(field, k0, src)
    elapsed = time.perf_counter() - t0
    rel = float(np.linalg.norm(sol.u_in.values - ref) / np.linalg.norm(ref))
    ok = norm < 0.5 and rel <= 1e-6 and elapsed < 30.0
    verdict(2, "forward solve matches the Neumann series", ok,
            f"||A||_1 {norm:.3f}, rel err {rel:.1e}, {elapsed:.1f} s")


def test_criterion_3_nonuniqueness_oracle(verdict):
    t0 = time.perf_counter()
    rep = nonuniqueness_oracle(1.0)
    elapsed = time.perf_counter() - t0
    ext, inn = rep.exterior_by_level, rep.interior_by_level
    monotone = all(b < a for a, b in zip(ext, ext[1:]))
    ok = monotone and rep.max_exterior_potential <= 1e-4 and rep.interior_match_error <= 1e-4 and elapsed < 60
    verdict(3, "non-radiating current has no exterior potential", ok,
            f"exterior by level {', '.join(f'{v:.1e}' for v in ext)}; interior mismatch {inn[-1]:.1e}; "
            f"{elapsed:.1f} s")


def test_criterion_4_gram_matrix(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        n = tuple(int(v) for v in rng.integers(1, 5, 3))
        if np.prod(n) < 2:
            n = (2, 1, 1)
        g = Grid(Parallelepiped((0, 0, 0), rng.uniform(0.05, 1.0, 3)), n)
        k0 = rng.uniform(1.0, 60.0)
        i, j = rng.integers(0, g.size, 2)
        r = (g.multi_indices()[i] - g.multi_indices()[j]) * g.h
        ref = gram_entry_quadrature(k0, r)
        worst = max(worst, abs(gram_matrix(g, k0).gamma[i, j] - ref) / abs(ref))
    dominant = pd = 0
    for _ in range(60):
        g = Grid.cube(rng.uniform(0.05, 3.0), int(rng.integers(1, 4)))
        k0 = rng.uniform(0.5, 200.0)
        if uniqueness_bound(g, k0)["dominance_margin"] > 0:
            dominant += 1
            pd += np.linalg.eigvalsh(gram_matrix(g, k0).gamma)[0] > 0
    bound = uniqueness_bound(Grid.cube(0.15, 2), 40.0)["bound"]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and dominant > 0 and pd == dominant and abs(bound - 263.19) < 5e-3 and elapsed < 30
    verdict(4, "Gram entries, definiteness and bound", ok,
            f"worst rel err {worst:.1e} over 50 entries, {pd}/{dominant} dominant cases definite, "
            f"bound {bound:.2f}, {elapsed:.1f} s")


def test_criterion_5_inverse_crime(verdict):
    exact = RegularizationSpec("truncated-svd", 1e-12)
    t0 = time.perf_counter()
    worst, masked = 0.0, 0
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        n = 2 + trial % 4  # 2, 3, 4, 5
        truth = random_truth(n, rng)
        meas = crime_data(truth, layout=three_face_receivers)
        assert len(meas) == 2 * truth.grid.size
        rec = invert(assemble_first_kind(truth.grid, K0, meas.receivers), meas, exact)
        rel = np.abs(rec.k_rec.values - truth.values) / np.abs(truth.values)
        worst = max(worst, float(rel[rec.mask].max()))
        masked += rec.masked_count
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and masked == 0 and elapsed < 300
    verdict(5, "inverse-crime round trip over 20 trials", ok,
            f"worst rel err {worst:.1e}, masked {masked}, {elapsed:.1f} s")


def test_criterion_6_noise_and_mitigation(verdict, tmp_path):
    t0 = time.perf_counter()
    far = run_scenario(load(bundled_path("sp_far_noisy")).with_output_dir(tmp_path / "far"))
    rot = run_scenario(load(bundled_path("sp_rotation")).with_output_dir(tmp_path / "rot"))
    per_run = {name: r["metrics"]["artifact_count"] for name, r in rot.runs.items()}
    fused = rot.metrics["artifact_count"]

    cfg = load(bundled_path("sp_filter"))
    run = cfg.runs[0]
    sim = simulate_run(cfg, run, 0, truth_field(cfg))
    meas = sim.measurements
    reference = MeasurementSet.from_total(meas.source, cfg.k0, meas.receivers, meas.u_incident)
    kept = filter_measurements(meas, reference, cfg.filter.max_rel_dev, cfg.filter.max_rough)
    kept_pos = {tuple(p) for p in kept.receivers.positions}
    bad_pos = [tuple(meas.receivers.positions[i]) for i in sim.outlier_idx]
    removed = sum(p not in kept_pos for p in bad_pos)
    err_f = reconstruction_metrics(cfg, invert_run(cfg, run, meas))["mean_rel_err_k"]
    err_u = reconstruction_metrics(cfg, invert_run(cfg, run, meas, filter_enabled=False))["mean_rel_err_k"]
    elapsed = time.perf_counter() - t0

    ok = (far.metrics["artifact_count"] > 0 and len(per_run) >= 2 and all(fused < v for v in per_run.values())
          and len(bad_pos) > 0 and removed >= 0.9 * len(bad_pos) and err_f < err_u and elapsed < 600)
    verdict(6, "noise artifacts, rotation fusion and outlier filtering", ok,
            f"far artifacts {far.metrics['artifact_count']}; runs {sorted(per_run.values())} vs fused {fused}; "
            f"outliers removed {removed}/{len(bad_pos)}; mean err {err_f:.3f} filtered vs {err_u:.3f}; "
            f"{elapsed:.1f} s")


def _snapshot(root: Path):
    skip = {"config.cfg", "timings.json"}
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in skip}


def test_criterion_7_determinism(verdict, tmp_path):
    differing = []
    files = 0
    for name in bundled_names():
        cfg = load(bundled_path(name))
        snaps = []
        for rep in ("a", "b"):
            out = tmp_path / rep / name
            if name == "sp_refine":
                run_refinement_loop(cfg.with_output_dir(out), max_rounds=2)
            else:
                run_scenario(cfg.with_output_dir(out))
            snaps.append(_snapshot(out))
        files += len(snaps[0])
        if snaps[0] != snaps[1]:
            differing.append(name)
    ok = not differing
    verdict(7, "repeated runs of every bundled scenario are bit-identical", ok,
            f"{len(bundled_names())} scenarios, {files} files compared"
            + (f", differing: {differing}" if differing else ""))


def test_criterion_8_refinement(verdict, tmp_path):
    cfg = load(bundled_path("sp_refine"))
    rep = run_refinement_loop(cfg.with_output_dir(tmp_path / "loop"), max_rounds=2)
    first, second = rep.rounds[0], rep.rounds[1]
    before = first["proposal"]["region_metrics"]["mean_rel_err_k"]
    after = second["metrics"]["mean_rel_err_k"]
    ok = len(cfg.inclusions) == 1 and cfg.grid.n == (4, 4, 4) and after < before
    verdict(8, "one refinement round lowers the error in the refined region", ok,
            f"region mean rel err {before:.3e} -> {after:.3e} on grid {second['grid']['n']}")
