"""Command-line entry point.

Verbs: ``forward``, ``measure``, ``invert``, ``run``, ``refine-loop`` and
``diagnose``. Exit status is 0 on success, 2 for invalid input
(configuration, files, domain checks) and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import diagnostics
from .config import ConfigError, bundled_names, bundled_path, load
from .forward import DomainError, SingularSystemError
from .inverse import DegenerateRegularizationError, InsufficientDataError
from .kernels import QuadratureError
from .scenario import StageError, run_forward, run_invert, run_measure, run_refinement_loop, run_scenario

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

_NUMERICAL = (SingularSystemError, QuadratureError, DegenerateRegularizationError, InsufficientDataError,
              np.linalg.LinAlgError, FloatingPointError)
_INVALID = (ConfigError, DomainError, FileNotFoundError, ValueError, KeyError, IndexError)


def _resolve_config(arg: str):
    path = Path(arg)
    if path.exists():
        return load(path)
    if arg in bundled_names() or arg.removesuffix(".cfg") in bundled_names():
        return load(bundled_path(arg))
    raise FileNotFoundError(f"config {arg!r} is neither a file nor a bundled scenario "
                            f"({', '.join(bundled_names())})")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxinv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="scenario file, or the name of a bundled scenario")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="noise seed (overrides noise.seed)")
        sp.add_argument("--quiet", action="store_true", help="print nothing on success")

    common(sub.add_parser("forward", help="forward solves: truth, total field and current"))
    common(sub.add_parser("measure", help="forward solves plus synthetic receiver data"))
    common(sub.add_parser("invert", help="reconstruct from measurements already in --out"))
    common(sub.add_parser("run", help="full pipeline: forward, measure, filter, invert, fuse"))
    rl = sub.add_parser("refine-loop", help="full pipeline alternated with adaptive refinement")
    common(rl)
    rl.add_argument("--rounds", type=int, default=2, help="maximum number of rounds (default 2)")
    dg = sub.add_parser("diagnose", help="Gram-matrix uniqueness check and non-uniqueness witness")
    common(dg, config_required=False)
    dg.add_argument("--k0", type=float, help="wavenumber (default: from --config, else 1)")
    dg.add_argument("--n", type=int, nargs=3, metavar=("N1", "N2", "N3"), help="voxel counts")
    dg.add_argument("--edge", type=float, help="cube edge for --n (default: config box, else 1)")
    dg.add_argument("--oracle-k0", type=float, default=1.0,
                    help="wavenumber for the witness on [-1, 1]^3 (default 1)")
    dg.add_argument("--skip-oracle", action="store_true", help="omit the non-uniqueness quadrature")
    sub.add_parser("list", help="list bundled scenarios")
    return p


def _config(args):
    cfg = _resolve_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_output_dir(args.out)
    return cfg


def _metric_line(name, m) -> str:
    return (f"{name}: max_rel_err_k = {m['max_rel_err_k']:.3e}  mean_rel_err_k = {m['mean_rel_err_k']:.3e}  "
            f"artifact_count = {m['artifact_count']}  masked_count = {m['masked_count']}")


def _diagnose(args, say):
    from .geometry import Grid, Parallelepiped

    cfg = _config(args) if args.config else None
    k0 = args.k0 if args.k0 is not None else (cfg.k0 if cfg is not None else 1.0)
    if args.n is not None:
        if args.edge is not None:
            box = Parallelepiped((0.0, 0.0, 0.0), (args.edge,) * 3)
        else:
            box = cfg.box if cfg is not None else Parallelepiped((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        grid = Grid(box, tuple(args.n))
    elif cfg is not None:
        grid = cfg.grid
    else:
        raise ValueError("diagnose needs --config or --n")
    oracle = None if args.skip_oracle else diagnostics.nonuniqueness_oracle(
        args.oracle_k0, spec=cfg.quadrature if cfg is not None else diagnostics.DEFAULT_QUADRATURE)
    for line in diagnostics.report_lines(grid, k0, oracle):
        say(line)


def _dispatch(args, say) -> None:
    if args.verb == "list":
        for name in bundled_names():
            say(name)
        return
    if args.verb == "diagnose":
        _diagnose(args, say)
        return
    cfg = _config(args)
    if args.verb in ("forward", "measure"):
        sims = (run_forward if args.verb == "forward" else run_measure)(cfg)
        for s in sims:
            say(f"{s.run.name}: residual = {s.solution.residual:.3e}  cond_estimate = {s.solution.cond_estimate:.3e}")
        say(f"wrote {cfg.output_dir}")
        return
    if args.verb == "refine-loop":
        rep = run_refinement_loop(cfg, args.rounds)
        for r in rep.rounds:
            say(_metric_line(f"round {r['round']} n={tuple(r['grid']['n'])}", r["metrics"]))
            if r["proposal"] is not None:
                say(f"  proposal n={tuple(r['proposal']['n'])} region mean_rel_err_k = "
                    f"{r['proposal']['region_metrics']['mean_rel_err_k']:.3e}")
        say(f"stopped: {rep.stopped}")
        say(f"wrote {cfg.output_dir}")
        return
    rep = (run_invert if args.verb == "invert" else run_scenario)(cfg)
    for name, entry in rep.runs.items():
        say(_metric_line(name, entry["metrics"]))
    if rep.fused_path is not None:
        say(_metric_line("fused", rep.metrics))
    say(f"wrote {cfg.output_dir}")


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    say = (lambda s: None) if getattr(args, "quiet", False) else print
    try:
        _dispatch(args, say)
    except Exception as exc:  # map failures onto exit codes
        original = exc.original if isinstance(exc, StageError) else exc
        if isinstance(original, _NUMERICAL):
            code = EXIT_NUMERICAL
        elif isinstance(original, _INVALID):
            code = EXIT_INVALID
        else:
            raise
        print(f"voxinv: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
