"""
Command line entry point.

    fsisplit run        --config run.ini        [--out DIR]
    fsisplit stability  --config sweep.ini      [--out DIR]
    fsisplit spatial    --config spatial.ini    [--out DIR] [--reference DIR] [--paper-scale]
    fsisplit temporal   --config temporal.ini   [--out DIR] [--reference DIR] [--paper-scale]
    fsisplit trajectory --config traj.ini       [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 the
single run of ``run`` blew up or its curve left the fluid box.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness as hs
from .config import ConfigError, load_config, paper_scale
from .linalg import SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_BLOWUP = 4


def _parser():
    p = argparse.ArgumentParser(prog="fsisplit", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=["run", "stability", "spatial", "temporal", "trajectory"])
    p.add_argument("--config", required=True, help="key-value config file")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.add_argument("--reference", help="directory holding (or receiving) reference checkpoints")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the finest reference resolution (slow)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _reference_dir(args, cfg):
    d = args.reference or cfg.reference.path or None
    if d is not None:
        Path(d).mkdir(parents=True, exist_ok=True)
    return d


def cmd_run(cfg, out, args):
    res = hs.run_simulation(cfg)
    hs.write_energy_csv(out / "energy.csv", res)
    if "trajectory" in cfg.output.series:
        hs.write_trajectory_csv(out / "trajectory.csv", cfg, [res])
    hs.save_checkpoint(out / "final.chk", res.state, cfg)
    print(f"{res.label} tau={res.tau:g}: {res.outcome} after {len(res.records)} steps"
          + (f" ({res.message})" if res.message else ""))
    return EXIT_OK if res.stable else EXIT_BLOWUP


def cmd_stability(cfg, out, args):
    rows, runs = hs.stability_sweep(cfg, keep_runs=True)
    hs.write_sweep_csv(out / "stability.csv", cfg, rows)
    if "energy" in cfg.output.series:
        for res in runs:
            hs.write_energy_csv(out / f"energy_{res.label}_tau{res.tau:g}.csv", res)
    for r in rows:
        print(f"{r.scheme:9s} tau={r.tau:<8g} {r.outcome:15s} E_T/E0={r.final_E_ratio:.4g}")
    if cfg.experiment.boundary_n_seg:
        brows = hs.stability_boundary(cfg)
        hs.write_boundary_csv(out / "boundary.csv", cfg, brows)
        for b in brows:
            print(f"explicit n_seg={b.n_seg}: stable {b.tau_stable:.4g}, unstable {b.tau_unstable:.4g}")
    return EXIT_OK


def _print_tables(tables):
    for t in tables:
        print(t.scheme)
        for row in t.rows():
            print("  " + "  ".join(f"{x:.3e}" if isinstance(x, float) else str(x) for x in row[1:]))


def cmd_spatial(cfg, out, args):
    ref = _reference_dir(args, cfg)
    path = None if ref is None else Path(ref) / "spatial_reference.chk"
    tables = hs.spatial_convergence(cfg, path)
    hs.write_convergence_csv(out / "spatial.csv", cfg, tables)
    _print_tables(tables)
    return EXIT_OK


def cmd_temporal(cfg, out, args):
    tables = hs.temporal_convergence(cfg, _reference_dir(args, cfg))
    hs.write_convergence_csv(out / "temporal.csv", cfg, tables)
    _print_tables(tables)
    return EXIT_OK


def cmd_trajectory(cfg, out, args):
    runs = hs.trajectory_run(cfg)
    hs.write_trajectory_csv(out / "trajectory.csv", cfg, runs)
    for r in runs:
        print(f"{r.label:9s} tau={r.tau:<6g} {r.outcome}: A_x(T)={r.records[-1].A_x:.6f}"
              if r.records else f"{r.label} tau={r.tau:g} {r.outcome}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "stability": cmd_stability, "spatial": cmd_spatial,
            "temporal": cmd_temporal, "trajectory": cmd_trajectory}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.paper_scale:
            cfg = paper_scale(cfg)
        cfg = replace(cfg, experiment=replace(cfg.experiment, kind=args.command))
        out = Path(args.out or cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, hs.CheckpointError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
