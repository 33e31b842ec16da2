"""``crackfield`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..mesh import MeshError, write_mesh
from .config import ConfigError, load_config
from .metrics import NoPeakError, extract_metrics
from .runner import EXIT_CONFIG, EXIT_OK, build_mesh, run_scenario, write_vtk

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crackfield",
                                description="Phase-field compressive-shear fracture runs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every load step")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    run.add_argument("--threads", type=int, help="BLAS thread count")
    run.add_argument("--resume", type=Path, help="checkpoint file to continue from")
    run.add_argument("--vtk", action="store_true", help="also write the final state as VTK")

    met = sub.add_parser("metrics", help="peak load and crack band width of a run")
    met.add_argument("run_dir", type=Path)

    msh = sub.add_parser("mesh", help="generate and export the scenario mesh")
    msh.add_argument("config", type=Path)
    msh.add_argument("--export", type=Path, required=True,
                     help="output file; a .vtk suffix selects legacy VTK")
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    # effective only for libraries that read these before their pools start
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            _set_threads(args.threads)
            scenario = load_config(args.config)
            if args.resume is not None and not args.resume.exists():
                raise ConfigError(f"checkpoint {args.resume} not found")
            outcome = run_scenario(scenario, out_dir=args.out, resume=args.resume,
                                   threads=args.threads, vtk=args.vtk)
            if outcome.status != EXIT_OK:
                print(f"crackfield: {outcome.message}", file=sys.stderr)
            else:
                print(f"{len(outcome.results)} steps written to {outcome.out_dir}")
            return outcome.status
        if args.command == "metrics":
            try:
                metrics = extract_metrics(args.run_dir)
            except NoPeakError as exc:
                print(f"no peak: {exc}")
                return EXIT_OK
            for k, v in metrics.items():
                print(f"{k} = {v}")
            return EXIT_OK
        scenario = load_config(args.config)
        mesh = build_mesh(scenario)
        if args.export.suffix.lower() == ".vtk":
            write_vtk(args.export, mesh, {})
        else:
            write_mesh(mesh, args.export)
        print(f"{mesh.n_nodes} nodes, {mesh.n_elements} {mesh.elem_kind} elements, "
              f"h_max = {mesh.h_max * 1e3:.4g} mm")
        return EXIT_OK
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"crackfield: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
