"""Command-line interface: subcommand dispatch, run directories, output writing.

Subcommands: cell, micro, macro, converge, mms, eta-sweep.  Every run writes
a ``manifest.json`` listing each produced file with its SHA-256; numerical
outputs (diagnostics.csv, snapshot_*.csv, report.json) are bit-reproducible
for identical configs.  Wall-clock timings live only in the manifest, which
is the one file exempt from byte-for-byte replay comparison.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cell_problem import compute_effective_tensor
from .config import parse_and_validate
from .errors import PorodriftError
from .geometry import InclusionShape, build_cell_geometry, build_masked_grid
from .macro import MacroSourceSpec, build_macro_source, run_macro
from .micro import run_micro
from .verification import (
    run_convergence_study,
    run_eta_sweep,
    run_mms_verification,
)

SUBCOMMANDS = ("cell", "micro", "macro", "converge", "mms", "eta-sweep")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def _write_snapshot(path: Path, grid, state, conc_prefix: str, phi_name: str) -> None:
    n_species = state.conc.shape[0]
    header = ["cell"] + [f"x{i + 1}" for i in range(grid.dim)]
    header += [f"{conc_prefix}_{i + 1}" for i in range(n_species)] + [phi_name]
    lines = [",".join(header)]
    for j in range(grid.n_fluid):
        row = [str(j)]
        row += [repr(float(v)) for v in grid.centers[j]]
        row += [repr(float(state.conc[i, j])) for i in range(n_species)]
        row.append(repr(float(state.phi[j])))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _write_correctors_csv(path: Path, cell, correctors) -> None:
    header = ["cell"] + [f"y{i + 1}" for i in range(cell.dim)]
    header += [f"w_{c.k + 1}" for c in correctors]
    lines = [",".join(header)]
    for j in range(cell.n_fluid):
        row = [str(j)] + [repr(float(v)) for v in cell.centers[j]]
        row += [repr(float(c.values[j])) for c in correctors]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _macro_inputs(config):
    """Macro grid, effective tensor, balanced sources, and species for a config."""
    macro_grid = build_masked_grid(
        build_cell_geometry(InclusionShape("none"), config.macro_resolution),
        1, config.macro_resolution)
    if config.inclusion.kind == "none":
        tensor_matrix = np.eye(config.dim)
        porosity = 1.0
        source = MacroSourceSpec(np.zeros(macro_grid.n_fluid),
                                 np.zeros(macro_grid.outer_cell.size))
    else:
        tensor = compute_effective_tensor(config.cell, tol=config.cell_tol)
        tensor_matrix = tensor.a_hom
        porosity = tensor.porosity
        source = build_macro_source(config.cell, macro_grid,
                                    config.xi1_callable(), config.xi2_callable())
    specs = config.species_specs()
    if config.auto_balance:
        rho0 = np.zeros(macro_grid.n_fluid)
        for spec in specs:
            rho0 += spec.charge * np.asarray(spec.initial_profile(macro_grid.centers))
        residual = (float(np.sum(rho0 + source.volumetric)) * macro_grid.cell_volume
                    + float(np.sum(source.boundary)) * macro_grid.facet_area)
        source = MacroSourceSpec(
            source.volumetric,
            source.boundary - residual / macro_grid.outer_area_total)
    return macro_grid, tensor_matrix, porosity, source, specs


def _run_result_payload(kind, config, result, extra=None):
    payload = {
        "kind": kind,
        "species": [s.name for s in config.species],
        "final_time": config.final_time,
        "summary": dict(result.summary),
        "diagnostics_rows": len(result.record),
        "epsilon": 1.0 / config.m,
        "alpha": config.alpha,
        "beta": config.beta,
        "eta": config.eta,
        "p": config.p,
    }
    if extra:
        payload.update(extra)
    return payload


def dispatch(subcommand: str, config, out_dir=None, explicit_time=None,
             poisson_every_step=None, dump_correctors=None) -> int:
    """Run one pipeline, write its artifacts and manifest; returns the exit status."""
    if subcommand not in SUBCOMMANDS:
        raise PorodriftError(f"unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}")
    run_dir = Path(out_dir if out_dir is not None else config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if explicit_time is None:
        explicit_time = config.explicit_time
    if poisson_every_step is None:
        poisson_every_step = config.poisson_every_step
    if dump_correctors is None:
        dump_correctors = config.dump_correctors

    written = []
    timings = {}
    status = 0
    error_message = None
    t_start = time.perf_counter()
    try:
        if subcommand == "cell":
            cell = (config.cell if config.cell_resolution == config.r
                    else build_cell_geometry(config.inclusion, config.cell_resolution))
            tensor = compute_effective_tensor(cell, tol=config.cell_tol)
            report = {
                "kind": "cell",
                "resolution": cell.resolution,
                "porosity": tensor.porosity,
                "a_hom": tensor.a_hom,
                "energy_form": tensor.energy_form,
                "residuals": [c.rel_residual for c in tensor.correctors],
                "iterations": [c.iterations for c in tensor.correctors],
                "gamma_area": cell.gamma_area_total,
            }
            _write_json(run_dir / "report.json", report)
            written.append("report.json")
            if dump_correctors:
                _write_correctors_csv(run_dir / "correctors.csv", cell, tensor.correctors)
                written.append("correctors.csv")

        elif subcommand == "micro":
            result = run_micro(
                config.grid, config.scaling(), config.species_specs(), config.charges,
                dt_init=config.dt_init, cfl_fraction=config.cfl_fraction,
                output_interval=config.output_interval or None,
                snapshot_times=config.snapshot_times,
                poisson_tol=config.poisson_tol, explicit_time=explicit_time,
            )
            result.record.to_csv(run_dir / "diagnostics.csv")
            written.append("diagnostics.csv")
            for t_snap in sorted(result.snapshots):
                name = f"snapshot_{t_snap:.6f}.csv"
                _write_snapshot(run_dir / name, config.grid, result.snapshots[t_snap],
                                "c", "phi")
                written.append(name)
            _write_json(run_dir / "report.json",
                        _run_result_payload("micro", config, result))
            written.append("report.json")

        elif subcommand == "macro":
            mode = config.resolved_macro_mode()
            macro_grid, tensor_matrix, porosity, source, specs = _macro_inputs(config)
            result = run_macro(
                macro_grid, tensor_matrix, specs, source, config.eta, config.p,
                config.final_time, config.dt_init, mode=mode,
                cfl_fraction=config.cfl_fraction,
                output_interval=config.output_interval or None,
                snapshot_times=config.snapshot_times, poisson_tol=config.poisson_tol,
                explicit_time=explicit_time, poisson_every_step=poisson_every_step,
            )
            result.record.to_csv(run_dir / "diagnostics.csv")
            written.append("diagnostics.csv")
            for t_snap in sorted(result.snapshots):
                name = f"snapshot_{t_snap:.6f}.csv"
                _write_snapshot(run_dir / name, macro_grid, result.snapshots[t_snap],
                                "c0", "phi0")
                written.append(name)
            _write_json(run_dir / "report.json",
                        _run_result_payload("macro", config, result, extra={
                            "mode": mode, "a_hom": tensor_matrix, "porosity": porosity,
                            "macro_resolution": config.macro_resolution,
                        }))
            written.append("report.json")

        elif subcommand == "converge":
            report = run_convergence_study(
                config.cell, config.species_specs(), config.xi1_callable(),
                config.xi2_callable(), config.alpha, config.beta, config.eta, config.p,
                config.convergence_m_values, config.convergence_final_time,
                config.convergence_dt_init, cfl_fraction=config.cfl_fraction,
                macro_resolution=config.convergence_macro_resolution,
                auto_balance=config.auto_balance, poisson_tol=config.poisson_tol,
                cell_tol=config.cell_tol,
            )
            _write_json(run_dir / "report.json", report.to_dict(include_runtimes=False))
            written.append("report.json")
            timings.update(report.runtimes)
            if not all(report.monotone_decreasing(n) for n in report.species_names):
                status = 1
                error_message = "convergence study: errors are not strictly decreasing"

        elif subcommand == "mms":
            report = run_mms_verification(config.mms_solvers,
                                          resolutions=config.mms_resolutions)
            _write_json(run_dir / "report.json", report)
            written.append("report.json")
            if not report["passed"]:
                status = 1
                error_message = "mms verification: observed order outside threshold"

        elif subcommand == "eta-sweep":
            if config.resolved_macro_mode() != "coupled":
                raise PorodriftError("eta-sweep requires the coupled regime (alpha = beta)")
            macro_grid, tensor_matrix, _, source, specs = _macro_inputs(config)
            report = run_eta_sweep(macro_grid, tensor_matrix, specs, source, config.p,
                                   config.eta_values, config.eta_final_time,
                                   config.eta_dt_init, cfl_fraction=config.cfl_fraction,
                                   poisson_tol=config.poisson_tol)
            _write_json(run_dir / "report.json", report)
            written.append("report.json")

    except PorodriftError as exc:
        status = 1
        error_message = str(exc)

    timings["total"] = time.perf_counter() - t_start
    manifest = {
        "command": subcommand,
        "package_version": __version__,
        "config_echo": config.raw,
        "config_sha256": config.content_hash(),
        "balance_shift": config.balance_shift if config.auto_balance else None,
        "compat_residual_raw": config.compat_residual_raw,
        "exit_status": status,
        "error": error_message,
        "files": [
            {"path": name,
             "sha256": _sha256(run_dir / name),
             "bytes": (run_dir / name).stat().st_size}
            for name in written
        ],
        "timings_seconds": timings,
    }
    _write_json(run_dir / "manifest.json", manifest)
    if error_message:
        print(f"porodrift {subcommand}: FAILED: {error_message}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="porodrift",
        description="Drift-diffusion in perforated domains: micro/macro solvers, "
                    "cell problems, and verification harnesses.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--explicit-time", action="store_true", default=None,
                        help="fully explicit stepping (cross-validation mode)")
    parser.add_argument("--poisson-every-step", action="store_true", default=None,
                        help="re-solve the potential every step in decoupled macro runs")
    parser.add_argument("--dump-correctors", action="store_true", default=None,
                        help="write corrector fields as CSV (cell subcommand)")
    args = parser.parse_args(argv)

    try:
        config = parse_and_validate(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"porodrift: config file not found: {args.config}", file=sys.stderr)
        return 2
    except PorodriftError as exc:
        print(f"porodrift: invalid config: {exc}", file=sys.stderr)
        return 2
    return dispatch(args.subcommand, config, out_dir=args.out,
                    explicit_time=args.explicit_time,
                    poisson_every_step=args.poisson_every_step,
                    dump_correctors=args.dump_correctors)


if __name__ == "__main__":
    sys.exit(main())
