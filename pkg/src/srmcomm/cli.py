"""Command-line entry point.

Subcommands: ``design``, ``montecarlo``, ``sweep``, ``ripple``.  Exit codes:
0 on success, 2 on configuration errors, 3 on solver or design failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness
from .commutation import commutation_profile, export_lookup_table, torque_mismatch_profile
from .config import load_config
from .errors import ConfigurationError, DesignError, ModelError, SolverError
from .ripple_objective import ErrorGrid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the study config JSON")
    parser.add_argument("--out", required=True, help="output directory (created if missing)")
    parser.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    parser.add_argument("--verbose", "-v", action="store_true", help="extra diagnostic files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srmcomm",
        description="Robust commutation design and Monte Carlo evaluation for switched reluctance motors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="solve the robust design and write parameters + report")
    _add_common(p_design)

    p_mc = sub.add_parser("montecarlo", help="Monte Carlo study at the configured variance scales")
    _add_common(p_mc)
    p_mc.add_argument("--full-scale", action="store_true", help="use the full-scale motor count")
    p_mc.add_argument("--jobs", type=int, default=1, help="worker processes for the runs")

    p_sweep = sub.add_parser("sweep", help="study across a list of variance scales")
    _add_common(p_sweep)
    p_sweep.add_argument(
        "--lambdas",
        help="comma-separated variance scales (overrides the config list), e.g. 0,0.1,0.5,1,2",
    )
    p_sweep.add_argument("--full-scale", action="store_true", help="use the full-scale motor count")
    p_sweep.add_argument("--jobs", type=int, default=1, help="worker processes for the runs")

    p_ripple = sub.add_parser("ripple", help="per-motor torque-ripple profiles over one tooth")
    _add_common(p_ripple)
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    return out


def _cmd_design(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    model = harness.resolve_model(config)
    artifacts, solution, qp = harness.design_for(config, model)
    artifacts.params.save(out / "params.json")
    harness.write_summary_json(artifacts.report, out / "design_report.json")
    export_lookup_table(artifacts.params, out / "commutation_table.csv")

    grid = ErrorGrid.uniform(config.design_grid_points, model.basis.tooth_count)
    b_plus, b_minus = torque_mismatch_profile(
        artifacts.params, model.theta_mean, model.basis, grid.angles
    )
    with open(out / "design_profiles.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        n_c = model.basis.coil_count
        f_plus, f_minus = commutation_profile(artifacts.params, grid.angles)
        writer.writerow(
            ["phi_rad"]
            + [f"f_plus_coil_{c + 1}" for c in range(n_c)]
            + [f"f_minus_coil_{c + 1}" for c in range(n_c)]
            + ["torque_ratio_plus", "torque_ratio_minus"]
        )
        for k in range(grid.angles.size):
            writer.writerow(
                [repr(float(grid.angles[k]))]
                + [repr(float(v)) for v in f_plus[k]]
                + [repr(float(v)) for v in f_minus[k]]
                + [repr(float(b_plus[k])), repr(float(b_minus[k]))]
            )

    if args.verbose:
        qp.dump_json(out / "qp_problem.json")
        with open(out / "qp_iterations.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["iteration", "objective", "stationarity", "primal_feasibility", "complementarity"]
            )
            for row in solution.iteration_log:
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    if not args.no_plots:
        from . import plots

        conventional = harness.conventional_for(config, model)
        plots.save_commutation_figure(
            artifacts.params, conventional, model, out / "figures" / "commutation.png"
        )
        plots.save_nominal_error_figure(
            grid.angles, b_plus, b_minus, model.basis.tooth_count,
            out / "figures" / "nominal_error.png",
        )
    print(
        f"design written to {out}: objective {artifacts.report['objective_value']:.6g}, "
        f"{artifacts.report['iterations']} iterations, "
        f"nominal error {artifacts.report['nominal_error_plus_max']:.3g}"
    )
    return EXIT_OK


def _run_study_command(args, lambdas=None) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    result = harness.run_study(
        config,
        lambdas=lambdas,
        full_scale=getattr(args, "full_scale", False),
        jobs=getattr(args, "jobs", 1),
    )
    harness.write_raw_csv(result.rows, out / "raw_runs.csv")
    harness.write_summary_json(result.summary, out / "summary.json")
    if not args.no_plots:
        from . import plots

        plots.save_study_figure(result.rows, out / "figures" / "e_rms_boxes.png")
    for key, entry in sorted(result.summary["per_lambda"].items(), key=lambda kv: float(kv[0])):
        line = f"lambda {float(key):g}: "
        parts = []
        for method in harness.METHODS:
            stats = entry[method]
            median = stats.get("median")
            shown = f"{median:.4g}" if median is not None else "n/a"
            parts.append(f"{method} median {shown}")
            if stats.get("aborted"):
                parts.append(f"{method} aborted {stats['aborted']}")
        if "improvement_median" in entry:
            parts.append(f"improvement {100 * entry['improvement_median']:.1f}%")
        print(line + ", ".join(parts))
    print(f"study written to {out}")
    return EXIT_OK


def _cmd_montecarlo(args) -> int:
    return _run_study_command(args)


def _cmd_sweep(args) -> int:
    lambdas = None
    if args.lambdas:
        try:
            lambdas = [float(v) for v in args.lambdas.split(",") if v.strip() != ""]
        except ValueError:
            raise ConfigurationError(f"cannot parse --lambdas value {args.lambdas!r}")
        if not lambdas or any(v < 0 for v in lambdas):
            raise ConfigurationError("--lambdas needs non-negative values")
    return _run_study_command(args, lambdas=lambdas)


def _cmd_ripple(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    rows, summary = harness.ripple_profiles(config)
    harness.write_ripple_csv(rows, out / "ripple_profiles.csv")
    harness.write_summary_json(summary, out / "ripple_summary.json")
    if not args.no_plots:
        from . import plots

        model = harness.resolve_model(config)
        plots.save_ripple_figure(rows, model.basis.tooth_count, out / "figures" / "ripple.png")
    medians = summary["max_deviation_median"]
    print(
        f"ripple profiles written to {out}: median worst deviation "
        f"robust {medians['robust']:.4g}, conventional {medians['conventional']:.4g}"
    )
    return EXIT_OK


_COMMANDS = {
    "design": _cmd_design,
    "montecarlo": _cmd_montecarlo,
    "sweep": _cmd_sweep,
    "ripple": _cmd_ripple,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, DesignError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
