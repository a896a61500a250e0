"""Command-line entry point.

Exit codes: 0 success/optimal, 1 error, 2 infeasible (scriptable feasibility
cliffs), 64 usage.  Every invocation emits a run manifest (JSON) capturing
the command line, scenario hash, backend tolerances, seed and wall time.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, conic, experiments, feasible, fisher, minmax
from .conic import SolverOptions, Status
from .scenario import Scenario, load_scenario, tables_scenario_path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


@dataclasses.dataclass
class RunManifest:
    command: list[str]
    scenario_sha256: str
    solver: str
    solver_rel_tol: float
    seed: int | None
    version: str
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_powers(text: str, nl: int) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise SystemExit(EXIT_USAGE)
    if values.size != nl:
        sys.stderr.write(f"expected {nl} comma-separated powers, got {values.size}\n")
        sys.exit(EXIT_USAGE)
    return values


def _payload_csv(payload: dict) -> str:
    """One-record CSV: header of keys, one row of values."""
    keys = list(payload)
    row = [";".join(str(v) for v in val) if isinstance(val, list) else str(val)
           for val in payload.values()]
    return ",".join(keys) + "\n" + ",".join(row) + "\n"


def _emit(args, name: str, payload: dict, csv_text: str | None = None) -> None:
    if csv_text is None:
        csv_text = _payload_csv(payload)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(json.dumps(payload, indent=2) + "\n")
        (out / f"{name}.csv").write_text(csv_text)
    elif args.format == "csv":
        sys.stdout.write(csv_text)
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _result_payload(result: conic.AllocationResult) -> dict:
    payload = {
        "provenance": result.provenance,
        "status": result.status.value,
        "mode": result.mode,
        "objective": result.objective,
        "duality_gap": result.duality_gap,
    }
    if result.p_star is not None:
        payload["p_star_w"] = [float(v) for v in result.p_star]
        payload["total_power_w"] = float(result.p_star.sum())
    if result.provenance in ("nominal-crlb", "robust-crlb"):
        payload["rmse_bound_m"] = (
            math.sqrt(result.objective) if math.isfinite(result.objective)
            else math.inf
        )
    return payload


def _exit_for(result: conic.AllocationResult) -> int:
    if result.status is Status.OPTIMAL:
        return EXIT_OK
    if result.status is Status.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_ERROR


def build_parser() -> _Parser:
    parser = _Parser(prog="vlpalloc",
                     description="Optimal and robust LED power allocation "
                                 "for visible-light positioning")
    parser.add_argument("--scenario", default=str(tables_scenario_path()),
                        help="scenario file (default: packaged reference room)")
    parser.add_argument("--mode", choices=("exact", "relaxed"), default="exact",
                        help="illumination-constraint handling")
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--out", help="directory for result artifacts")
    parser.add_argument("--format", choices=("csv", "human"), default="human")
    parser.add_argument("--solver-tol", type=float, default=1e-8)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crlb", help="error bound for a given power vector")
    p.add_argument("--power", required=True, help="comma-separated watts per LED")

    p = sub.add_parser("check", help="feasibility report for a power vector")
    p.add_argument("--power", required=True)

    p = sub.add_parser("solve", help="minimize the error bound over the set")
    p.add_argument("--total-power", type=float, help="override budget (W)")
    p.add_argument("--compare-modes", action="store_true",
                   help="solve both illumination handlings and report both")

    p = sub.add_parser("robust-gamma", help="worst-case bound minimization")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--delta-relative", action="store_true",
                   help="interpret delta as a fraction of |Gamma|")
    p.add_argument("--total-power", type=float)

    p = sub.add_parser("worst-case", help="worst-case bound for fixed powers")
    p.add_argument("--power", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--delta-relative", action="store_true")

    p = sub.add_parser("min-power", help="minimize total power for accuracy")
    p.add_argument("--accuracy", type=float, required=True,
                   help="RMSE target in meters (bound target is its square)")

    p = sub.add_parser("robust-min-power")
    p.add_argument("--accuracy", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--delta-relative", action="store_true")

    p = sub.add_parser("robust-location", help="min-max over a location ball")
    p.add_argument("--delta-l", type=float, required=True, help="radius (m)")
    p.add_argument("--total-power", type=float)
    p.add_argument("--grid", type=int, default=2000)

    p = sub.add_parser("robust-orientation", help="min-max over angle boxes")
    p.add_argument("--delta-theta", type=float, required=True, help="degrees")
    p.add_argument("--delta-phi", type=float, required=True, help="degrees")
    p.add_argument("--total-power", type=float)
    p.add_argument("--grid", type=int, default=441)

    p = sub.add_parser("illuminance-map", help="CSV illuminance grid")
    p.add_argument("--power", required=True)
    p.add_argument("--height", type=float, default=1.0)
    p.add_argument("--grid", default="50,50")

    p = sub.add_parser("experiment")
    p.add_argument("--protocol", choices=("compare", "cdf", "sweep"),
                   required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--delta-scale", choices=("relative", "absolute"),
                   default="relative",
                   help="how --delta is interpreted (default: fraction of |Gamma|)")
    p.add_argument("--accuracy", type=float, default=0.1)
    p.add_argument("--n-real", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--axis", choices=("total_power", "eps", "delta", "delta_l",
                                      "delta_theta"), default="total_power")
    p.add_argument("--grid", default="", help="comma-separated axis values")
    p.add_argument("--strategies", default="optimal,uniform")
    p.add_argument("--delta-phi", type=float, default=6.0,
                   help="degrees, for delta_theta sweeps")
    return parser


def _resolve_delta(args, gamma) -> float:
    relative = getattr(args, "delta_relative", False) or \
        getattr(args, "delta_scale", "absolute") == "relative"
    return experiments.resolve_delta(args.delta, gamma, relative)


def _dispatch(args, scenario: Scenario, options: SolverOptions) -> int:
    gamma = fisher.assemble_gamma(scenario)

    if args.command == "crlb":
        p = _parse_powers(args.power, scenario.nl)
        f = fisher.fim(gamma, p)
        bound = fisher.crlb(f)
        _emit(args, "crlb", {
            "crlb_m2": bound,
            "rmse_bound_m": math.sqrt(bound),
            "per_axis_m2": [float(v) for v in fisher.per_axis_crlb(f)],
        })
        return EXIT_OK

    if args.command == "check":
        p = _parse_powers(args.power, scenario.nl)
        fs = feasible.build_feasible_set(scenario, mode=args.mode)
        report = feasible.is_feasible(fs, p)
        _emit(args, "check", {
            "feasible": report.feasible,
            "violations": [f"{name} (slack {slack:.3e})"
                           for name, slack in report.violations],
        })
        return EXIT_OK if report.feasible else EXIT_INFEASIBLE

    if args.command == "solve":
        result = conic.solve_nominal_crlb(scenario, gamma, mode=args.mode,
                                          options=options,
                                          total_power=args.total_power)
        payload = _result_payload(result)
        if args.compare_modes:
            other_mode = "relaxed" if args.mode == "exact" else "exact"
            other = conic.solve_nominal_crlb(scenario, gamma, mode=other_mode,
                                             options=options,
                                             total_power=args.total_power)
            payload[f"objective_{other_mode}"] = other.objective
            if (math.isfinite(result.objective) and math.isfinite(other.objective)
                    and abs(result.objective - other.objective)
                    > 0.01 * abs(result.objective)):
                payload["modes_differ_over_1pct"] = True
        _emit(args, "solve", payload)
        return _exit_for(result)

    if args.command == "robust-gamma":
        delta = _resolve_delta(args, gamma)
        result = conic.solve_robust_gamma(scenario, gamma, delta,
                                          mode=args.mode, options=options,
                                          total_power=args.total_power)
        _emit(args, "robust_gamma", _result_payload(result))
        return _exit_for(result)

    if args.command == "worst-case":
        p = _parse_powers(args.power, scenario.nl)
        delta = _resolve_delta(args, gamma)
        value = conic.worst_case_crlb_fixed_p(p, gamma, delta, options=options)
        _emit(args, "worst_case", {
            "worst_case_crlb_m2": value,
            "status": "optimal" if math.isfinite(value) else "infeasible",
        })
        return EXIT_OK if math.isfinite(value) else EXIT_INFEASIBLE

    if args.command == "min-power":
        result = conic.solve_min_power(scenario, gamma, args.accuracy**2,
                                       mode=args.mode, options=options)
        _emit(args, "min_power", _result_payload(result))
        return _exit_for(result)

    if args.command == "robust-min-power":
        delta = _resolve_delta(args, gamma)
        result = conic.solve_robust_min_power(scenario, gamma, delta,
                                              args.accuracy**2, mode=args.mode,
                                              options=options)
        _emit(args, "robust_min_power", _result_payload(result))
        return _exit_for(result)

    if args.command in ("robust-location", "robust-orientation"):
        if args.command == "robust-location":
            model = minmax.UncertaintyModel.location_ball(args.delta_l)
        else:
            model = minmax.UncertaintyModel.orientation_box(
                math.radians(args.delta_theta), math.radians(args.delta_phi))
        params = minmax.MinmaxParams(n_grid=args.grid)
        result = minmax.solve_minmax(scenario, model, params=params,
                                     mode=args.mode,
                                     total_power=args.total_power)
        trace_csv = "iteration,n_candidates,rho,smoothed_m2,inner_max_m2\n" + \
            "".join(f"{r.iteration},{r.n_candidates},{r.rho!r},"
                    f"{r.smoothed!r},{r.inner_max!r}\n" for r in result.trace)
        _emit(args, args.command.replace("-", "_"), {
            "p_star_w": [float(v) for v in result.p_star],
            "worst_case_crlb_m2": result.worst_case,
            "smoothed_bound_m2": result.objective,
            "converged": result.converged,
            "certified_gap": result.certified_gap,
            "n_candidates": result.candidates.size,
        }, csv_text=trace_csv)
        return EXIT_OK if result.converged else EXIT_ERROR

    if args.command == "illuminance-map":
        from . import channel
        p = _parse_powers(args.power, scenario.nl)
        nx, ny = (int(v) for v in args.grid.split(","))
        xmin, ymin, xmax, ymax = scenario.illumination.average_region
        lines = ["x_m,y_m,illuminance_lx"]
        for x in np.linspace(xmin, xmax, nx):
            for y in np.linspace(ymin, ymax, ny):
                lx = channel.total_illuminance(
                    scenario.leds, np.array([x, y, args.height]), p,
                    scenario.base_optical_power)
                lines.append(f"{x!r},{y!r},{lx!r}")
        _emit(args, "illuminance_map", {"rows": nx * ny},
              csv_text="\n".join(lines) + "\n")
        return EXIT_OK

    if args.command == "experiment":
        relative = args.delta_scale == "relative"
        if args.protocol == "compare":
            report = experiments.run_strategy_comparison(
                scenario, args.delta, args.n_real, args.seed, mode=args.mode,
                delta_relative=relative, workers=args.workers, options=options)
        elif args.protocol == "cdf":
            report = experiments.run_cdf_experiment(
                scenario, args.accuracy**2, args.delta, args.n_real, args.seed,
                mode=args.mode, delta_relative=relative, workers=args.workers,
                options=options)
        else:
            grid = [float(v) for v in args.grid.split(",") if v]
            if not grid:
                sys.stderr.write("sweep needs --grid values\n")
                return EXIT_USAGE
            report = experiments.sweep(
                scenario, args.axis, grid,
                [s for s in args.strategies.split(",") if s],
                mode=args.mode, workers=args.workers,
                delta_phi=math.radians(args.delta_phi), options=options)
        _emit(args, f"experiment_{args.protocol}",
              {"protocol": report.protocol, "aggregates": report.aggregates},
              csv_text=report.to_csv())
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    scenario_path = Path(args.scenario)
    started = time.perf_counter()
    options = SolverOptions(rel_tol=args.solver_tol)
    try:
        scenario = load_scenario(scenario_path)
        code = _dispatch(args, scenario, options)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR
    except (ValueError, conic.SolverFailure) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR

    manifest = RunManifest(
        command=["vlpalloc"] + argv,
        scenario_sha256=_hash_file(scenario_path),
        solver=options.solver,
        solver_rel_tol=options.rel_tol,
        seed=args.seed,
        version=__version__,
        wall_time_s=round(time.perf_counter() - started, 6),
    )
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "manifest.json").write_text(manifest.to_json() + "\n")
    else:
        sys.stderr.write(manifest.to_json() + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
