"""Command-line workbench.

Subcommands
-----------
``lie detsys``    derive and list the determining equations of a PDE file
``lie verify``    check generator candidates against a PDE file
``vortex``        sample the spherical-vortex equilibrium to CSV (and VTK)
``transform``     apply a field-line transform M(psi) to a state CSV
``flux solve``    solve an axisymmetric or helical flux problem
``flux tocgl``    map a flux solution to a sampled anisotropic state
``check``         evaluate residual norms (and optional stability flags)

Every run writes ``report.json`` (machine-readable, deterministic for
identical inputs) into the output directory.  Exit codes: 0 success, 2
validation error, 3 verification failure (nonzero symbolic residual,
residual norms over threshold, or an unconverged solve).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import equilibria as eq
from . import fields as fd
from . import flux as fx
from .expr import ExprError, pretty
from .lie import LieError, PdeSystem, build_determining_system, parse_generator, verify_generator

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_VERIFICATION = 3


class ValidationFailure(Exception):
    pass


def _write_report(out_dir: Path, report: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as err:
        raise ValidationFailure(f"cannot read {path}: {err.strerror or err}") from None


# ---------------------------------------------------------------------------
# lie
# ---------------------------------------------------------------------------


def cmd_lie_detsys(args) -> tuple[int, dict]:
    system = PdeSystem.from_text(_read_text(args.pde_file))
    det = build_determining_system(system)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    listing = out_dir / "detsys.txt"
    with open(listing, "w") as fh:
        fh.write(f"# count={det.count} assumptions={list(det.assumptions)}\n")
        for eqn in det.equations:
            fh.write(pretty(eqn) + "\n")
    counts = {
        "count": det.count,
        "count_up_to_scale": det.stats["count_up_to_scale"],
        "raw": det.stats["raw"],
    }
    if system.target_count is not None:
        counts["target"] = system.target_count
        counts["matches_target"] = det.count == system.target_count
    report = {
        "command": "lie detsys",
        "inputs": {"pde_file": str(args.pde_file)},
        "params": {},
        "counts": counts,
        "assumptions": list(det.assumptions),
        "artifacts": {"equations": listing.name},
        "pass": True,
    }
    print(f"determining equations: {det.count} (up to scale: {det.stats['count_up_to_scale']})")
    if system.target_count is not None:
        print(f"target count: {system.target_count} ({'match' if counts['matches_target'] else 'deviation'})")
    return EXIT_OK, report


def cmd_lie_verify(args) -> tuple[int, dict]:
    system = PdeSystem.from_text(_read_text(args.pde_file))
    det = build_determining_system(system)
    gen = parse_generator(system.context, _read_text(args.generator_file), label=Path(args.generator_file).stem)
    residuals = verify_generator(system, det, gen)
    nonzero = [pretty(r) for r in residuals if not r.is_zero]
    ok = not nonzero
    report = {
        "command": "lie verify",
        "inputs": {"pde_file": str(args.pde_file), "generator_file": str(args.generator_file)},
        "params": {},
        "counts": {"equations": det.count, "nonzero_residuals": len(nonzero)},
        "nonzero_residuals": nonzero[:10],
        "assumptions": list(det.assumptions),
        "pass": ok,
    }
    print(
        f"generator {gen.label or '(unnamed)'}: "
        + ("verified, all residuals vanish" if ok else f"{len(nonzero)} nonzero residuals")
    )
    return (EXIT_OK if ok else EXIT_VERIFICATION), report


# ---------------------------------------------------------------------------
# vortex / transform
# ---------------------------------------------------------------------------


def cmd_vortex(args) -> tuple[int, dict]:
    params = eq.vortex_params(R=args.R, n=args.n, B0=args.B0, P0=args.P0)
    grid = fd.Grid3.cube(-args.extent, args.extent, args.grid)
    state = eq.vortex_state(params, grid, pressure_profile=args.pressure_profile)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    eq.write_state_csv(state, out_dir / "state.csv")
    artifacts = {"state": "state.csv"}
    if args.vtk:
        eq.write_state_vtk(state, out_dir / "state.vtk")
        artifacts["vtk"] = "state.vtk"
    report = {
        "command": "vortex",
        "inputs": {},
        "params": {
            "R": args.R,
            "B0": args.B0,
            "P0": args.P0,
            "n": args.n,
            "grid": args.grid,
            "extent": args.extent,
            "pressure_profile": args.pressure_profile,
            "lam": params.lam,
            "gamma_b": params.gamma_b,
        },
        "assumptions": [],
        "artifacts": artifacts,
        "pass": True,
    }
    print(f"vortex state on {args.grid}^3 written (mode {args.n}, lam={params.lam:.6f})")
    return EXIT_OK, report


def cmd_transform(args) -> tuple[int, dict]:
    state = eq.read_state_csv(args.state)
    spec = eq.TransformSpec(args.M, m_min=args.m_min)
    try:
        transformed = eq.apply_infinite_transform(state, spec)
    except ValueError as err:
        raise ValidationFailure(str(err)) from None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    eq.write_state_csv(transformed, out_dir / "transformed.csv")
    report = {
        "command": "transform",
        "inputs": {"state": str(args.state)},
        "params": {"M": args.M, "m_min": args.m_min},
        "assumptions": transformed.meta.get("warnings", []),
        "artifacts": {"state": "transformed.csv"},
        "pass": True,
    }
    print(f"transformed state written (M = {args.M})")
    return EXIT_OK, report


# ---------------------------------------------------------------------------
# flux
# ---------------------------------------------------------------------------


def cmd_flux_solve(args) -> tuple[int, dict]:
    problem, params = fx.parse_problem_file(_read_text(args.problem_file))
    try:
        sol = fx.solve_flux(problem, **params)
    except fx.SolverDiverged as err:
        raise ValidationFailure(f"solver diverged: {err}") from None
    manifest = fx.write_solution(sol, args.out)
    report = {
        "command": "flux solve",
        "inputs": {"problem_file": str(args.problem_file)},
        "params": {
            "shape": list(params["shape"]),
            "tol_outer": params["tol_outer"],
            "max_iter": params["max_iter"],
            "omega": params["omega"],
        },
        "norms": {"final_update": sol.final_update},
        "counts": {"iterations": sol.iterations},
        "assumptions": [],
        "artifacts": {"solution": "solution.json", "psi": manifest["psi_csv"]},
        "pass": sol.converged,
    }
    print(
        f"flux solve: {sol.iterations} iterations, final update {sol.final_update:.3e}, "
        + ("converged" if sol.converged else "NOT converged")
    )
    return (EXIT_OK if sol.converged else EXIT_VERIFICATION), report


def cmd_flux_tocgl(args) -> tuple[int, dict]:
    sol = fx.load_solution(args.solution)
    grid = fx.default_cartesian_box(sol.problem, args.grid)
    try:
        state = fx.flux_to_cgl(sol, args.tau, grid=grid)
    except ValueError as err:
        raise ValidationFailure(str(err)) from None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    eq.write_state_csv(state, out_dir / "state.csv")
    report = {
        "command": "flux tocgl",
        "inputs": {"solution": str(args.solution)},
        "params": {"tau": args.tau, "grid": args.grid},
        "assumptions": [],
        "artifacts": {"state": "state.csv"},
        "pass": True,
    }
    print(f"anisotropic state written from flux solution (tau = {args.tau})")
    return EXIT_OK, report


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def _norms_as_jsonable(norms: dict) -> dict:
    return {name: {k: float(v) for k, v in entry.items()} for name, entry in norms.items()}


def cmd_check(args) -> tuple[int, dict]:
    state = eq.read_state_csv(args.state)
    if args.system not in eq.RESIDUAL_SYSTEMS:
        raise ValidationFailure(f"unknown system {args.system!r}")

    can_coarsen = all(n % 2 == 1 and n >= 9 for n in state.grid.counts)
    if not can_coarsen and args.threshold is None:
        raise ValidationFailure(
            "grid counts must be odd (and at least 9) for the built-in two-grid "
            "threshold probe; rerun with an explicit --threshold"
        )

    mask_radius = None
    params: dict = {"system": args.system, "threshold_factor": args.threshold_factor}
    if args.mask_sphere is not None:
        h = max(state.grid.spacing)
        margin = 2.0 * (2.0 * h if can_coarsen else h)
        mask_radius = args.mask_sphere - margin
        params["mask_sphere"] = args.mask_sphere
        params["mask_radius_used"] = mask_radius

    norms = eq.residual_norms(state, args.system, mask_radius=mask_radius)
    report: dict = {
        "command": "check",
        "inputs": {"state": str(args.state)},
        "params": params,
        "norms": _norms_as_jsonable(norms),
        "assumptions": [],
    }

    ok = True
    if args.threshold is not None:
        params["threshold"] = args.threshold
        for name, entry in norms.items():
            if entry["linf"] > args.threshold:
                ok = False
    else:
        coarse = eq.residual_norms(state.coarsen(), args.system, mask_radius=mask_radius)
        report["norms_coarse"] = _norms_as_jsonable(coarse)
        ratios = {}
        for name in norms:
            fine_linf = norms[name]["linf"]
            coarse_linf = coarse[name]["linf"]
            ratios[name] = coarse_linf / fine_linf if fine_linf > 0 else float("inf")
            # pass when the fine-grid residual sits below the second-order
            # expectation (coarse/4) widened by the threshold factor
            if fine_linf > args.threshold_factor * coarse_linf / 4.0:
                ok = False
        report["convergence_ratios"] = {k: float(v) for k, v in ratios.items()}

    if args.stability:
        report["stability"] = eq.stability_report(state).summary()

    report["pass"] = ok
    worst = max(entry["linf"] for entry in norms.values())
    print(f"check {args.system}: worst Linf {worst:.3e} -> {'pass' if ok else 'FAIL'}")
    return (EXIT_OK if ok else EXIT_VERIFICATION), report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plasmeq", description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=".", help="output directory for artifacts and report.json")
    sub = parser.add_subparsers(dest="command", required=True)

    lie = sub.add_parser("lie", help="point-symmetry analysis")
    lie_sub = lie.add_subparsers(dest="lie_command", required=True)
    detsys = lie_sub.add_parser("detsys", help="derive the determining equations")
    detsys.add_argument("pde_file")
    detsys.set_defaults(handler=cmd_lie_detsys)
    verify = lie_sub.add_parser("verify", help="verify generator candidates")
    verify.add_argument("pde_file")
    verify.add_argument("generator_file")
    verify.set_defaults(handler=cmd_lie_verify)

    vortex = sub.add_parser("vortex", help="sample the spherical-vortex equilibrium")
    vortex.add_argument("--R", type=float, default=1.0)
    vortex.add_argument("--B0", type=float, default=1.0)
    vortex.add_argument("--P0", type=float, default=1.0)
    vortex.add_argument("--n", type=int, default=3, help="mode index")
    vortex.add_argument("--grid", type=int, default=65, help="nodes per axis")
    vortex.add_argument("--extent", type=float, default=1.2, help="half-width of the cubic box")
    vortex.add_argument(
        "--pressure-profile",
        choices=("balanced", "unscaled"),
        default="balanced",
        help="'balanced' satisfies the force balance; 'unscaled' keeps the historical profile",
    )
    vortex.add_argument("--vtk", action="store_true", help="also write a legacy VTK file")
    vortex.set_defaults(handler=cmd_vortex)

    transform = sub.add_parser("transform", help="apply a field-line transform")
    transform.add_argument("--state", required=True, help="input state CSV")
    transform.add_argument("--M", required=True, help="magnitude expression in psi")
    transform.add_argument("--m-min", type=float, default=1e-8)
    transform.set_defaults(handler=cmd_transform)

    flux = sub.add_parser("flux", help="flux-function solvers")
    flux_sub = flux.add_subparsers(dest="flux_command", required=True)
    fsolve = flux_sub.add_parser("solve", help="solve a flux problem file")
    fsolve.add_argument("problem_file")
    fsolve.set_defaults(handler=cmd_flux_solve)
    tocgl = flux_sub.add_parser("tocgl", help="map a solution to an anisotropic state")
    tocgl.add_argument("solution", help="solution.json from flux solve")
    tocgl.add_argument("--tau", required=True, help="anisotropy expression in psi")
    tocgl.add_argument("--grid", type=int, default=33, help="nodes per axis of the sampling box")
    tocgl.set_defaults(handler=cmd_flux_tocgl)

    check = sub.add_parser("check", help="residual norms of a sampled state")
    check.add_argument("--state", required=True)
    check.add_argument("--system", required=True, choices=eq.RESIDUAL_SYSTEMS)
    check.add_argument("--stability", action="store_true")
    check.add_argument(
        "--mask-sphere",
        type=float,
        default=None,
        help="restrict norms to a ball of this radius shrunk by two stencil widths",
    )
    check.add_argument(
        "--threshold-factor",
        type=float,
        default=10.0,
        help="pass when fine Linf < factor * (coarse Linf / 4) from the two-grid probe",
    )
    check.add_argument(
        "--threshold",
        type=float,
        default=None,
        help="absolute Linf pass threshold (replaces the two-grid probe)",
    )
    check.set_defaults(handler=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(args.out)
    try:
        code, report = args.handler(args)
    except ValidationFailure as err:
        print(f"error: {err}", file=sys.stderr)
        _write_report(out_dir, {"command": args.command, "error": str(err), "assumptions": [], "pass": False})
        return EXIT_VALIDATION
    except (ExprError, LieError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        _write_report(out_dir, {"command": args.command, "error": str(err), "assumptions": [], "pass": False})
        return EXIT_VALIDATION
    _write_report(out_dir, report)
    return code


if __name__ == "__main__":
    sys.exit(main())
