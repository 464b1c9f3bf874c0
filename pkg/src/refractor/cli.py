"""Command line driver: validate scenes, solve for b, trace rays, export meshes.

Exit codes: 0 success, 2 scene/parameter validation failure, 3 quadrature too
coarse for the requested tolerance, 4 group budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .geometry import build_quadrature
from .measure import assign_cells, export_mesh, write_label_csv, write_obj
from .raytrace import TotalInternalReflection, validate_transport, write_ray_csv, write_report_json
from .scene import SceneValidationError, load_scene, validation_report
from .solver import (
    MaxGroupsExceeded,
    QuantizationTooCoarse,
    SolverConfig,
    solve_refractor,
    write_convergence_csv,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_VALIDATION = 2
EXIT_QUANTIZATION = 3
EXIT_MAX_GROUPS = 4


def _parse_dims(s: str):
    try:
        a, b = s.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {s!r}")


def _load_b(args, n_targets: int) -> np.ndarray:
    if args.from_result:
        with open(args.from_result) as fh:
            data = json.load(fh)
        b = np.asarray(data["b_final"], dtype=float)
    else:
        with open(args.b_file) as fh:
            b = np.asarray(json.load(fh), dtype=float)
    if b.shape != (n_targets,):
        raise SceneValidationError(
            f"b vector has {b.size} entries for {n_targets} targets"
        )
    return b


def run_validate(args) -> int:
    scene = load_scene(args.scene)
    grid = build_quadrature(scene.cap, *args.grid)
    report = validation_report(scene, grid)
    print(f"scene: {args.scene}")
    print(f"kappa = {report['kappa']}, targets = {report['n_targets']}, grid = {args.grid[0]}x{args.grid[1]}")
    print(f"tau_star = {report['tau_star']:.6f} (tau = {report['tau']:.6f})")
    print(f"r0 = {report['r0']:.6f}, b1 = {report['b1']:.6f}, alpha = {report['alpha']:.6f}")
    print(f"C_0 = {report['c0']:.6e}")
    print(f"total energy = {report['total_energy']:.9e}, sum g_i = {report['sum_target_weights']:.9e}")
    for i, j, m in report["structural_margins"]:
        tag = "ok" if m > 0 else "WARN"
        print(f"structural margin ({i},{j}) = {m:.6f} [{tag}]")
    if not report["structural_supported"]:
        print("warning: structural condition unsupported; termination bound not guaranteed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def run_solve(args) -> int:
    scene = load_scene(args.scene)
    grid = build_quadrature(scene.cap, *args.grid)
    config = SolverConfig(
        epsilon=args.epsilon,
        bracket_tol=args.bracket_tol,
        max_groups=args.max_groups,
    )
    t0 = time.perf_counter()
    sol = solve_refractor(scene, grid, config)
    wall = time.perf_counter() - t0

    trace = sol.trace
    bound_ok = (
        None if trace.group_bound is None else bool(trace.groups_used <= trace.group_bound)
    )
    result = {
        "scene": str(args.scene),
        "grid": [grid.n_theta, grid.n_phi],
        "epsilon": sol.epsilon,
        "delta": sol.delta,
        "total_energy": sol.total,
        "b_final": [float(v) for v in sol.b],
        "H": [float(v) for v in sol.measure.H],
        "g": [float(v) for v in sol.g],
        "residuals": [float(v) for v in sol.residuals],
        "max_residual": float(np.max(sol.residuals)),
        "groups_used": trace.groups_used,
        "oracle_evaluations": trace.total_evals,
        "lipschitz_estimate": trace.lipschitz_estimate,
        "group_bound": trace.group_bound,
        "bound_supported": sol.bound_supported,
        "bound_ok": bound_ok,
        "converged": bool(trace.converged),
        "wall_time": wall,
    }
    with open(args.out, "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    if args.log:
        write_convergence_csv(trace, args.log)
    if args.labels:
        assignment = assign_cells(scene, sol.b, grid)
        write_label_csv(args.labels, grid, scene.intensity.values(grid), assignment)

    ok = bool(np.all(sol.residuals <= sol.epsilon))
    print(f"groups = {trace.groups_used}, oracle evals = {trace.total_evals}, wall = {wall:.2f}s")
    print(f"max residual = {result['max_residual']:.3e} (epsilon = {sol.epsilon:.3e})")
    if bound_ok is False:
        print(
            f"warning: groups_used {trace.groups_used} exceeds bound {trace.group_bound:.1f}",
            file=sys.stderr,
        )
    print("status: " + ("converged" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_FAIL


def run_trace(args) -> int:
    scene = load_scene(args.scene)
    grid = build_quadrature(scene.cap, *args.grid)
    b = _load_b(args, scene.n_targets)
    report = validate_transport(scene, b, grid, tol_rel=args.tol)
    print(f"rays = {report.n_rays}, crease-excluded = {report.n_crease}")
    print(f"fraction within tol = {report.fraction_within:.6f}, max relative miss = {report.max_rel_miss:.3e}")
    print(f"ray energy matches measure: {report.all_match}")
    if args.out:
        write_report_json(report, args.out)
    if args.rays:
        write_ray_csv(report, grid, args.rays)
    return EXIT_OK


def run_mesh(args) -> int:
    scene = load_scene(args.scene)
    b = _load_b(args, scene.n_targets)
    mesh = export_mesh(scene, b, *args.resolution)
    write_obj(mesh, args.out)
    print(f"wrote {args.out}: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refractor",
        description="Design a poly-oval refracting surface sending prescribed "
        "energy fractions from a point source to discrete targets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check scene admissibility and report margins")
    p.add_argument("scene")
    p.add_argument("--grid", type=_parse_dims, default=(256, 256))
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(fn=run_validate)

    p = sub.add_parser("solve", help="find the parameter vector matching target weights")
    p.add_argument("scene")
    p.add_argument("--epsilon", type=float, default=None,
                   help="absolute energy tolerance (default 1e-3 * total)")
    p.add_argument("--grid", type=_parse_dims, default=(256, 256))
    p.add_argument("--max-groups", type=int, default=10000)
    p.add_argument("--bracket-tol", type=float, default=1e-9)
    p.add_argument("--out", default="result.json")
    p.add_argument("--log", default="trace.csv", help="convergence CSV ('' disables)")
    p.add_argument("--labels", default=None, help="per-node label CSV")
    p.set_defaults(fn=run_solve)

    p = sub.add_parser("trace", help="verify a parameter vector by forward ray tracing")
    p.add_argument("scene")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--from-result", default=None, help="result JSON from solve")
    group.add_argument("--b-file", default=None, help="JSON list of b values")
    p.add_argument("--grid", type=_parse_dims, default=(256, 256))
    p.add_argument("--tol", type=float, default=1e-6, help="relative miss threshold")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--rays", default=None, help="per-ray CSV path")
    p.set_defaults(fn=run_trace)

    p = sub.add_parser("mesh", help="export the surface as a Wavefront OBJ")
    p.add_argument("scene")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--from-result", default=None)
    group.add_argument("--b-file", default=None)
    p.add_argument("--resolution", type=_parse_dims, default=(128, 256))
    p.add_argument("--out", default="surface.obj")
    p.set_defaults(fn=run_mesh)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SceneValidationError, TotalInternalReflection, FileNotFoundError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except QuantizationTooCoarse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUANTIZATION
    except MaxGroupsExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAX_GROUPS


if __name__ == "__main__":
    raise SystemExit(main())
