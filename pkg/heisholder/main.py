import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from heisholder.config import Config, load_config, log_json, log_level
from heisholder.services.curves import (
    close_with_geodesic,
    curve_length_dc,
    is_horizontal,
    signed_area,
    translate_to_origin,
)
from heisholder.services.filling import (
    PERIMETER_SLACK,
    FillingError,
    coarse_filling,
    empirical_count_constant,
    filling_counts,
    triangle_count,
    verify_filling,
)
from heisholder.services.heis_core import ConvergenceError
from heisholder.services.holder2d import build_tree, export_mesh, holder_estimate, predicted_exponent_2d
from heisholder.services import selfsim
from heisholder.utils.io import (
    filling_to_document,
    grid_to_document,
    read_curve,
    read_planar,
    skeleton_to_obj,
    write_curve,
    write_json,
    write_obj,
)
from heisholder.utils.tree_store import load_tree, save_tree

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
_NOT_INPUTS = {"report", "log_level", "log_json", "config"}


class Check(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str
    passed: bool = Field(alias="pass")
    value: Optional[float] = None
    bound: Optional[float] = None


class Report(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    command: str
    inputs_digest: str = Field(alias="inputs-digest")
    outputs: Dict[str, str]
    checks: List[Check]


@dataclass
class Outcome:
    result: Dict[str, Any]
    outputs: Dict[str, str] = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)
    inputs: List[str] = field(default_factory=list)


def configure_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """Single stderr handler; stdout is kept for command results."""
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(structlog.stdlib.ProcessorFormatter(
            processors=[
                structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                structlog.processors.JSONRenderer(sort_keys=True),
            ],
            foreign_pre_chain=[
                structlog.stdlib.add_log_level,
                structlog.stdlib.add_logger_name,
                structlog.processors.TimeStamper(fmt="iso"),
            ],
        ))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    level = level.upper()
    root.setLevel(level if level in _LEVELS else "INFO")


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(float(obj))
    return obj


def _check(name: str, passed: bool, value: Optional[float] = None, bound: Optional[float] = None) -> Check:
    return Check(name=name, passed=bool(passed), value=_finite(value), bound=_finite(bound))


def _inputs_digest(args: argparse.Namespace, files: Sequence[str]) -> str:
    payload = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_INPUTS}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode())
    for path in files:
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()


# commands

def cmd_lift(args: argparse.Namespace, cfg: Config) -> Outcome:
    curve = read_planar(args.input)
    if not curve.closed and not args.open:
        curve = close_with_geodesic(curve, cfg.tolerances.distance)
    out = cfg.output_for("lift", args.out)
    write_curve(out, curve)
    horizontal = is_horizontal(curve, cfg.tolerances.horizontal)
    result = {
        "closed": curve.closed,
        "length": curve_length_dc(curve),
        "signed_area": signed_area(curve),
        "segments": len(curve.segments),
        "out": out,
    }
    checks = [_check("horizontal", horizontal), _check("closed", curve.closed or args.open)]
    return Outcome(result, {"curve": out}, checks, [args.input])


def cmd_fill(args: argparse.Namespace, cfg: Config) -> Outcome:
    params = cfg.carnot_params()
    tol = cfg.tolerances.distance
    curve = read_curve(args.input, tol)
    moved, g = translate_to_origin(curve)
    scale = 1.0
    if args.eps is not None:
        if not args.eps > 0:
            raise ValueError(f"--eps must be positive, got {args.eps}")
        scale = 6.0 * params.L / args.eps
        moved = moved.dilate(scale)
    M, m = filling_counts(curve_length_dc(moved), params)
    if triangle_count(M, m) > cfg.max_triangles:
        raise ValueError(f"filling needs {triangle_count(M, m)} triangles, above max_triangles={cfg.max_triangles}")

    filling = coarse_filling(moved, params, verify=False, tol=tol)
    report = verify_filling(filling, params.L)
    if not report.ok:
        raise FillingError(f"filling violates its guarantees: max perimeter {report.max_perimeter:.6g}, "
                           f"count {report.count} vs bound {report.bound}")
    edge_samples = args.edge_samples if args.edge_samples else (8 if args.obj else 0)
    doc = filling_to_document(filling, scale, g, report.max_perimeter, edge_samples)
    out = cfg.output_for("fill", args.out)
    write_json(out, doc)
    outputs = {"filling": out}
    if args.obj:
        vertices = np.array([p for edge in doc.edges for p in edge], dtype=float)
        starts = np.cumsum([0] + [len(edge) for edge in doc.edges])
        write_obj(args.obj, vertices, [range(a, b) for a, b in zip(starts[:-1], starts[1:])])
        outputs["skeleton"] = args.obj

    result = {
        "r": filling.r,
        "M": filling.M,
        "m": filling.m,
        "count": filling.count,
        "bound": filling.bound,
        "max_perimeter": report.max_perimeter,
        "scale": scale,
        "out": out,
    }
    checks = [
        _check("perimeter", report.max_perimeter <= 6.0 * params.L * (1.0 + PERIMETER_SLACK), report.max_perimeter, 6.0 * params.L),
        _check("count", filling.count < filling.bound, filling.count, filling.bound),
    ]
    return Outcome(result, outputs, checks, [args.input])


def _extension_checks(tree, seed: int, probes: int) -> List[Check]:
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * math.pi, 100)
    boundary = 0.0
    for a in angles:
        got = tree.evaluate([math.cos(a), math.sin(a)]).point.as_array()
        want = tree.gamma.at((a / (2.0 * math.pi)) % 1.0).as_array()
        boundary = max(boundary, float(np.max(np.abs(got - want))))

    radius = np.sqrt(rng.uniform(0.0, 1.0, probes))
    theta = rng.uniform(0.0, 2.0 * math.pi, probes)
    for x, y in zip(radius * np.cos(theta), radius * np.sin(theta)):
        tree.evaluate([x, y])

    interface = 0.0
    decay = 0.0
    ring = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    for node in tree.materialized():
        if not node.path:
            continue
        parent = tree.node(node.path[:-1])
        t = node.path[-1]
        decay = max(decay, node.length * tree.n_eff / parent.length)
        for a in ring:
            inner = node.boundary_value(a).as_array()
            outer = parent.outer_value(t, np.array([math.cos(a), math.sin(a)])).as_array()
            interface = max(interface, float(np.max(np.abs(inner - outer))))
    return [
        _check("boundary_restriction", boundary <= 1e-9, boundary, 1e-9),
        _check("interface_continuity", interface <= 1e-9, interface, 1e-9),
        _check("child_decay", decay <= 1.0 + 1e-6, decay, 1.0 + 1e-6),
    ]


def cmd_extend(args: argparse.Namespace, cfg: Config) -> Outcome:
    params = cfg.carnot_params()
    gamma = read_curve(args.input, cfg.tolerances.distance)
    tree = build_tree(gamma, args.depth, args.n, params, lazy=not args.eager,
                      max_nodes=cfg.max_nodes, tol=cfg.tolerances.distance)
    checks = _extension_checks(tree, cfg.seed, args.probes)
    out = cfg.output_for("extend", args.out)
    stored = save_tree(tree, out)
    result = {
        "depth": tree.depth,
        "n_eff": tree.n_eff,
        "lazy": tree.lazy,
        "root_children": tree.root.child_count,
        "stored_nodes": stored,
        "out": out,
    }
    return Outcome(result, {"tree": out}, checks, [args.input])


def cmd_eval(args: argparse.Namespace, cfg: Config) -> Outcome:
    tree = load_tree(args.tree)
    tol = args.tol if args.tol is not None else cfg.tolerances.evaluate
    evaluation = tree.evaluate([args.x, args.y], tol)
    result = {
        "point": evaluation.point.as_list(),
        "path": list(evaluation.path),
        "sliver": evaluation.sliver,
        "error_bound": evaluation.error_bound,
    }
    checks = [_check("error_bound", evaluation.error_bound <= tol, evaluation.error_bound, tol)]
    return Outcome(result, {}, checks, [args.tree])


def cmd_exponent(args: argparse.Namespace, cfg: Config) -> Outcome:
    tree = load_tree(args.tree)
    seed = args.command_seed if args.command_seed is not None else cfg.seed
    estimate = holder_estimate(tree, args.alpha, args.pairs, seed)
    K_emp = empirical_count_constant(tree.n_eff, tree.params)
    predicted = predicted_exponent_2d(tree.n_eff, max(1.0, K_emp), tree.params.k + 1)
    result = {
        "lambda_hat": estimate.lambda_hat,
        "alpha_fit": estimate.alpha_fit,
        "predicted": predicted,
        "K_emp": K_emp,
        "pairs": estimate.pairs,
        "slivers_excluded": estimate.slivers_excluded,
        "envelope": estimate.envelope.to_dict(orient="records"),
    }
    checks = [
        _check("alpha_fit", math.isfinite(estimate.alpha_fit) and estimate.alpha_fit >= 0.9 * predicted,
               estimate.alpha_fit, 0.9 * predicted),
        _check("lambda_hat", math.isfinite(estimate.lambda_hat), estimate.lambda_hat),
    ]
    return Outcome(result, {}, checks, [args.tree])


def cmd_mesh(args: argparse.Namespace, cfg: Config) -> Outcome:
    tree = load_tree(args.tree)
    mesh = export_mesh(tree, args.depth, args.samples, cfg.max_nodes)
    out = cfg.output_for("mesh", args.out)
    write_obj(out, mesh.vertices, mesh.lines)
    result = {"polylines": len(mesh.lines), "vertices": int(len(mesh.vertices)), "out": out}
    return Outcome(result, {"mesh": out}, [], [args.tree])


def cmd_params(args: argparse.Namespace, cfg: Config) -> Outcome:
    params = cfg.carnot_params(n=args.n, c=args.c, mu=args.mu, b=args.b)
    n, c, i = params.n, params.c, args.i
    eta, rho = selfsim.eta(n, c), selfsim.rho(n, c)
    identity = abs(eta * math.log2(rho) + n) / n
    displacement = selfsim.displacement_bounds(params.b, n, i)
    telescope = selfsim.neighborhood_telescope(params.mu, n)
    neighborhood = selfsim.neighborhood_bound(params.mu, n)
    result = {
        "n": n,
        "c": c,
        "eta": eta,
        "rho": rho,
        "E": params.E,
        "avol": {"d2": selfsim.avol_bound(2, n, c), "d3": selfsim.avol_bound(3, n, c)},
        "avol_compound": {"depth": i, "d2": selfsim.avol_bound_compound(2, n, c, i),
                          "d3": selfsim.avol_bound_compound(3, n, c, i)},
        "displacement": {"i": i, "step": displacement.step, "total": displacement.total},
        "neighborhood": {"bound": neighborhood, "telescope": telescope},
        "properness": selfsim.properness_bound(params.mu, n, i),
        "ball_radius": selfsim.ball_radius(n, c, i),
        "cell_image_diameter": selfsim.cell_image_diameter_bound(params.b, params.mu, n, i),
        "provenance": {k: v.value for k, v in params.provenance.items()},
    }
    checks = [
        _check("eta_rho_identity", identity <= 1e-12, identity, 1e-12),
        _check("eta_rho_levels", selfsim.eta_rho_residual(n, c) <= 1e-12, selfsim.eta_rho_residual(n, c), 1e-12),
        _check("displacement_tail", displacement.tail <= displacement.total, displacement.tail, displacement.total),
        _check("neighborhood_telescope", telescope <= neighborhood, telescope, neighborhood),
    ]
    return Outcome(result, {}, checks, [])


def cmd_skeleton(args: argparse.Namespace, cfg: Config) -> Outcome:
    window = selfsim.skeleton_window(args.n0, args.n, args.box)
    mu = selfsim.measure_cell_diameter(window, cfg.tolerances.distance)
    vertices, lines = skeleton_to_obj(window, args.max_edges)
    out = cfg.output_for("skeleton", args.out)
    write_obj(out, vertices, lines)
    result = {
        "n0": window.n0,
        "n": window.checked_n,
        "box": window.box,
        "edges": len(lines),
        "checked_edges": window.checked_edges,
        "mu": mu,
        "out": out,
    }
    checks = [_check("dilation_invariance", True, window.checked_edges)]
    return Outcome(result, {"skeleton": out}, checks, [])


def cmd_grid(args: argparse.Namespace, cfg: Config) -> Outcome:
    balls = selfsim.separated_grid(args.d, args.count)
    separated = selfsim.is_two_separated(balls)
    out = cfg.output_for("grid", args.out)
    write_json(out, grid_to_document(args.d, balls, separated))
    lower = selfsim.grid_radius_lower_bound(args.d, args.count)
    result = {"d": args.d, "count": len(balls), "radius": balls[0].radius, "separated": separated, "out": out}
    checks = [
        _check("two_separated", separated),
        _check("radius_lower_bound", balls[0].radius >= lower, balls[0].radius, lower),
    ]
    return Outcome(result, {"grid": out}, checks, [])


COMMANDS: Dict[str, Callable[[argparse.Namespace, Config], Outcome]] = {
    "lift": cmd_lift,
    "fill": cmd_fill,
    "extend": cmd_extend,
    "eval": cmd_eval,
    "exponent": cmd_exponent,
    "mesh": cmd_mesh,
    "params": cmd_params,
    "skeleton": cmd_skeleton,
    "grid": cmd_grid,
}


def _add_common(parser: argparse.ArgumentParser, default=None) -> None:
    # subcommands repeat these with SUPPRESS so a value given before the command survives
    parser.add_argument("--config", default=default, help="JSON config file")
    parser.add_argument("--report", default=default, help="write a JSON report of the checks to this path")
    parser.add_argument("--log-level", type=str.upper, choices=_LEVELS, default=default)
    parser.add_argument("--log-json", action="store_true", default=default)


class _CommandParser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        _add_common(self, argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heis", description="Hölder extensions of curves in the Heisenberg group")
    _add_common(parser)
    parser.add_argument("--seed", type=int, help="random seed (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_CommandParser)

    p = sub.add_parser("lift", help="lift a planar polyline to a horizontal curve")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--open", action="store_true", help="do not close the lift with a geodesic")

    p = sub.add_parser("fill", help="coarse filling of a closed horizontal curve")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--eps", type=float, help="target triangle perimeter in the original scale")
    p.add_argument("--edge-samples", type=int, default=0)
    p.add_argument("--obj", help="also write the 1-skeleton polylines as OBJ")

    p = sub.add_parser("extend", help="build the subdivision tree and store it")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--n", type=int, default=8, help="length decay factor per level")
    p.add_argument("--out")
    p.add_argument("--eager", action="store_true")
    p.add_argument("--probes", type=int, default=16)

    p = sub.add_parser("eval", help="evaluate a stored tree at a disc point")
    p.add_argument("--tree", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("exponent", help="estimate the Hölder exponent of a stored tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--pairs", type=int, default=10000)
    p.add_argument("--seed", dest="command_seed", type=int)

    p = sub.add_parser("mesh", help="export node curves as OBJ polylines")
    p.add_argument("--tree", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--out")

    p = sub.add_parser("params", help="print the scaling constants")
    p.add_argument("--n", type=int)
    p.add_argument("--c", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--i", type=int, default=1, help="refinement level for the level-dependent bounds")
    p.add_argument("--json", action="store_true", help="one-line output")

    p = sub.add_parser("skeleton", help="verify and export the dyadic horizontal skeleton")
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--box", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--max-edges", type=int, default=200000)

    p = sub.add_parser("grid", help="2-separated ball grid")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    configure_logging(args.log_level or log_level(), args.log_json if args.log_json is not None else log_json())

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        outcome = COMMANDS[args.command](args, cfg)
        result = _clean(outcome.result)
        if getattr(args, "json", False):
            print(json.dumps(result, sort_keys=True))
        else:
            print(json.dumps(result, indent=2, sort_keys=True))
        if args.report:
            report = Report(
                command=args.command,
                inputs_digest=_inputs_digest(args, outcome.inputs),
                outputs=outcome.outputs,
                checks=outcome.checks,
            )
            write_json(args.report, report.model_dump(mode="json", by_alias=True))
        failed = [c.name for c in outcome.checks if not c.passed]
        if failed:
            logger.error(f"Checks not passed: {', '.join(failed)}")
            return EXIT_FAILURE
        return EXIT_OK
    except ConvergenceError as e:
        logger.error(f"Did not converge: {e}")
        return EXIT_NONCONVERGENCE
    except (FillingError, selfsim.SkeletonError) as e:
        logger.error(f"Construction failed its own guarantees: {e}")
        return EXIT_FAILURE
    except (ValidationError, ValueError, FileNotFoundError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
