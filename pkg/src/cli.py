import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import click
import numpy as np

from src.electrostatics.field import QuadratureConfig, field_sample
from src.electrostatics.oracle import OracleConfig, brute_scan, fd_gradient, fd_hessian, reference_potential
from src.errors import (
    DegenerateProjection,
    InconsistentCriticalSet,
    IndexOutOfRange,
    KnotFileError,
    TerminationMismatch,
    TooCloseToKnot,
    UnreliableCount,
)
from src.exports import (
    cache_scan,
    dumps,
    load_scan,
    metadata,
    scan_cache_key,
    write_arcs,
    write_critical_points,
    write_json,
)
from src.knots.curve import KnotCurve, crossing_upper_bound, knot_label
from src.knots.io import load_knot_file
from src.morse.critical import CriticalPoint, SearchConfig, find_critical_points
from src.morse.flow import FlowConfig, TunnelingBundle, build_tunneling, descending_flow_census
from src.morse.report import MorseReport, TunnelCatalog, apply_bound, assemble_report

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

EXIT_TOO_CLOSE = 2
EXIT_PARSE = 3
EXIT_INCOMPLETE = 4
EXIT_INCONSISTENT = 5


class PipelineFailure(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass(frozen=True)
class RunConfig:
    knot: str
    out: str = "results"
    fmt: str = "json"
    seed: int = 0
    census: int = 0
    point: Optional[Tuple[float, float, float]] = None
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        assert self.fmt in ("json", "csv", "obj"), f"Unknown output format {self.fmt}."
        assert self.census >= 0, f"Census size must be non-negative, got {self.census}."
        assert self.seed >= 0, f"Seed must be non-negative, got {self.seed}."

    @property
    def cache_file(self) -> str:
        return os.path.join(self.out, ".cache", f"scan_{scan_cache_key(self.knot, self.search, self.quad)}.pkl")


@contextmanager
def exit_codes():
    """Translate domain exceptions into the documented exit codes."""
    try:
        yield
    except KnotFileError as e:
        raise PipelineFailure(f"Cannot parse knot file: {e}", EXIT_PARSE) from e
    except TooCloseToKnot as e:
        raise PipelineFailure(str(e), EXIT_TOO_CLOSE) from e
    except UnreliableCount as e:
        raise PipelineFailure(str(e), EXIT_INCOMPLETE) from e
    except (IndexOutOfRange, InconsistentCriticalSet, TerminationMismatch) as e:
        logger.error(f"Internal inconsistency: {e}")
        raise PipelineFailure(str(e), EXIT_INCONSISTENT) from e


@contextmanager
def invalid_options():
    """Failed option checks of the config dataclasses exit with the parse code."""
    try:
        yield
    except AssertionError as e:
        raise PipelineFailure(f"Invalid option: {e}", EXIT_PARSE) from e


def _parse_point(text: Optional[str]) -> Optional[Tuple[float, float, float]]:
    if text is None:
        return None
    try:
        point = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise PipelineFailure(f"--point expects x,y,z, got {text!r}", EXIT_PARSE) from None
    if len(point) != 3:
        raise PipelineFailure(f"--point expects three coordinates, got {text!r}", EXIT_PARSE)
    return point


def _writable(out: str) -> str:
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PipelineFailure(f"Output directory {out} is not writable", EXIT_PARSE)
    return out


def cmd_eval(cfg: RunConfig) -> Dict:
    curve = load_knot_file(cfg.knot)
    return field_sample(curve, np.asarray(cfg.point, dtype=float), cfg.quad).to_dict()


def run_scan(cfg: RunConfig, curve: KnotCurve) -> List[CriticalPoint]:
    """Critical points of the knot, from the scan cache when the knot file and settings are unchanged."""
    if os.path.isfile(cfg.cache_file):
        logger.info(f"Loading cached scan from: {cfg.cache_file}")
        return load_scan(cfg.cache_file)

    points = find_critical_points(curve, cfg.search, cfg.quad)
    cache_scan(cfg.cache_file, points)
    return points


def cmd_scan(cfg: RunConfig) -> str:
    curve = load_knot_file(cfg.knot)
    points = run_scan(cfg, curve)
    meta = metadata(cfg.quad, cfg.search.resolve(curve), knot=knot_label(curve))
    return write_critical_points(_writable(cfg.out), points, meta, "csv" if cfg.fmt == "csv" else "json")


def resolve_flow(cfg: RunConfig, curve: KnotCurve) -> FlowConfig:
    # The far-field radius can only be checked against the knot diameter once the knot is loaded.
    with invalid_options():
        return cfg.flow.resolve(curve, cfg.search)


def run_flow(cfg: RunConfig, curve: KnotCurve, points: List[CriticalPoint]) -> TunnelingBundle:
    return build_tunneling(curve, points, resolve_flow(cfg, curve), cfg.quad, cfg.search)


def cmd_flow(cfg: RunConfig) -> str:
    curve = load_knot_file(cfg.knot)
    flow = resolve_flow(cfg, curve)
    points = run_scan(cfg, curve)
    bundle = run_flow(cfg, curve, points)
    meta = metadata(
        cfg.quad,
        cfg.search.resolve(curve),
        knot=knot_label(curve),
        rtol=flow.rtol,
        atol=flow.atol,
        tube_radius=flow.tube_radius,
        far_field_radius=flow.far_field_radius,
        launch_offset=flow.launch_offset,
    )
    return write_arcs(_writable(cfg.out), bundle.arcs, meta, "obj" if cfg.fmt == "obj" else cfg.fmt)


def _attach_flow(report: MorseReport, bundle: TunnelingBundle, slack: float) -> None:
    report.arcs = {"gamma": bundle.gamma_count, "theta": bundle.theta_count, "anomalies": len(bundle.anomalies)}
    report.notes.extend(bundle.anomalies)
    worst = max((arc.monotonicity_violation() for arc in bundle.arcs), default=0.0)
    if worst > slack:
        report.notes.append(f"largest per-step potential monotonicity violation {worst:.2e} exceeds {slack:.0e}")


def cmd_report(cfg: RunConfig) -> Tuple[MorseReport, Dict]:
    """Scan, trace separatrices, assemble the Morse report and check it against the tunnel catalog."""
    curve = load_knot_file(cfg.knot)
    label = knot_label(curve)
    flow = resolve_flow(cfg, curve)
    points = run_scan(cfg, curve)
    report = assemble_report(label, points)

    if report.search_complete:
        bundle = run_flow(cfg, curve, points)
        _attach_flow(report, bundle, flow.monotonicity_slack)
        if cfg.census:
            census = descending_flow_census(curve, cfg.census, flow, points, bundle.gammas, cfg.quad, cfg.seed)
            report.arcs.update({f"census_{key}": value for key, value in census.counts.items()})
            report.arcs["census_left_infinity_neighbourhood"] = census.left_infinity_neighbourhood
    else:
        report.notes.append("separatrices not traced: critical point set incomplete")

    try:
        report.t_upper_bounds["crossings"] = crossing_upper_bound(curve)
    except DegenerateProjection as e:
        report.notes.append(f"crossing bound unavailable: {e}")

    catalog = TunnelCatalog()
    apply_bound(report, catalog)
    if catalog.note(label):
        report.notes.append(catalog.note(label))

    meta = metadata(cfg.quad, cfg.search.resolve(curve), knot=label, seed=cfg.seed, census=cfg.census)
    return report, meta


def cmd_oracle(cfg: RunConfig, grid: Optional[int]) -> Dict:
    curve = load_knot_file(cfg.knot)
    oracle_cfg = OracleConfig()
    result: Dict = {"knot": knot_label(curve)}
    if cfg.point is not None:
        x = np.asarray(cfg.point, dtype=float)
        result.update(
            x=x.tolist(),
            phi=reference_potential(curve, x, oracle_cfg),
            fd_gradient=fd_gradient(curve, x, cfg=oracle_cfg).tolist(),
            fd_hessian=fd_hessian(curve, x, cfg=oracle_cfg).tolist(),
        )
    if grid:
        result["basins"] = [
            {"center": basin.center.tolist(), "cells": len(basin.cells), "grad_norm": basin.value}
            for basin in brute_scan(curve, grid, oracle_cfg)
        ]
    return result


def _run_config(knot, out="results", fmt="json", seed=0, census=0, point=None, grid=None, tol_q=None, tol_res=None,
                far_field=None, n_jobs=-1) -> RunConfig:
    with invalid_options():
        quad = QuadratureConfig() if tol_q is None else QuadratureConfig(tol=tol_q)
        search = SearchConfig(n_jobs=n_jobs, tol_res=tol_res, **({} if grid is None else {"n_grid": grid}))
        flow = FlowConfig(far_field_radius=far_field, n_jobs=n_jobs)
        return RunConfig(
            knot=knot, out=out, fmt=fmt, seed=seed, census=census, point=_parse_point(point), quad=quad,
            search=search, flow=flow,
        )


knot_option = click.option(
    "--knot", type=click.Path(exists=True, dir_okay=False), required=True, help="Path to a JSON knot definition."
)
out_option = click.option("--out", type=click.Path(file_okay=False), default="results", help="Output directory.")
grid_option = click.option("--grid", type=int, default=None, help="Seed grid resolution per axis (default 24).")
tol_q_option = click.option("--tol-q", type=float, default=None, help="Quadrature tolerance (default 1e-10).")
tol_res_option = click.option(
    "--tol-res", type=float, default=None, help="Newton residual tolerance (default 1e-8 L / diameter^2)."
)
n_jobs_option = click.option("--n-jobs", default=-1, help="Number of parallel jobs. If set to -1, use all available CPU cores.")


@click.group("main", context_settings={"show_default": True})
def main():
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s: %(message)s")


@main.command("eval")
@knot_option
@click.option("--point", type=str, required=True, help="Evaluation point as x,y,z.")
@tol_q_option
def eval_command(knot: str, point: str, tol_q: Optional[float]):
    """Print Φ, ∇Φ and the Hessian at a point as JSON."""
    with exit_codes():
        click.echo(dumps(cmd_eval(_run_config(knot, point=point, tol_q=tol_q))))


@main.command("scan")
@knot_option
@grid_option
@tol_q_option
@tol_res_option
@out_option
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", help="Export format.")
@n_jobs_option
def scan_command(knot, grid, tol_q, tol_res, out, fmt, n_jobs):
    """Find and classify the finite critical points."""
    with exit_codes():
        cmd_scan(_run_config(knot, out=out, fmt=fmt, grid=grid, tol_q=tol_q, tol_res=tol_res, n_jobs=n_jobs))


@main.command("flow")
@knot_option
@grid_option
@tol_q_option
@tol_res_option
@out_option
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "obj"]), default="obj", help="Export format.")
@click.option("--far-field", type=float, default=None, help="Far-field radius (default 50 knot diameters).")
@n_jobs_option
def flow_command(knot, grid, tol_q, tol_res, out, fmt, far_field, n_jobs):
    """Trace tunnel arcs and loops; reuses a cached scan."""
    with exit_codes():
        cfg = _run_config(
            knot, out=out, fmt=fmt, grid=grid, tol_q=tol_q, tol_res=tol_res, far_field=far_field, n_jobs=n_jobs
        )
        cmd_flow(cfg)


@main.command("report")
@knot_option
@grid_option
@tol_q_option
@tol_res_option
@out_option
@click.option("--far-field", type=float, default=None, help="Far-field radius (default 50 knot diameters).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, help="Seed of the census sampling.")
@click.option("--census", type=int, default=0, help="Number of random descending flows to attach.")
@n_jobs_option
def report_command(knot, grid, tol_q, tol_res, out, far_field, seed, census, n_jobs):
    """Full pipeline: scan, separatrices, Morse report and the tunnel-number bound."""
    with exit_codes():
        cfg = _run_config(
            knot, out=out, grid=grid, tol_q=tol_q, tol_res=tol_res, far_field=far_field, seed=seed, census=census,
            n_jobs=n_jobs,
        )
        report, meta = cmd_report(cfg)
        data = {**report.to_dict(), "metadata": meta}
        write_json(os.path.join(_writable(cfg.out), "report.json"), data)
        click.echo(dumps(data))
        if not report.search_complete:
            raise PipelineFailure("m1 - m2 != 1: search incomplete", EXIT_INCOMPLETE)


@main.command("oracle")
@knot_option
@click.option("--point", type=str, default=None, help="Point for the reference potential and derivatives, as x,y,z.")
@click.option("--grid", type=int, default=None, help="Run the brute-force |∇Φ| basin scan on an N^3 grid.")
def oracle_command(knot, point, grid):
    """Reference values from the slow independent implementations."""
    with exit_codes():
        click.echo(dumps(cmd_oracle(_run_config(knot, point=point), grid)))


if __name__ == "__main__":
    main()
