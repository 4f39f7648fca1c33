import hashlib
import json
import logging
import os
import pickle
from dataclasses import asdict
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.electrostatics.field import QuadratureConfig
from src.morse.critical import CriticalPoint, SearchConfig
from src.morse.flow import FlowArc

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

UNITS = {
    "charge": "uniform density 1 per unit length",
    "length": "units of the knot definition",
    "potential": "integral of ds / |x - r(s)| over the knot (length^0)",
}


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=True)


def metadata(quad: QuadratureConfig, search: Optional[SearchConfig] = None, **extra) -> Dict:
    """Units and tolerances every written file carries."""
    tolerances = {"tol_q": quad.tol, "initial_nodes": quad.initial_nodes, "max_nodes": quad.max_nodes}
    if quad.density_delta:
        tolerances["density_delta"] = quad.density_delta
    if search is not None:
        tolerances.update(n_grid=search.n_grid, tol_res=search.tol_res, tol_deg=search.tol_deg, r_dup=search.r_dup)
    tolerances.update(extra)
    return {"units": UNITS, "tolerances": tolerances}


def _header_lines(meta: Dict) -> List[str]:
    lines = [f"# units.{key}: {value}" for key, value in meta["units"].items()]
    lines += [f"# tolerances.{key}: {value!r}" for key, value in sorted(meta["tolerances"].items())]
    return lines


def write_json(path: str, data: Dict) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(dumps(data) + "\n")
    logger.info(f"Saved {path}")
    return path


def _write_csv(path: str, df: pd.DataFrame, meta: Dict) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write("\n".join(_header_lines(meta)) + "\n")
        df.to_csv(f, index=False, float_format="%.17g")
    logger.info(f"Saved {path}")
    return path


def critical_points_frame(points: Sequence[CriticalPoint]) -> pd.DataFrame:
    rows = []
    for cp in points:
        row = {f"x{k}": cp.x[k] for k in range(3)}
        row.update(phi=cp.phi, residual=cp.residual)
        row.update({f"eigval{k}": cp.eigvals[k] for k in range(3)})
        row.update({f"eigvec{k}_{c}": cp.eigvecs[c, k] for k in range(3) for c in range(3)})
        row.update(index=cp.index, nondeg_margin=cp.nondeg_margin)
        rows.append(row)
    return pd.DataFrame(rows).astype({"index": "Int64"}) if rows else pd.DataFrame(rows)


def arcs_frame(arcs: Sequence[FlowArc]) -> pd.DataFrame:
    frames = [
        pd.DataFrame(
            {
                "arc": arc.name,
                "step": range(len(arc.points)),
                "x": arc.points[:, 0],
                "y": arc.points[:, 1],
                "z": arc.points[:, 2],
                "phi": arc.phi,
            }
        )
        for arc in arcs
    ]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["arc", "step", "x", "y", "z", "phi"])


def write_critical_points(out_dir: str, points: Sequence[CriticalPoint], meta: Dict, fmt: str) -> str:
    if fmt == "json":
        return write_json(
            os.path.join(out_dir, "critical_points.json"),
            {"metadata": meta, "critical_points": [cp.to_dict() for cp in points]},
        )
    if fmt == "csv":
        return _write_csv(os.path.join(out_dir, "critical_points.csv"), critical_points_frame(points), meta)
    raise ValueError(f"Critical points are exported as json or csv, not {fmt}.")


def write_obj(path: str, arcs: Sequence[FlowArc], meta: Dict) -> str:
    """One line object per arc, named gamma_<i>_<±> or theta_<j>_<±>; vertex indices are global and 1-based."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = _header_lines(meta)
    offset = 0
    for arc in arcs:
        lines.append(f"o {arc.name}")
        lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in arc.points]
        lines.append("l " + " ".join(str(offset + k + 1) for k in range(len(arc.points))))
        offset += len(arc.points)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"Saved {path}")
    return path


def write_arcs(out_dir: str, arcs: Sequence[FlowArc], meta: Dict, fmt: str) -> str:
    if fmt == "obj":
        return write_obj(os.path.join(out_dir, "arcs.obj"), arcs, meta)
    if fmt == "csv":
        return _write_csv(os.path.join(out_dir, "arcs.csv"), arcs_frame(arcs), meta)
    if fmt == "json":
        data = {
            "metadata": meta,
            "arcs": [
                {
                    "name": arc.name,
                    "kind": arc.kind.value,
                    "termination": arc.termination.value,
                    "points": arc.points.tolist(),
                    "phi": arc.phi.tolist(),
                }
                for arc in arcs
            ],
        }
        return write_json(os.path.join(out_dir, "arcs.json"), data)
    raise ValueError(f"Unknown arc export format {fmt}.")


def scan_cache_key(knot_path: str, search: SearchConfig, quad: QuadratureConfig) -> str:
    """sha256 over the knot file bytes and the settings that change scan results (not the job count)."""
    settings = {k: v for k, v in asdict(search).items() if k not in ("n_jobs", "batch_size")}
    digest = hashlib.sha256()
    with open(knot_path, "rb") as f:
        digest.update(f.read())
    digest.update(json.dumps(settings, sort_keys=True).encode())
    digest.update(json.dumps(asdict(quad), sort_keys=True).encode())
    return digest.hexdigest()


def cache_scan(cache_file: str, points: Sequence[CriticalPoint]) -> None:
    os.makedirs(os.path.dirname(cache_file), exist_ok=True)
    with open(cache_file, "wb") as f:
        pickle.dump([cp.store() for cp in points], f, protocol=pickle.HIGHEST_PROTOCOL)


def load_scan(cache_file: str) -> List[CriticalPoint]:
    with open(cache_file, "rb") as f:
        info = pickle.load(f)
    return [CriticalPoint.from_dict(data) for data in info]
