"""Persistence for all pipeline artifacts.

Text formats are JSON / JSON-lines with fixed key order and shortest
round-trip float repr, so identical objects serialize byte-identically.
Member-index and grid payloads go to little-endian binary sidecars.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .corona import CoronaParams, CoronaResult, Regime
from .errors import InputError
from .lattice import Cube, DyadicTree
from .metric import Surface
from .planes import BetaRecord, TPlane
from .regularity import GridFunction

__all__ = [
    "save_surface",
    "load_surface",
    "save_tree",
    "load_tree",
    "save_beta_records",
    "load_beta_records",
    "save_corona",
    "load_corona",
    "save_gridfunction",
    "load_gridfunction",
    "save_graphfield",
    "save_json",
]


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


def save_json(obj, path):
    Path(path).write_text(_dumps(obj) + "\n", encoding="utf-8")


# -- surfaces ---------------------------------------------------------------


def save_surface(surface: Surface, path):
    lines = [_dumps({"n": surface.n, "h": surface.spacing})]
    for i in range(surface.size):
        lines.append(
            _dumps({"x": list(surface.x[i]), "t": float(surface.t[i]), "w": float(surface.w[i])})
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_surface(path, validate: bool = True) -> Surface:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InputError(f"{path}: empty surface file")
    try:
        header = json.loads(lines[0])
        n = int(header["n"])
        h = float(header["h"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}:1: bad header ({exc})") from exc
    xs, ts, ws = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            x = [float(v) for v in rec["x"]]
            t = float(rec["t"])
            w = float(rec["w"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: malformed record ({exc})") from exc
        if len(x) != n:
            raise InputError(f"{path}:{lineno}: spatial dimension {len(x)} != header n={n}")
        if w < 0:
            raise InputError(f"{path}:{lineno}: negative weight {w}")
        xs.append(x)
        ts.append(t)
        ws.append(w)
    surface = Surface(np.asarray(xs), np.asarray(ts), np.asarray(ws), spacing=h, validate=validate)
    gap = surface._max_isolation() if surface.size > 1 else h
    if gap > 10.0 * h or gap < h / 10.0:
        surface.warnings = surface.warnings + (
            f"header h={h:g} inconsistent with measured neighbor gaps (~{gap:g})",
        )
    return surface


# -- trees -------------------------------------------------------------------


def save_tree(tree: DyadicTree, path):
    path = Path(path)
    lines = [_dumps({"scale0": tree.scale0, "k_max": tree.k_max, "min_ell_factor": tree.min_ell_factor})]
    members = []
    offset = 0
    for cid in tree.all_ids():
        q = tree.cubes[cid]
        cx, ct = tree.center_point(q)
        lines.append(_dumps({
            "id": q.id,
            "k": q.k,
            "parent": q.parent,
            "center": {"index": q.center_index, "x": list(cx), "t": ct},
            "ell": q.ell,
            "sigma": q.sigma,
            "radius": q.radius,
            "diam": q.diam,
            "members_offset": offset,
            "members_len": int(q.members.size),
        }))
        members.append(q.members.astype("<i4"))
        offset += q.members.size
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    np.concatenate(members).tofile(path.with_suffix(path.suffix + ".members.bin"))


def load_tree(path, surface: Surface) -> DyadicTree:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    sidecar = np.fromfile(path.with_suffix(path.suffix + ".members.bin"), dtype="<i4")
    cubes = {}
    generations: dict[int, list] = {}
    children: dict[str, list] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{lineno}: malformed cube ({exc})") from exc
        mem = sidecar[rec["members_offset"]:rec["members_offset"] + rec["members_len"]]
        cube = Cube(
            id=rec["id"], k=int(rec["k"]), center_index=int(rec["center"]["index"]),
            members=mem.astype(np.int64), ell=float(rec["ell"]), sigma=float(rec["sigma"]),
            radius=float(rec["radius"]), diam=float(rec["diam"]), parent=rec["parent"],
        )
        cubes[cube.id] = cube
        generations.setdefault(cube.k, []).append(cube.id)
        if cube.parent is not None:
            children.setdefault(cube.parent, []).append(cube.id)
    for cid, kids in children.items():
        cubes[cid].children = sorted(kids)
    for k in generations:
        generations[k].sort()
    tree = DyadicTree(surface, float(header["scale0"]), cubes, generations)
    tree.min_ell_factor = float(header.get("min_ell_factor", 20.0))
    return tree


# -- beta records -------------------------------------------------------------


def _plane_obj(plane: TPlane | None):
    if plane is None:
        return None
    return {"normal": list(plane.normal), "offset": plane.offset}


def _plane_from(obj) -> TPlane | None:
    if obj is None:
        return None
    return TPlane(np.asarray(obj["normal"]), float(obj["offset"]))


def save_beta_records(records: dict, path):
    lines = []
    for cid in sorted(records):
        r: BetaRecord = records[cid]
        lines.append(_dumps({
            "cube_id": r.cube_id,
            "K": r.K,
            "beta_inf": None if math.isnan(r.beta_inf) else r.beta_inf,
            "beta_2": None if math.isnan(r.beta_2) else r.beta_2,
            "bbeta_inf": r.bbeta_inf,
            "plane_sup": _plane_obj(r.plane_sup),
            "plane_l2": _plane_obj(r.plane_l2),
            "plane_bil": _plane_obj(r.plane_bil),
            "gamma_at_scale": None if math.isnan(r.gamma_at_scale) else r.gamma_at_scale,
            "diam": r.diam,
            "resolution_flag": r.resolution_flag,
            "oracle_gap": r.oracle_gap,
        }))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_beta_records(path) -> dict:
    records = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{lineno}: malformed record ({exc})") from exc
        records[rec["cube_id"]] = BetaRecord(
            cube_id=rec["cube_id"], K=float(rec["K"]),
            beta_inf=math.nan if rec["beta_inf"] is None else float(rec["beta_inf"]),
            beta_2=math.nan if rec["beta_2"] is None else float(rec["beta_2"]),
            bbeta_inf=rec["bbeta_inf"],
            plane_sup=_plane_from(rec["plane_sup"]),
            plane_l2=_plane_from(rec["plane_l2"]),
            plane_bil=_plane_from(rec["plane_bil"]),
            gamma_at_scale=math.nan if rec["gamma_at_scale"] is None else float(rec["gamma_at_scale"]),
            diam=float(rec["diam"]),
            resolution_flag=bool(rec["resolution_flag"]),
            oracle_gap=rec["oracle_gap"],
        )
    return records


# -- corona -------------------------------------------------------------------


def save_corona(result: CoronaResult, path):
    obj = {
        "params": {
            "epsilon": result.params.epsilon,
            "delta": result.params.delta,
            "kappa": result.params.kappa,
            "K": result.params.K,
        },
        "bilateral": result.bilateral,
        "bad": result.bad,
        "bad_flags": result.bad_flags,
        "packing_bad": result.packing_bad,
        "packing_roots": result.packing_roots,
        "assignments": {k: result.assignments[k] for k in sorted(result.assignments)},
        "regimes": [
            {
                "id": r.id,
                "root": r.root_id,
                "members": r.members,
                "m0": r.m0,
                "m1": r.m1,
                "m_sibling": r.m_sibling,
                "m_leaf": r.m_leaf,
                "plane": _plane_obj(r.plane),
            }
            for r in result.regimes
        ],
    }
    save_json(obj, path)


def load_corona(path) -> CoronaResult:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    params = CoronaParams(**obj["params"])
    regimes = [
        Regime(
            id=r["id"], root_id=r["root"], members=r["members"], m0=r["m0"], m1=r["m1"],
            m_sibling=r["m_sibling"], m_leaf=r["m_leaf"], plane=_plane_from(r["plane"]),
        )
        for r in obj["regimes"]
    ]
    return CoronaResult(
        bad=obj["bad"], bad_flags=obj["bad_flags"], regimes=regimes,
        assignments=obj["assignments"], packing_bad=float(obj["packing_bad"]),
        packing_roots=float(obj["packing_roots"]), params=params,
        bilateral=bool(obj["bilateral"]),
    )


# -- grid functions and graph exports -----------------------------------------


def save_gridfunction(f: GridFunction, path):
    path = Path(path)
    save_json(
        {
            "shape": list(f.values.shape),
            "h_x": f.h_x,
            "origin": list(f.origin),
            "policy": f.policy,
        },
        path,
    )
    f.values.astype("<f8").tofile(path.with_suffix(path.suffix + ".bin"))


def load_gridfunction(path) -> GridFunction:
    path = Path(path)
    header = json.loads(Path(path).read_text(encoding="utf-8"))
    vals = np.fromfile(path.with_suffix(path.suffix + ".bin"), dtype="<f8")
    vals = vals.reshape(header["shape"])
    return GridFunction(vals, float(header["h_x"]), tuple(header["origin"]), header["policy"])


def save_graphfield(graph, path, nx: int = 96, nt: int = 1024):
    """Export a Whitney graph: JSON header, binary grid, family JSONL."""
    path = Path(path)
    axes, taus, vals = graph.export_grid(nx=nx, nt=nt)
    frame = graph.frame
    header = {
        "frame": {
            "normal": list(frame.normal),
            "inplane": [list(col) for col in frame.inplane.T],
            "origin_x": list(frame.origin_x),
            "origin_t": frame.origin_t,
        },
        "support_r": graph.support_r,
        "kappa": graph.kappa,
        "R": graph.R,
        "b1": graph.b1,
        "grid_shape": list(vals.shape),
    }
    save_json(header, path)
    vals.astype("<f8").tofile(path.with_suffix(path.suffix + ".bin"))
    fam = graph.family
    lines = []
    for i in np.nonzero(fam.in_lambda)[0]:
        m, coords, cu, ctau, a = fam.cell_info(int(i))
        lines.append(_dumps({
            "i": int(i),
            "level": int(m),
            "corner": [float((coords[ax]) * a) for ax in range(coords.size - 1)]
            + [float(coords[-1] * a * a)],
            "r": float(fam.r_i[i]),
            "Q_of_i": fam.q_of_cell[i],
            "B": {"slope": list(fam.slope[i]), "offset": float(fam.offset[i])},
        }))
    path.with_suffix(path.suffix + ".family.jsonl").write_text(
        "\n".join(lines) + "\n", encoding="utf-8"
    )
