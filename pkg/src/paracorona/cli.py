"""Command-line pipeline: synth, cubes, beta, corona, graph, regularity, verify.

Exit codes: 0 all requested checks passed, 1 a check failed, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import storage
from .corona import CoronaParams, build_bilateral_regimes, build_regimes
from .errors import InputError, ResolutionError
from .lattice import build_tree
from .metric import check_adr
from .planes import compute_beta_records
from .regularity import (
    calderon_identity_check,
    certify_regular,
    half_t_derivative_fourier,
    half_t_derivative_kernel,
    make_bank,
    parabolic_bmo,
)
from .surfaces import KINDS, SurfaceSpec, synthesize
from .whitney import approximation_audit, assemble_psi, stopping_distances, ten_sixty_audit, whitney_cubes


def _parse_params(pairs):
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise InputError(f"--param expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def cmd_synth(args):
    spec = SurfaceSpec(
        kind=args.kind, n=args.n, extent=args.extent, h=args.h,
        params=_parse_params(args.param), seed=args.seed,
        t_extent=args.t_extent,
    )
    surface, truth = synthesize(spec)
    storage.save_surface(surface, args.out)
    meta = {
        "kind": spec.kind, "n": spec.n, "points": surface.size,
        "spacing": surface.spacing, "diam": surface.diam,
        "seed": spec.seed, "b1_analytic": truth.b1,
        "notes": truth.regime_notes, "warnings": list(surface.warnings),
    }
    storage.save_json(meta, str(args.out) + ".meta.json")
    print(json.dumps(meta))
    return 0


def cmd_cubes(args):
    surface = storage.load_surface(args.surface)
    tree = build_tree(surface, max_depth=args.max_depth)
    storage.save_tree(tree, args.out)
    print(json.dumps({
        "generations": {str(k): len(v) for k, v in tree.generations.items()},
        "scale0": tree.scale0,
    }))
    return 0


def cmd_beta(args):
    surface = storage.load_surface(args.surface)
    tree = storage.load_tree(args.tree, surface)
    records = compute_beta_records(
        tree, K=args.K, bilateral=args.bilateral, oracle=args.oracle
    )
    storage.save_beta_records(records, args.out)
    gaps = [r.oracle_gap for r in records.values() if r.oracle_gap is not None]
    summary = {
        "cubes": len(records),
        "flagged": sum(1 for r in records.values() if r.resolution_flag),
        "max_oracle_gap": max(gaps) if gaps else None,
    }
    print(json.dumps(summary))
    if args.oracle and gaps and max(gaps) > 0.05:
        return 1
    return 0


def cmd_corona(args):
    surface = storage.load_surface(args.surface)
    tree = storage.load_tree(args.tree, surface)
    records = storage.load_beta_records(args.betas)
    params = CoronaParams(epsilon=args.epsilon, delta=args.delta, kappa=args.kappa, K=args.K)
    if args.bilateral:
        result = build_bilateral_regimes(tree, records, params)
    else:
        result = build_regimes(tree, records, params)
    storage.save_corona(result, args.out)
    print(json.dumps({
        "regimes": len(result.regimes),
        "bad": len(result.bad),
        "packing_bad": result.packing_bad,
        "packing_roots": result.packing_roots,
    }))
    return 0


def cmd_graph(args):
    surface = storage.load_surface(args.surface)
    tree = storage.load_tree(args.tree, surface)
    records = storage.load_beta_records(args.betas)
    corona = storage.load_corona(args.corona)
    match = [S for S in corona.regimes if S.id == args.regime]
    if not match:
        raise InputError(f"regime {args.regime!r} not in {args.corona}")
    regime = match[0]
    field = stopping_distances(tree, regime)
    family = whitney_cubes(field, kappa=corona.params.kappa, records=records)
    graph = assemble_psi(field, family, seed=args.seed)
    storage.save_graphfield(graph, args.out)
    audit = approximation_audit(tree, regime, graph, bilateral=args.bilateral)
    tensixty = ten_sixty_audit(family)
    report = {
        "regime": regime.id,
        "b1": graph.b1,
        "cells": len(family.cells),
        "ten_sixty_violations": tensixty["violations"],
        "worst_forward": max(v["forward_sup"] for v in audit.values()),
    }
    storage.save_json(report, str(args.out) + ".audit.json")
    print(json.dumps(report))
    return 0 if tensixty["violations"] == 0 else 1


def cmd_regularity(args):
    f = storage.load_gridfunction(args.input)
    deriv = half_t_derivative_fourier(f)
    b2 = parabolic_bmo(deriv)
    gap = None
    if args.cutoff is not None:
        kern = half_t_derivative_kernel(f, cutoff=args.cutoff)
        denom = float(np.linalg.norm(deriv.values))
        gap = float(np.linalg.norm(kern.values - deriv.values) / denom) if denom else 0.0
    cal = None
    if args.octaves:
        cal = calderon_identity_check(make_bank(f, args.octaves), f)
    report = {"bmo_norm": b2, "backend_gap": gap, "calderon_residual": cal}
    storage.save_json(report, args.out)
    print(json.dumps(report))
    ok = (gap is None or gap <= 1e-3) and (cal is None or cal <= 0.05)
    return 0 if ok else 1


def cmd_verify(args):
    from .verify import run_acceptance

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    results = run_acceptance(quick=args.quick, seed=args.seed)
    lines = []
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        line = f"{status} - criterion {r['criterion']}: {r['name']}"
        print(line)
        lines.append(line)
    summary = {
        "passed": all(r["passed"] for r in results),
        "results": results,
    }
    storage.save_json(summary, outdir / "summary.json")
    rows = ["criterion,name,passed,measured,budget"]
    for r in results:
        rows.append(
            f"{r['criterion']},{r['name']},{int(r['passed'])},{r.get('measured', '')},{r.get('budget', '')}"
        )
    (outdir / "criteria.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0 if summary["passed"] else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="paracorona", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="synthesize a battery surface")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--extent", type=float, default=1.0)
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--t-extent", type=float, default=None)
    s.add_argument("--param", action="append", help="kind parameter key=value")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("cubes", help="build the dyadic tree")
    s.add_argument("--surface", required=True)
    s.add_argument("--max-depth", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_cubes)

    s = sub.add_parser("beta", help="compute beta records")
    s.add_argument("--surface", required=True)
    s.add_argument("--tree", required=True)
    s.add_argument("--K", type=float, default=4.0)
    s.add_argument("--bilateral", action="store_true")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_beta)

    s = sub.add_parser("corona", help="corona decomposition")
    s.add_argument("--surface", required=True)
    s.add_argument("--tree", required=True)
    s.add_argument("--betas", required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--kappa", type=float, default=2.0)
    s.add_argument("--K", type=float, default=4.0)
    s.add_argument("--bilateral", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_corona)

    s = sub.add_parser("graph", help="Whitney graph for one regime")
    s.add_argument("--surface", required=True)
    s.add_argument("--tree", required=True)
    s.add_argument("--betas", required=True)
    s.add_argument("--corona", required=True)
    s.add_argument("--regime", required=True)
    s.add_argument("--bilateral", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_graph)

    s = sub.add_parser("regularity", help="half derivative and BMO reports")
    s.add_argument("--input", required=True)
    s.add_argument("--cutoff", type=float, default=None)
    s.add_argument("--octaves", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_regularity)

    s = sub.add_parser("verify", help="run the acceptance battery")
    s.add_argument("--out", required=True)
    s.add_argument("--quick", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (InputError, ResolutionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
