"""Shared fixtures: small pipelines reused across test modules."""

import numpy as np
import pytest

from paracorona.corona import CoronaParams, build_regimes
from paracorona.lattice import build_tree
from paracorona.planes import compute_beta_records
from paracorona.surfaces import SurfaceSpec, synthesize
from paracorona.whitney import assemble_psi, stopping_distances, whitney_cubes


@pytest.fixture(scope="session")
def plane_n1():
    spec = SurfaceSpec("t_plane", n=1, extent=1.0, h=1.0 / 100)
    surface, truth = synthesize(spec)
    return surface, truth


@pytest.fixture(scope="session")
def plane_n2():
    spec = SurfaceSpec("t_plane", n=2, extent=1.0, h=1.0 / 22)
    surface, truth = synthesize(spec)
    return surface, truth


@pytest.fixture(scope="session")
def flat_pipeline_n1():
    """Flat n=1 graph through tree, betas, corona, and the Whitney graph."""
    spec = SurfaceSpec(
        "regular_graph", n=1, extent=1.0, h=1.0 / 100, params={"amp": 0.0004}
    )
    surface, truth = synthesize(spec)
    tree = build_tree(surface)
    records = compute_beta_records(tree, K=4.0)
    params = CoronaParams(epsilon=0.0025, delta=0.05)
    corona = build_regimes(tree, records, params)
    regime = max(corona.regimes, key=lambda S: len(S.members))
    field = stopping_distances(tree, regime)
    family = whitney_cubes(field, kappa=params.kappa, records=records)
    graph = assemble_psi(field, family, seed=0)
    return {
        "surface": surface,
        "tree": tree,
        "records": records,
        "params": params,
        "corona": corona,
        "regime": regime,
        "field": field,
        "family": family,
        "graph": graph,
    }
