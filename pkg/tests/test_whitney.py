"""Stopping distances, Whitney cells, partition of unity, graph assembly."""

import math

import numpy as np
import pytest

from paracorona.corona import CoronaParams, Regime, build_regimes
from paracorona.lattice import build_tree
from paracorona.metric import dp_to_point
from paracorona.planes import BetaRecord, TPlane
from paracorona.surfaces import SurfaceSpec, synthesize
from paracorona.whitney import (
    RegimeFrame,
    WhitneyFamily,
    approximation_audit,
    assemble_psi,
    closegraph_audit,
    d_vs_D_audit,
    derivative_profile_audit,
    overlapping_pairs,
    partition_of_unity_audit,
    piece_coherence_audit,
    stopping_distances,
    ten_sixty_audit,
    whitney_cubes,
)


def test_pruned_d_equals_brute(flat_pipeline_n1):
    field = flat_pipeline_n1["field"]
    rng = np.random.default_rng(0)
    qx = rng.uniform(-1.5, 1.5, size=(300, 1))
    qt = rng.uniform(-2.0, 2.0, size=300)
    assert np.array_equal(field.d(qx, qt), field.d_brute(qx, qt))


def test_d_center_within_diam(flat_pipeline_n1):
    field = flat_pipeline_n1["field"]
    tree = flat_pipeline_n1["tree"]
    cid = field.member_cube_ids[-1]
    q = tree.cubes[cid]
    cx, ct = tree.center_point(q)
    val = field.d(cx.reshape(1, -1), [ct])[0]
    assert val <= max(q.diam, field.surface.spacing) + 1e-12


def test_single_cube_regime_d_formula(flat_pipeline_n1):
    tree = flat_pipeline_n1["tree"]
    records = flat_pipeline_n1["records"]
    root = tree.root
    regime = Regime(
        id="S-single", root_id=root.id, members=[root.id],
        m0=[], m1=[], m_sibling=[], m_leaf=[root.id],
        plane=records[root.id].plane_sup,
    )
    field = stopping_distances(tree, regime)
    rng = np.random.default_rng(1)
    qx = rng.uniform(-1, 1, size=(100, 1))
    qt = rng.uniform(-1, 1, size=100)
    got = field.d(qx, qt)
    surf = tree.surface
    dists = np.asarray([
        dp_to_point(surf.x[root.members], surf.t[root.members], qx[i], qt[i]).min()
        for i in range(100)
    ])
    expect = dists + max(root.diam, surf.spacing)
    assert np.allclose(got, expect, rtol=0, atol=1e-12)


def test_D_below_d(flat_pipeline_n1):
    audit = d_vs_D_audit(flat_pipeline_n1["field"])
    assert audit["upper_ok"]
    assert audit["lambda_hat"] >= 1.0


class _ConstField:
    """Minimal stand-in with D identically constant (cell-octave check)."""

    class _Surface:
        spacing = 1e-3

    class _Frame:
        n = 1

    def __init__(self, const):
        self.const = const
        self.surface = self._Surface()
        self.frame = self._Frame()
        self.R = 1.0
        self.regime = None
        self.tree = None
        self.member_cube_ids = []
        self._member_set = set()

    def D(self, u, tau, want_witness=False):
        vals = np.full(np.atleast_1d(np.asarray(tau)).size, self.const)
        if want_witness:
            return vals, np.zeros(vals.size, dtype=np.int64)
        return vals

    def D_bounds(self, u, tau):
        v = self.D(u, tau)
        return v, v


def test_constant_D_single_octave():
    const = 0.37
    field = _ConstField(const)
    fam = WhitneyFamily.__new__(WhitneyFamily)
    fam.field = field
    fam.kappa = 2.0
    fam.n_param = 1
    fam._enumerate()
    sides = sorted({fam.levels[m].side for m in fam.levels})
    # acceptance: 20*a <= const - slack(a); maximality pins one dyadic octave
    for a in sides:
        assert 20.0 * a + fam.accept_slack(a) <= const + 1e-12
        assert 20.0 * (2 * a) + fam.accept_slack(2 * a) > const
    assert len(sides) == 1


def test_ten_sixty_and_neighbor_ratios(flat_pipeline_n1):
    fam = flat_pipeline_n1["family"]
    aud = ten_sixty_audit(fam)
    assert aud["violations"] == 0
    assert aud["worst_ratio_low"] >= 10.0
    assert aud["worst_ratio_high"] <= 60.0
    pairs = overlapping_pairs(fam, dilate=10.0, max_pairs=4000)
    for i, j in pairs[:2000]:
        ratio = fam.r_i[i] / fam.r_i[j]
        assert 1.0 / 36.0 <= ratio <= 36.0


def test_partition_of_unity_bounds(flat_pipeline_n1):
    aud = partition_of_unity_audit(flat_pipeline_n1["family"], samples=4000)
    assert aud["coverage"] == 1.0
    assert aud["derivative_bound"] <= 64.0


def test_partition_sums_to_one_against_bruteforce(flat_pipeline_n1):
    fam = flat_pipeline_n1["family"]
    rng = np.random.default_rng(2)
    r = fam.lambda_r
    u = rng.uniform(-r, r, size=(64, fam.n_param - 1))
    tau = rng.uniform(-r * r, r * r, size=64)
    den, _ = fam.accumulate(u, tau)
    brute = np.zeros(64)
    for i in range(len(fam.cells)):
        val, _, _ = fam._bump_batch(u, tau, np.full(64, i, dtype=np.int64), False)
        brute += val
    assert np.all(den > 0)
    assert np.max(np.abs(den / brute - 1.0)) <= 1e-12


def test_single_cell_bump_is_one_at_center():
    field = _ConstField(0.37)
    fam = WhitneyFamily.__new__(WhitneyFamily)
    fam.field = field
    fam.kappa = 2.0
    fam.n_param = 1
    fam._enumerate()
    fam._assign_pieces({})
    m = sorted(fam.levels)[0]
    lvl = fam.levels[m]
    i = int(lvl.gid_sorted[0])
    ct = fam._centers_t[i]
    val, gu, gt = fam._bump_batch(
        np.zeros((1, 0)), np.asarray([ct]), np.asarray([i]), True
    )
    assert val[0] == 1.0
    assert gt[0] == 0.0


@pytest.fixture(scope="module")
def tilted_graph_field():
    """Regime on a tilted plane, forced into the reference frame x2 = 0."""
    slope = 0.08
    spec = SurfaceSpec("tilted_plane", n=2, extent=1.0, h=1.0 / 18,
                       params={"slope": slope})
    surface, _ = synthesize(spec)
    tree = build_tree(surface)
    tilted = TPlane(np.asarray([-slope, 1.0]), 0.0)
    base = TPlane(np.asarray([0.0, 1.0]), 0.0)
    records = {}
    for cid in tree.all_ids():
        q = tree.cubes[cid]
        records[cid] = BetaRecord(
            cube_id=cid, K=4.0, beta_inf=1e-9, beta_2=1e-9, bbeta_inf=None,
            plane_sup=tilted, plane_l2=tilted, plane_bil=None,
            gamma_at_scale=0.0, diam=q.diam, resolution_flag=False,
        )
    regime = Regime(
        id="S-tilt", root_id=tree.root_id, members=list(tree.all_ids()),
        m0=[], m1=[], m_sibling=[], m_leaf=list(tree.generations[tree.k_max]),
        plane=base,
    )
    field = stopping_distances(tree, regime)
    family = whitney_cubes(field, kappa=2.0, records=records)
    graph = assemble_psi(field, family, seed=0)
    return slope, field, family, graph


def test_tilted_regime_psi_affine(tilted_graph_field):
    slope, field, family, graph = tilted_graph_field
    # every piece is the same tilted plane, so psi is exactly that tilt
    rng = np.random.default_rng(3)
    r = family.lambda_r
    u = rng.uniform(-r / 2, r / 2, size=(200, 1))
    tau = rng.uniform(-r * r / 4, r * r / 4, size=200)
    psi = graph.evaluate(u, tau, use_contact=False)
    assert np.max(np.abs(psi - slope * u[:, 0])) <= 1e-9
    assert graph.b1 <= slope + 1e-9
    assert graph.b1 >= 0.9 * slope


def test_support_zero_outside(flat_pipeline_n1):
    graph = flat_pipeline_n1["graph"]
    fam = flat_pipeline_n1["family"]
    rng = np.random.default_rng(4)
    r = graph.support_r
    ns = fam.n_param - 1
    u = rng.uniform(1.2 * r, 3.0 * r, size=(64, ns)) * rng.choice([-1, 1], size=(64, ns))
    tau = rng.uniform(1.5 * r * r, 8.0 * r * r, size=64) * rng.choice([-1, 1], size=64)
    vals = graph.evaluate(u, tau, use_contact=False)
    assert np.all(vals == 0.0)


def test_frame_invariance_under_inplane_flip():
    slope = 0.05
    spec = SurfaceSpec("regular_graph", n=2, extent=1.0, h=1.0 / 18,
                       params={"amp": 0.003})
    surface, _ = synthesize(spec)
    tree = build_tree(surface)
    from paracorona.planes import compute_beta_records

    records = compute_beta_records(tree, K=4.0)
    params = CoronaParams(epsilon=0.01, delta=0.2)
    res = build_regimes(tree, records, params)
    regime = max(res.regimes, key=lambda S: len(S.members))
    field1 = stopping_distances(tree, regime)
    flipped = RegimeFrame(
        normal=field1.frame.normal,
        inplane=-field1.frame.inplane,
        origin_x=field1.frame.origin_x,
        origin_t=field1.frame.origin_t,
    )
    field2 = stopping_distances(tree, regime, frame=flipped)
    g1 = assemble_psi(field1, whitney_cubes(field1, 2.0, records), seed=0)
    g2 = assemble_psi(field2, whitney_cubes(field2, 2.0, records), seed=0)
    rng = np.random.default_rng(5)
    u = rng.uniform(-0.4, 0.4, size=(100, 1))
    tau = rng.uniform(-0.2, 0.2, size=100)
    v1 = g1.evaluate(u, tau, use_contact=False)
    v2 = g2.evaluate(-u, tau, use_contact=False)
    assert np.max(np.abs(v1 - v2)) <= 1e-8


def test_contact_set_and_hat_values():
    # a shallow tree with a small resolution floor produces a nonempty
    # contact set; psi must reproduce the projected heights there
    spec = SurfaceSpec("regular_graph", n=1, extent=1.0, h=1.0 / 80,
                       params={"amp": 0.0004})
    surface, _ = synthesize(spec)
    tree = build_tree(surface, min_ell_factor=2.0)
    from paracorona.planes import compute_beta_records

    records = compute_beta_records(tree, K=4.0)
    regime = Regime(
        id="S-deep", root_id=tree.root_id, members=list(tree.all_ids()),
        m0=[], m1=[], m_sibling=[], m_leaf=list(tree.generations[tree.k_max]),
        plane=TPlane(np.asarray([1.0]), 0.0),
    )
    field = stopping_distances(tree, regime, contact_tol=10.0 * surface.spacing)
    assert field.F.size > 0
    family = whitney_cubes(field, kappa=2.0, records=records)
    graph = assemble_psi(field, family, seed=0)
    fu, ftau, fv = field.contact_heights()
    got = graph.evaluate(fu[:32], ftau[:32], use_contact=True)
    assert np.allclose(got, fv[:32], atol=1e-12)
    # hat-function Lipschitz audit on contact pairs
    if ftau.size >= 2:
        dp = np.sqrt(np.abs(ftau[:, None] - ftau[None, :]))
        np.fill_diagonal(dp, np.inf)
        lip = np.abs(fv[:, None] - fv[None, :]) / dp
        assert lip.max() <= 2.0 * 0.5  # 2*delta with a generous delta=0.5


def test_piece_coherence_and_derivative_profiles(flat_pipeline_n1):
    fam = flat_pipeline_n1["family"]
    eps = flat_pipeline_n1["params"].epsilon
    coh = piece_coherence_audit(fam, eps)
    assert math.isfinite(coh["fitted_C"])
    prof = derivative_profile_audit(flat_pipeline_n1["graph"], eps)
    assert math.isfinite(prof["fitted_C"])


def test_closegraph_audit(flat_pipeline_n1):
    aud = closegraph_audit(
        flat_pipeline_n1["field"], flat_pipeline_n1["graph"],
        flat_pipeline_n1["params"].epsilon,
    )
    assert aud["samples"] > 0
    assert math.isfinite(aud["fitted_C"])


def test_approximation_audit_plane_sups(flat_pipeline_n1):
    tree = flat_pipeline_n1["tree"]
    regime = flat_pipeline_n1["regime"]
    graph = flat_pipeline_n1["graph"]
    surface = flat_pipeline_n1["surface"]
    aud = approximation_audit(tree, regime, graph, bilateral=True)
    for cid, v in aud.items():
        assert v["forward_sup"] <= 4.0 * surface.spacing
        assert v["reverse_sup"] <= 4.0 * surface.spacing


def test_audit_sup_monotone_under_subsampling(flat_pipeline_n1):
    # the forward sup over a subset of samples cannot exceed the full sup
    tree = flat_pipeline_n1["tree"]
    regime = flat_pipeline_n1["regime"]
    graph = flat_pipeline_n1["graph"]
    surface = flat_pipeline_n1["surface"]
    q = tree.cubes[regime.root_id]
    cx, ct = tree.center_point(q)
    idx = surface.index.cube(cx, ct, 2.0 * q.diam)
    u, tau = graph.frame.project(surface.x[idx], surface.t[idx])
    v = graph.frame.height(surface.x[idx])
    dist = np.abs(v - graph.evaluate(u, tau, use_contact=False))
    full = dist.max()
    order = np.argsort(dist)
    keep = order[: int(0.99 * idx.size)]
    assert dist[keep].max() <= full
