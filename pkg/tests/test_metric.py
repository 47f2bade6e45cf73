"""Parabolic metric, measure estimators, and ADR checks."""

import math

import numpy as np
import pytest

from paracorona.errors import InputError, ResolutionError
from paracorona.metric import (
    Surface,
    SpaceTimePoint,
    check_adr,
    d_p,
    estimate_hausdorff_p,
    estimate_slicewise,
    parabolic_ball,
)
from paracorona.surfaces import SurfaceSpec, synthesize


def test_dp_spatial_only():
    a = SpaceTimePoint([3.0, 4.0], 0.0)
    b = SpaceTimePoint([0.0, 0.0], 0.0)
    assert d_p(a, b) == 5.0


def test_dp_time_only():
    a = SpaceTimePoint([1.0, 2.0], 9.0)
    b = SpaceTimePoint([1.0, 2.0], 0.0)
    assert d_p(a, b) == 3.0


def test_dp_mixed():
    a = SpaceTimePoint([1.0, 0.0], 4.0)
    b = SpaceTimePoint([0.0, 0.0], 0.0)
    assert d_p(a, b) == 3.0


def test_dp_dimension_mismatch():
    with pytest.raises(InputError):
        d_p(SpaceTimePoint([1.0], 0.0), SpaceTimePoint([1.0, 2.0], 0.0))


def test_dp_triangle_inequality():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3000, 3, 2))
    t = rng.normal(size=(3000, 3))
    for i in range(0, 3000, 3):
        a, b, c = (SpaceTimePoint(x[i, j], t[i, j]) for j in range(3))
        assert d_p(a, c) <= d_p(a, b) + d_p(b, c) + 1e-12


def test_parabolic_ball_member_center(plane_n2):
    surface, _ = plane_n2
    center = surface.point(surface.size // 2)
    idx = parabolic_ball(surface, center, surface.diam / 2.0)
    assert idx.size > 0


def test_parabolic_ball_empty(plane_n2):
    surface, _ = plane_n2
    off = SpaceTimePoint(surface.x[0] + 10.0, float(surface.t[0]))
    idx = parabolic_ball(surface, off, surface.spacing / 10.0)
    assert idx.size == 0


def test_parabolic_ball_matches_linear_scan():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(1000, 2))
    t = rng.uniform(-1, 1, size=1000)
    surface = Surface(x, t, np.full(1000, 1e-3), spacing=0.01, validate=False)
    for k in range(20):
        i = int(rng.integers(1000))
        r = float(rng.uniform(0.05, 0.8))
        got = surface.index.cube(surface.x[i], surface.t[i], r)
        brute = np.nonzero(
            (np.max(np.abs(x - x[i]), axis=1) < r) & (np.abs(t - t[i]) < r * r)
        )[0]
        assert np.array_equal(got, brute)


def test_nearest_matches_brute():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, size=(800, 1))
    t = rng.uniform(-1, 1, size=800)
    surface = Surface(x, t, np.full(800, 1e-3), spacing=0.01, validate=False)
    qx = rng.uniform(-1.5, 1.5, size=(50, 1))
    qt = rng.uniform(-1.5, 1.5, size=50)
    idx, dist = surface.index.nearest_many(qx, qt)
    dm = np.linalg.norm(qx[:, None, :] - x[None, :, :], axis=2) + np.sqrt(
        np.abs(qt[:, None] - t[None, :])
    )
    assert np.allclose(dist, dm.min(axis=1), rtol=0, atol=1e-12)


def test_hausdorff_plane_patch_factor4(plane_n2, plane_n1):
    for surface, leb in ((plane_n2[0], 1.0), (plane_n1[0], 1.0)):
        scale = max(8.0 * surface.spacing, surface.diam / 8.0)
        est = estimate_hausdorff_p(surface, None, scale)
        assert leb / 4.0 <= est.value <= 4.0 * leb


def test_hausdorff_empty_and_single(plane_n2):
    surface, _ = plane_n2
    scale = 8.0 * surface.spacing
    assert estimate_hausdorff_p(surface, [], scale).value == 0.0
    single = estimate_hausdorff_p(surface, [0], scale)
    assert single.value <= scale ** surface.d


def test_hausdorff_scale_precondition(plane_n2):
    surface, _ = plane_n2
    with pytest.raises(ResolutionError):
        estimate_hausdorff_p(surface, None, surface.spacing)


def test_hausdorff_monotone_with_slack(plane_n1):
    # single-scale greedy covers drift by O(h/scale); non-increasing up to
    # that documented discreteness slack
    surface, _ = plane_n1
    scales = [0.1, 0.2, 0.4, 0.8]
    vals = [estimate_hausdorff_p(surface, None, s).value for s in scales]
    for s, (v0, v1) in zip(scales, zip(vals, vals[1:])):
        assert v1 <= v0 * (1.0 + 8.0 * surface.spacing / s)


def test_slicewise_plane_patch(plane_n2):
    surface, _ = plane_n2
    w = (surface.diam / 8.0) ** 2 / 2.0
    est = estimate_slicewise(surface, None, w)
    assert 0.25 <= est.value <= 4.0


def test_slicewise_single_slab(plane_n2):
    surface, _ = plane_n2
    w = 4.0 * surface.spacing ** 2
    t0 = surface.t[0]
    region = np.nonzero(np.abs(surface.t - t0) < w / 2)[0]
    est = estimate_slicewise(surface, region, w)
    # one occupied slab: value = w * (spatial cover value)
    assert est.value > 0
    per_slab = est.value / w
    assert 0.1 <= per_slab <= 10.0


def test_slicewise_dominated_by_hausdorff(plane_n2, plane_n1):
    for surface, _ in (plane_n2, plane_n1):
        scale = max(8.0 * surface.spacing, surface.diam / 8.0)
        hp = estimate_hausdorff_p(surface, None, scale)
        mu = estimate_slicewise(surface, None, scale * scale / 2.0)
        assert mu.value <= 8.0 ** surface.d * hp.value


def test_cantor_slicewise_decays_hausdorff_persists():
    spec = SurfaceSpec("cantor_product", n=1, extent=1.0, h=1.0, params={"generation": 5})
    surface, truth = synthesize(spec)
    s0 = 0.25
    hp = estimate_hausdorff_p(surface, None, s0)
    assert hp.value > 0.2
    widths = [truth.extras["finest_time_feature"] * 4.0 ** (-k) for k in range(3)]
    vals = [
        estimate_slicewise(surface, None, max(w, surface.spacing ** 2), spatial_scale=s0).value
        for w in widths
    ]
    assert vals[0] > vals[-1]
    assert vals[-1] < vals[0] / 2.0


def test_projection_does_not_increase_hausdorff():
    spec = SurfaceSpec("tilted_plane", n=2, extent=1.0, h=1.0 / 22, params={"slope": 0.3})
    surface, _ = synthesize(spec)
    # project onto the reference plane x_n = 0 (drop the last coordinate)
    proj = Surface(
        np.concatenate([surface.x[:, :1], np.zeros((surface.size, 1))], axis=1),
        surface.t, surface.w, spacing=surface.spacing, validate=False,
    )
    scale = max(8.0 * surface.spacing, surface.diam / 8.0)
    est_a = estimate_hausdorff_p(surface, None, scale)
    est_p = estimate_hausdorff_p(proj, None, scale)
    assert est_p.value <= 1.25 * est_a.value


def test_check_adr_plane(plane_n2):
    surface, _ = plane_n2
    scales = [max(4.0 * surface.spacing, surface.diam / 16.0), surface.diam / 8.0,
              surface.diam / 4.0]
    rep = check_adr(surface, scales)
    assert rep.m_upper / rep.m_lower <= 4.0
    assert rep.passed


def test_check_adr_time_line_fails():
    # a pure time segment in R^3 has mass ~ r^2, not r^3
    nt = 900
    t = np.linspace(0, 1, nt)
    x = np.zeros((nt, 2))
    h = math.sqrt(t[1] - t[0])
    surface = Surface(x, t, np.full(nt, t[1] - t[0]), spacing=h, validate=False)
    rep = check_adr(surface, [8.0 * h, 0.5, 0.9])
    assert rep.m_upper / rep.m_lower > 5.0
    rep2 = check_adr(surface, [8.0 * h, 0.5, 0.9], m_bound=4.0)
    assert not rep2.passed


def test_check_adr_graph_within_2x_of_plane(plane_n1):
    plane, _ = plane_n1
    rep_plane = check_adr(plane, [plane.diam / 8.0, plane.diam / 4.0])
    spec = SurfaceSpec("lip_graph", n=1, extent=1.0, h=1.0 / 100, params={"b1": 0.01})
    graph, _ = synthesize(spec)
    rep_graph = check_adr(graph, [graph.diam / 8.0, graph.diam / 4.0])
    assert rep_graph.m_upper <= 2.0 * rep_plane.m_upper


def test_surface_validation_rejects_near_duplicates():
    x = np.asarray([[0.0], [1e-5]])
    t = np.asarray([0.0, 0.0])
    with pytest.raises(InputError):
        Surface(x, t, np.ones(2), spacing=0.01)
