"""Time-independent plane fitting, beta numbers, and Carleson diagnostics.

The admissible approximants are hyperplanes containing the time direction,
so every fit reduces to spatial geometry: the parabolic distance from a
point to such a plane is the Euclidean point-plane distance of its spatial
part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitError, InputError, ResolutionError
from .lattice import Cube, DyadicTree
from .metric import Surface, dp_to_point
from .util import parallel_map

__all__ = [
    "TPlane",
    "BetaRecord",
    "CarlesonReport",
    "fit_t_plane_l2",
    "fit_t_plane_sup",
    "beta_inf",
    "beta_2",
    "bbeta_inf",
    "gamma",
    "carleson_norm",
    "spanning_points",
    "plane_angle",
    "compute_beta_records",
    "oracle_fit_l2",
    "oracle_fit_sup",
]

RESOLUTION_FACTOR = 20.0


@dataclass(frozen=True)
class TPlane:
    """Hyperplane {(Y, s): <Y, normal> = offset} with no time component."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        nrm = np.asarray(self.normal, dtype=float).ravel()
        norm = np.linalg.norm(nrm)
        if not math.isfinite(norm) or norm == 0:
            raise InputError("plane normal must be a nonzero finite vector")
        nrm = nrm / norm
        # canonical sign: first nonzero component positive
        for v in nrm:
            if abs(v) > 1e-14:
                if v < 0:
                    nrm = -nrm
                    object.__setattr__(self, "offset", -float(self.offset))
                break
        object.__setattr__(self, "normal", nrm)
        object.__setattr__(self, "offset", float(self.offset))
        self.normal.setflags(write=False)

    def distance(self, x: np.ndarray) -> np.ndarray:
        """Spatial distances; equals the parabolic distance to the plane."""
        return np.abs(np.asarray(x) @ self.normal - self.offset)


def fit_t_plane_l2(x: np.ndarray, w: np.ndarray):
    """Weighted least-squares t-independent plane via the spatial covariance.

    Returns (plane, rms residual); residual^2 is the smallest eigenvalue of
    the weighted covariance.  Raises DegenerateFitError if the spatial rank
    is below n-1, naming the null directions.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    n = x.shape[1]
    if x.shape[0] < n:
        raise DegenerateFitError(f"need at least {n} points, got {x.shape[0]}")
    wsum = w.sum()
    if wsum <= 0:
        raise InputError("weights sum to zero")
    mu = (w[:, None] * x).sum(axis=0) / wsum
    xc = x - mu
    cov = (xc * w[:, None]).T @ xc / wsum
    evals, evecs = np.linalg.eigh(cov)
    if n >= 2:
        scale = max(float(evals[-1]), 1e-300)
        if evals[1] <= 1e-12 * scale:
            null = [evecs[:, i].copy() for i in range(n) if evals[i] <= 1e-12 * scale]
            raise DegenerateFitError(
                "spatial covariance rank below n-1", null_directions=null
            )
    normal = evecs[:, 0]
    plane = TPlane(normal, float(mu @ normal))
    return plane, float(math.sqrt(max(evals[0], 0.0)))


def _sup_objective(x: np.ndarray, normals: np.ndarray):
    """Half-spread of projections for a batch of candidate normals."""
    proj = x @ normals
    return (proj.max(axis=0) - proj.min(axis=0)) / 2.0


def fit_t_plane_sup(x: np.ndarray, seed: TPlane | None = None, tol: float | None = None):
    """Min-max (Chebyshev) t-independent plane fit.

    Seeds with the least-squares plane and refines the normal by a shrinking
    pattern search; the optimal offset for a fixed normal is the midpoint of
    the projections.  Returns an upper bound on the true infimum.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    if n == 1:
        lo, hi = float(x.min()), float(x.max())
        return TPlane(np.ones(1), (lo + hi) / 2.0), (hi - lo) / 2.0
    if seed is None:
        seed, _ = fit_t_plane_l2(x, np.ones(x.shape[0]))
    if tol is None:
        span = float(np.max(x.max(axis=0) - x.min(axis=0)))
        tol = 1e-3 * max(span, 1e-300)
    nu = seed.normal.copy()
    best = float(_sup_objective(x, nu[:, None])[0])
    if n == 2:
        theta = math.atan2(nu[1], nu[0])
        span_ang = math.pi / 4
        while span_ang > 1e-7:
            cand = theta + np.linspace(-span_ang, span_ang, 9)
            vs = np.stack([np.cos(cand), np.sin(cand)])
            vals = _sup_objective(x, vs)
            j = int(np.argmin(vals))
            if vals[j] < best:
                best = float(vals[j])
                theta = float(cand[j])
            span_ang /= 2.0
        nu = np.array([math.cos(theta), math.sin(theta)])
    else:
        # tangent-direction pattern search on the sphere
        step = 0.5
        while step > 1e-7:
            improved = False
            basis = np.eye(n)
            for b in basis:
                tang = b - (b @ nu) * nu
                nt = np.linalg.norm(tang)
                if nt < 1e-12:
                    continue
                tang /= nt
                cand = np.stack([nu + s * tang for s in (-step, step)], axis=1)
                cand /= np.linalg.norm(cand, axis=0)
                vals = _sup_objective(x, cand)
                j = int(np.argmin(vals))
                if vals[j] < best - 1e-3 * tol:
                    best = float(vals[j])
                    nu = cand[:, j]
                    improved = True
            if not improved:
                step /= 2.0
    proj = x @ nu
    plane = TPlane(nu, float((proj.max() + proj.min()) / 2.0))
    return plane, float((proj.max() - proj.min()) / 2.0)


def oracle_fit_l2(x: np.ndarray, w: np.ndarray, grid: int = 10000):
    """Brute-force normal-grid least-squares residual (test oracle)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    wsum = w.sum()
    if n == 1:
        mu = float((w * x[:, 0]).sum() / wsum)
        return math.sqrt(max(((x[:, 0] - mu) ** 2 * w).sum() / wsum, 0.0))
    if n != 2:
        raise InputError("oracle grid fit implemented for n <= 2")
    th = np.linspace(0.0, math.pi, grid, endpoint=False)
    best = math.inf
    for start in range(0, grid, 512):
        vs = np.stack([np.cos(th[start:start + 512]), np.sin(th[start:start + 512])])
        proj = x @ vs
        mu = (w[:, None] * proj).sum(axis=0) / wsum
        var = (w[:, None] * (proj - mu) ** 2).sum(axis=0) / wsum
        best = min(best, float(var.min()))
    return float(math.sqrt(max(best, 0.0)))


def oracle_fit_sup(x: np.ndarray, grid: int = 10000):
    """Brute-force normal-grid Chebyshev residual (test oracle)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    if n == 1:
        return float((x[:, 0].max() - x[:, 0].min()) / 2.0)
    if n != 2:
        raise InputError("oracle grid fit implemented for n <= 2")
    th = np.linspace(0.0, math.pi, grid, endpoint=False)
    best = math.inf
    for start in range(0, grid, 512):
        vs = np.stack([np.cos(th[start:start + 512]), np.sin(th[start:start + 512])])
        best = min(best, float(_sup_objective(x, vs).min()))
    return best


def plane_angle(p1: TPlane, p2: TPlane) -> float:
    """Angle between two t-independent planes, in [0, pi/2]."""
    c = abs(float(p1.normal @ p2.normal))
    return math.acos(min(1.0, c))


# ---------------------------------------------------------------------------
# beta numbers over dyadic cubes


def _window(tree: DyadicTree, cube: Cube, K: float) -> np.ndarray:
    cx, ct = tree.center_point(cube)
    r = 8.0 * K * max(cube.diam, tree.surface.spacing)
    return tree.surface.index.cube(cx, ct, r)


def _require_resolution(tree: DyadicTree, cube: Cube):
    if cube.diam < RESOLUTION_FACTOR * tree.surface.spacing:
        raise ResolutionError(
            f"cube {cube.id} diameter {cube.diam:g} below "
            f"{RESOLUTION_FACTOR:g} * spacing"
        )


def beta_inf(tree: DyadicTree, cube: Cube, K: float = 4.0):
    """One-sided sup beta number over the 8K-dilated window."""
    _require_resolution(tree, cube)
    idx = _window(tree, cube, K)
    if idx.size == 0:
        raise InputError("empty beta window")
    plane, res = fit_t_plane_sup(tree.surface.x[idx])
    return res / cube.diam, plane


def beta_2(tree: DyadicTree, cube: Cube, K: float = 4.0):
    """L2-averaged beta number (printed normalization diam(Q)^-d)."""
    _require_resolution(tree, cube)
    idx = _window(tree, cube, K)
    if idx.size == 0:
        raise InputError("empty beta window")
    x = tree.surface.x[idx]
    w = tree.surface.w[idx]
    plane, _ = fit_t_plane_l2(x, w)
    dist = plane.distance(x)
    val = (w * (dist / cube.diam) ** 2).sum() / cube.diam ** tree.surface.d
    return math.sqrt(max(val, 0.0)), plane


def _plane_frame(plane: TPlane, n: int) -> np.ndarray:
    """Orthonormal spatial basis of the plane's spatial slice (n, n-1)."""
    basis = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        v = e - (e @ plane.normal) * plane.normal
        for b in basis:
            v -= (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-10:
            basis.append(v / nv)
        if len(basis) == n - 1:
            break
    return np.stack(basis, axis=1) if basis else np.zeros((n, 0))


def reverse_sup(
    surface: Surface,
    plane: TPlane,
    center_x,
    center_t: float,
    r: float,
    tol: float | None = None,
    max_cells: int = 20000,
):
    """sup of d_p(., Sigma) over the plane inside the cube window.

    Adaptive refinement: cells of the plane parameter space are split while
    their optimistic bound (value at center plus cell radius) can still beat
    the current maximum.  Returns a grid lower bound on the sup, accurate to
    the requested tolerance.
    """
    if tol is None:
        tol = max(surface.spacing, r / 256.0)
    n = surface.n
    cx = np.asarray(center_x, dtype=float)
    x0 = cx - (cx @ plane.normal - plane.offset) * plane.normal
    frame = _plane_frame(plane, n)
    m = frame.shape[1]
    # clip to the sampled patch: an unbounded plane strays arbitrarily far
    # from a bounded sample, which is a boundary artifact, not geometry
    pad = 2.0 * surface.spacing
    box_lo = surface.x.min(axis=0) - pad
    box_hi = surface.x.max(axis=0) + pad
    t_lo = surface.t.min() - pad * pad
    t_hi = surface.t.max() + pad * pad

    def lift(u, s):
        return x0[None, :] + u @ frame.T, s

    def inside(pts, s):
        ok = np.max(np.abs(pts - cx), axis=1) < r
        ok &= np.all((pts > box_lo) & (pts < box_hi), axis=1)
        return ok & (np.abs(s - center_t) < r * r) & (s > t_lo) & (s < t_hi)

    u0 = np.zeros((1, m))
    hu0 = r * math.sqrt(n) if m else 0.0
    cells = [(u0[0], float(center_t), hu0, r * r)]
    best = 0.0
    evaluated = 0
    frontier_cap = 4096
    while cells and evaluated < max_cells:
        ucs = np.stack([c[0] for c in cells]) if m else np.zeros((len(cells), 0))
        scs = np.asarray([c[1] for c in cells])
        hus = np.asarray([c[2] for c in cells])
        hss = np.asarray([c[3] for c in cells])
        pts, s = lift(ucs, scs)
        ok = inside(pts, s)
        vals = np.zeros(len(cells))
        if ok.any():
            _, dist = surface.index.nearest_many(pts[ok], s[ok])
            vals[ok] = dist
            best = max(best, float(dist.max()))
        evaluated += len(cells)
        rad = math.sqrt(max(m, 1)) * hus + np.sqrt(hss)
        bound = vals + rad
        keep = (bound > best + tol) & (rad > tol)
        # drop cells whose time span misses the clipped patch entirely
        keep &= (scs - hss <= t_hi) & (scs + hss >= t_lo)
        idx = np.nonzero(keep)[0]
        # best-first: refine the most promising cells when over budget
        if idx.size > frontier_cap // (4 * 2 ** m):
            order = np.argsort(-bound[idx], kind="stable")
            idx = idx[order[: frontier_cap // (4 * 2 ** m)]]
        nxt = []
        for i in idx:
            uc, sc, hu, hs = cells[i]
            if m:
                offs = np.array(np.meshgrid(*([[-0.5, 0.5]] * m))).T.reshape(-1, m)
            else:
                offs = np.zeros((1, 0))
            for du in offs:
                for ds in (-0.75, -0.25, 0.25, 0.75):
                    nxt.append((uc + du * hu, sc + ds * hs, hu / 2.0, hs / 4.0))
        cells = nxt
    return best


def bbeta_inf(tree: DyadicTree, cube: Cube, K: float = 4.0, refine: int = 2):
    """Bilateral sup beta number: forward sup plus plane-to-surface sup.

    Seeds with the one-sided optimal plane and pattern-searches the summed
    objective briefly (coarse reverse tolerance), then re-evaluates the
    winner finely.  An upper bound on the true infimum.
    """
    _require_resolution(tree, cube)
    surface = tree.surface
    idx = _window(tree, cube, K)
    x = surface.x[idx]
    cx, ct = tree.center_point(cube)
    r = 8.0 * K * cube.diam
    coarse = max(surface.spacing, r / 64.0)

    def objective(plane: TPlane, tol):
        fwd = float(plane.distance(x).max())
        rev = reverse_sup(surface, plane, cx, ct, r, tol=tol)
        return fwd + rev

    plane_fwd, _ = fit_t_plane_sup(x)
    candidates = [plane_fwd]
    if surface.n >= 2:
        plane_l2, _ = fit_t_plane_l2(x, surface.w[idx])
        candidates.append(plane_l2)
    best_plane = candidates[0]
    best_val = objective(best_plane, coarse)
    for cand in candidates[1:]:
        v = objective(cand, coarse)
        if v < best_val:
            best_val, best_plane = v, cand
    if surface.n == 2 and refine > 0:
        theta = math.atan2(best_plane.normal[1], best_plane.normal[0])
        span = math.pi / 32
        for _ in range(refine):
            for dth in (-span, span):
                nu = np.array([math.cos(theta + dth), math.sin(theta + dth)])
                proj = x @ nu
                cand = TPlane(nu, float((proj.max() + proj.min()) / 2.0))
                v = objective(cand, coarse)
                if v < best_val:
                    best_val, best_plane, theta = v, cand, theta + dth
            span /= 2.0
    final = objective(best_plane, max(surface.spacing / 2.0, r / 512.0))
    return final / cube.diam, best_plane


# ---------------------------------------------------------------------------
# square function and Carleson norm


def gamma(surface: Surface, z_x, z_t: float, r: float) -> float:
    """L2 plane-approximation square function on the window C_r(z)."""
    if not (RESOLUTION_FACTOR * surface.spacing <= r <= surface.diam * (1 + 1e-9)):
        raise ResolutionError(f"gamma scale {r:g} outside [20h, diam]")
    idx = surface.index.cube(z_x, z_t, r)
    if idx.size < surface.n:
        return 0.0
    x = surface.x[idx]
    w = surface.w[idx]
    try:
        plane, rms = fit_t_plane_l2(x, w)
    except DegenerateFitError:
        return 0.0
    return rms / r


@dataclass
class CarlesonReport:
    norm: float
    per_root: dict
    gamma_by_cube: dict
    K: float
    gamma_comparison: float | None = None


def carleson_norm(tree: DyadicTree, K: float = 4.0) -> CarlesonReport:
    """Carleson norm of the discretized square-function measure.

    nu(window x (0, rho)) collapses to a dyadic sum with one term
    gamma(center_Q, ell(Q))^2 * sigma(Q) per cube contained in the window;
    the norm is the sup of rho^-d-normalized sums over cube-centered
    windows.
    """
    surface = tree.surface
    ids = list(tree.all_ids())
    gam = {}
    for cid in ids:
        q = tree.cubes[cid]
        cx, ct = tree.center_point(q)
        scale = max(q.ell, RESOLUTION_FACTOR * surface.spacing)
        scale = min(scale, surface.diam)
        gam[cid] = gamma(surface, cx, ct, scale)
    # member bounding boxes for containment tests
    bbox = {}
    for cid in ids:
        q = tree.cubes[cid]
        mx = surface.x[q.members]
        mt = surface.t[q.members]
        bbox[cid] = (mx.min(axis=0), mx.max(axis=0), mt.min(), mt.max())
    norm = 0.0
    per_root = {}
    for rid in ids:
        root = tree.cubes[rid]
        cx, ct = tree.center_point(root)
        rho = max(root.ell, surface.spacing)
        total = 0.0
        for cid in ids:
            q = tree.cubes[cid]
            if q.ell > rho:
                continue
            lo, hi, tlo, thi = bbox[cid]
            if np.all(lo > cx - rho) and np.all(hi < cx + rho) and tlo > ct - rho * rho and thi < ct + rho * rho:
                total += gam[cid] ** 2 * q.sigma
        val = total / rho ** surface.d
        per_root[rid] = val
        norm = max(norm, val)
    return CarlesonReport(norm=norm, per_root=per_root, gamma_by_cube=gam, K=K)


def beta2_carleson_sums(tree: DyadicTree, records: dict, roots) -> dict:
    """Sum of beta_2^2 * sigma over the subtree of each root, normalized."""
    out = {}
    for rid in roots:
        total = 0.0
        stack = [rid]
        while stack:
            cid = stack.pop()
            q = tree.cubes[cid]
            rec = records.get(cid)
            if rec is not None and not rec.resolution_flag:
                total += rec.beta_2 ** 2 * q.sigma
            stack.extend(q.children)
        out[rid] = total / tree.cubes[rid].sigma
    return out


# ---------------------------------------------------------------------------
# spanning points (plane-generation diagnostics)


@dataclass
class SpanningReport:
    indices: list
    stage_distances: list
    achieved_a: float
    failure_dim: int | None


def spanning_points(tree: DyadicTree, cube: Cube, rel_floor: float = 1e-9) -> SpanningReport:
    """Greedy farthest-point selection spanning the cube spatially.

    Stage j picks the member farthest from the spatial span of the previous
    picks; a stage falling below rel_floor * diam reports the failure
    dimension (flat cubes legitimately fail at stage n).
    """
    surface = tree.surface
    if cube.size < surface.n + 1:
        raise InputError(f"cube {cube.id} has fewer than n+1 points")
    members = cube.members
    xs = surface.x[members]
    picks = [int(cube.center_index)]
    pick_rows = [int(np.nonzero(members == cube.center_index)[0][0])]
    dists = []
    failure = None
    basis: list[np.ndarray] = []
    origin = xs[pick_rows[0]]
    for j in range(1, surface.n + 1):
        rel = xs - origin
        for b in basis:
            rel = rel - np.outer(rel @ b, b)
        norms = np.linalg.norm(rel, axis=1)
        i = int(np.argmax(norms))
        dist = float(norms[i])
        if dist < rel_floor * max(cube.diam, surface.spacing):
            failure = j
            break
        dists.append(dist)
        picks.append(int(members[i]))
        pick_rows.append(i)
        basis.append(rel[i] / dist)
    achieved = cube.diam / min(dists) if dists else math.inf
    return SpanningReport(
        indices=picks, stage_distances=dists, achieved_a=float(achieved), failure_dim=failure
    )


# ---------------------------------------------------------------------------
# record stream


@dataclass
class BetaRecord:
    cube_id: str
    K: float
    beta_inf: float
    beta_2: float
    bbeta_inf: float | None
    plane_sup: TPlane | None
    plane_l2: TPlane | None
    plane_bil: TPlane | None
    gamma_at_scale: float
    diam: float
    resolution_flag: bool
    oracle_gap: float | None = None


def compute_beta_records(
    tree: DyadicTree,
    K: float = 4.0,
    bilateral: bool = False,
    oracle: bool = False,
    oracle_limit: int = 256,
) -> dict:
    """Per-cube beta numbers and fitted planes for the whole tree.

    Cubes below the resolution floor get flagged records with NaN betas.
    With oracle=True, the sup fit is cross-checked against the brute-force
    normal grid on up to oracle_limit cubes.
    """
    surface = tree.surface
    ids = list(tree.all_ids())
    oracle_ids = set(ids[:oracle_limit]) if oracle and surface.n <= 2 else set()

    def one(cid: str) -> BetaRecord:
        q = tree.cubes[cid]
        if q.diam < RESOLUTION_FACTOR * surface.spacing:
            return BetaRecord(
                cube_id=cid, K=K, beta_inf=math.nan, beta_2=math.nan,
                bbeta_inf=None, plane_sup=None, plane_l2=None, plane_bil=None,
                gamma_at_scale=math.nan, diam=q.diam, resolution_flag=True,
            )
        binf, p_sup = beta_inf(tree, q, K)
        b2, p_l2 = beta_2(tree, q, K)
        bb, p_bil = (None, None)
        if bilateral:
            bb, p_bil = bbeta_inf(tree, q, K)
        cx, ct = tree.center_point(q)
        gscale = min(max(q.ell, RESOLUTION_FACTOR * surface.spacing), surface.diam)
        g = gamma(surface, cx, ct, gscale)
        gap = None
        if cid in oracle_ids:
            idx = _window(tree, q, K)
            ref = oracle_fit_sup(surface.x[idx])
            got = binf * q.diam
            gap = abs(got - ref) / max(ref, 1e-300) if ref > 0 else abs(got - ref)
        return BetaRecord(
            cube_id=cid, K=K, beta_inf=float(binf), beta_2=float(b2),
            bbeta_inf=None if bb is None else float(bb),
            plane_sup=p_sup, plane_l2=p_l2, plane_bil=p_bil,
            gamma_at_scale=float(g), diam=q.diam, resolution_flag=False,
            oracle_gap=gap,
        )

    return {rec.cube_id: rec for rec in parallel_map(one, ids)}
