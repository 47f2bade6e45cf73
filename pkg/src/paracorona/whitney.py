"""Whitney extension of a stopping-time regime into a Lip(1,1/2) graph.

Work happens in the frame of the regime's reference plane: in-plane spatial
coordinates u, time tau, and the normal height v.  The stopping distances d
(ambient) and D (projected) drive a maximal dyadic cell family on the plane;
each cell carries the affine height of a nearby regime cube's plane, and a
quintic partition of unity glues the pieces into the graph function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .corona import Regime
from .errors import ConstructionError, InputError, RegimeIntegrityError
from .lattice import DyadicTree
from .planes import plane_angle

__all__ = [
    "RegimeFrame",
    "StoppingField",
    "WhitneyFamily",
    "GraphField",
    "stopping_distances",
    "whitney_cubes",
    "assemble_psi",
    "approximation_audit",
    "ten_sixty_audit",
    "partition_of_unity_audit",
    "piece_coherence_audit",
    "closegraph_audit",
    "d_vs_D_audit",
]



def _plane_coords(u, tau, ns):
    tau = np.atleast_1d(np.asarray(tau, dtype=float)).ravel()
    if ns == 0:
        return np.zeros((tau.size, 0)), tau
    return np.asarray(u, dtype=float).reshape(-1, ns), tau

@dataclass
class RegimeFrame:
    """Orthonormal coordinates adapted to the regime's reference plane."""

    normal: np.ndarray       # spatial unit normal of the plane
    inplane: np.ndarray      # (n, n-1) spatial basis of the plane's slice
    origin_x: np.ndarray     # plane point below the regime center
    origin_t: float

    @property
    def n(self) -> int:
        return self.normal.size

    def project(self, x: np.ndarray, t: np.ndarray):
        u = (np.atleast_2d(x) - self.origin_x) @ self.inplane
        return u, np.atleast_1d(np.asarray(t, dtype=float)) - self.origin_t

    def height(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.origin_x) @ self.normal

    def lift(self, u: np.ndarray, tau: np.ndarray, v: np.ndarray):
        x = self.origin_x[None, :] + u @ self.inplane.T + np.outer(v, self.normal)
        return x, np.asarray(tau, dtype=float) + self.origin_t


def _orthobasis(normal: np.ndarray) -> np.ndarray:
    n = normal.size
    basis = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        vec = e - (e @ normal) * normal
        for b in basis:
            vec -= (vec @ b) * b
        nv = np.linalg.norm(vec)
        if nv > 1e-10:
            basis.append(vec / nv)
        if len(basis) == n - 1:
            break
    return np.stack(basis, axis=1) if basis else np.zeros((n, 0))


def make_frame(tree: DyadicTree, regime: Regime) -> RegimeFrame:
    root = tree.cubes[regime.root_id]
    cx, ct = tree.center_point(root)
    nu = regime.plane.normal
    x0 = cx - (cx @ nu - regime.plane.offset) * nu
    return RegimeFrame(normal=nu, inplane=_orthobasis(nu), origin_x=x0, origin_t=ct)


# ---------------------------------------------------------------------------
# stopping distances


class StoppingField:
    """The distance-to-regime functions d (ambient) and D (projected).

    Both are exact infima over the regime's member cubes of (distance to the
    cube's point set) + diam(cube), computed by a branch-and-bound pass over
    cube centers and radii: a cube is evaluated exactly unless its optimistic
    bound provably cannot beat the running minimum.
    """

    def __init__(self, tree: DyadicTree, regime: Regime, contact_tol: float | None = None,
                 frame: RegimeFrame | None = None):
        if not regime.members:
            raise InputError("empty regime")
        self.tree = tree
        self.regime = regime
        self.surface = tree.surface
        self.frame = make_frame(tree, regime) if frame is None else frame
        root = tree.cubes[regime.root_id]
        self.R = max(root.diam, self.surface.spacing)
        surface = self.surface

        ids = sorted(regime.members)
        self.member_cube_ids = ids
        self._member_set = set(ids)
        cxs, cts, rads, diams, mem_cat, mem_off = [], [], [], [], [], [0]
        for cid in ids:
            q = tree.cubes[cid]
            cx, ct = tree.center_point(q)
            cxs.append(cx)
            cts.append(ct)
            rads.append(q.radius)
            diams.append(max(q.diam, surface.spacing))
            mem_cat.append(q.members)
            mem_off.append(mem_off[-1] + q.members.size)
        self._cx = np.asarray(cxs)
        self._ct = np.asarray(cts)
        self._rad = np.asarray(rads)
        self._diam = np.asarray(diams)
        self._mem = np.concatenate(mem_cat)
        self._off = np.asarray(mem_off)
        self._mem_u, self._mem_t = self.frame.project(
            surface.x[self._mem], surface.t[self._mem]
        )
        self._cu, self._ctau = self.frame.project(self._cx, self._ct)
        self._build_clusters()

        self.contact_tol = 4.0 * surface.spacing if contact_tol is None else float(contact_tol)
        self.F = self._contact_set()

    def _build_clusters(self):
        """Grid-bucket each cube's members for sub-cube pruning.

        Large cubes would otherwise force dense distance matrices per query;
        clusters of bounded extent let the branch-and-bound skip most of a
        cube's points.
        """
        surface = self.surface
        ncubes = self._diam.size
        cl_lo: list = []   # first index into the cube's member slice
        cl_hi: list = []
        cl_cx, cl_ct, cl_rad, cl_cube = [], [], [], []
        cube_cl_off = [0]
        order = np.empty(self._mem.size, dtype=np.int64)
        for j in range(ncubes):
            sl = slice(self._off[j], self._off[j + 1])
            mem = self._mem[sl]
            pitch = max(self._diam[j] / 8.0, surface.spacing)
            while True:
                kx = np.floor(surface.x[mem] / pitch).astype(np.int64)
                kt = np.floor(surface.t[mem] / (pitch * pitch)).astype(np.int64)
                keys = np.concatenate([kx, kt[:, None]], axis=1)
                _, inv, counts = np.unique(
                    keys, axis=0, return_inverse=True, return_counts=True
                )
                if counts.max() <= 128 or pitch <= 2.0 * surface.spacing:
                    break
                pitch /= 2.0
            perm = np.argsort(inv, kind="stable")
            order[sl] = np.asarray(mem)[perm]
            inv_sorted = inv[perm]
            bounds = np.nonzero(np.diff(inv_sorted))[0] + 1
            starts = np.concatenate([[0], bounds])
            stops = np.concatenate([bounds, [mem.size]])
            base = self._off[j]
            for s0, s1 in zip(starts, stops):
                pts = order[base + s0: base + s1]
                cx = surface.x[pts].mean(axis=0)
                ct = surface.t[pts].mean()
                rad = float(
                    (np.linalg.norm(surface.x[pts] - cx, axis=1)
                     + np.sqrt(np.abs(surface.t[pts] - ct))).max()
                )
                cl_lo.append(base + s0)
                cl_hi.append(base + s1)
                cl_cx.append(cx)
                cl_ct.append(ct)
                cl_rad.append(rad)
                cl_cube.append(j)
            cube_cl_off.append(len(cl_lo))
        self._cl_order = order
        self._cl_lo = np.asarray(cl_lo)
        self._cl_hi = np.asarray(cl_hi)
        self._cl_cx = np.asarray(cl_cx)
        self._cl_ct = np.asarray(cl_ct)
        self._cl_rad = np.asarray(cl_rad)
        self._cube_cl_off = np.asarray(cube_cl_off)
        pu, pt = self.frame.project(surface.x[order], surface.t[order])
        self._cl_mem_u = pu
        self._cl_mem_t = pt
        cu, ctau = self.frame.project(self._cl_cx, self._cl_ct)
        self._cl_cu = cu
        self._cl_ctau = ctau

    def _eval(self, qx, qt, cx, ct, ccx, cct, px_all, pt_all, want_witness):
        """Exact min over cubes of (distance to cube points) + diam.

        Three-stage branch and bound: cube-level bounds from centers and
        radii, cluster-level bounds, then dense distances only on surviving
        clusters.
        """
        m = qx.shape[0]
        out = np.empty(m)
        wit = np.zeros(m, dtype=np.int64)
        ncubes = self._diam.size
        chunk = 4096
        for s in range(0, m, chunk):
            e = min(s + chunk, m)
            q_x = qx[s:e]
            q_t = qt[s:e]
            if q_x.shape[1]:
                dc = np.linalg.norm(q_x[:, None, :] - cx[None, :, :], axis=2)
            else:
                dc = np.zeros((e - s, ncubes))
            dc = dc + np.sqrt(np.abs(q_t[:, None] - ct[None, :]))
            ub_all = dc + self._diam[None, :]
            ub = ub_all.min(axis=1)
            w = np.argmin(ub_all, axis=1)
            lb = np.maximum(dc - self._rad[None, :], 0.0) + self._diam[None, :]
            for j in range(ncubes):
                rows = np.nonzero(lb[:, j] < ub + 1e-12)[0]
                if rows.size == 0:
                    continue
                c0, c1 = self._cube_cl_off[j], self._cube_cl_off[j + 1]
                if q_x.shape[1]:
                    dcc = np.linalg.norm(
                        q_x[rows][:, None, :] - ccx[None, c0:c1, :], axis=2
                    )
                else:
                    dcc = np.zeros((rows.size, c1 - c0))
                dcc = dcc + np.sqrt(np.abs(q_t[rows][:, None] - cct[None, c0:c1]))
                # every cluster point is within its radius of the cluster
                # center, so this refines the running upper bound sharply
                cub = (dcc + self._cl_rad[None, c0:c1]).min(axis=1) + self._diam[j]
                tighter = cub < ub[rows]
                ub[rows[tighter]] = cub[tighter]
                clb = np.maximum(dcc - self._cl_rad[None, c0:c1], 0.0) + self._diam[j]
                alive = clb < (ub[rows] + 1e-12)[:, None]
                for cpos in np.nonzero(alive.any(axis=0))[0]:
                    cid = c0 + cpos
                    rsel = np.nonzero(clb[:, cpos] < ub[rows] + 1e-12)[0]
                    if rsel.size == 0:
                        continue
                    sl = slice(self._cl_lo[cid], self._cl_hi[cid])
                    rr = rows[rsel]
                    if q_x.shape[1]:
                        dd = np.linalg.norm(
                            q_x[rr][:, None, :] - px_all[sl][None, :, :], axis=2
                        )
                    else:
                        dd = np.zeros((rr.size, sl.stop - sl.start))
                    dd = dd + np.sqrt(np.abs(q_t[rr][:, None] - pt_all[sl][None, :]))
                    val = dd.min(axis=1) + self._diam[j]
                    better = val <= ub[rr]
                    ub[rr[better]] = val[better]
                    w[rr[better]] = j
            out[s:e] = ub
            wit[s:e] = w
        return (out, wit) if want_witness else out

    def d(self, x, t, want_witness: bool = False):
        """Ambient stopping distance."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self._eval(
            x, t, self._cx, self._ct, self._cl_cx, self._cl_ct,
            self.surface.x[self._cl_order], self.surface.t[self._cl_order], want_witness,
        )

    def _bounds(self, qx, qt, cx, ct):
        """Certified cube-level (lower, upper) bounds, no exact distances."""
        m = qx.shape[0]
        lb = np.empty(m)
        ub = np.empty(m)
        chunk = 8192
        for s in range(0, m, chunk):
            e = min(s + chunk, m)
            if qx.shape[1]:
                dc = np.linalg.norm(qx[s:e, None, :] - cx[None, :, :], axis=2)
            else:
                dc = np.zeros((e - s, self._diam.size))
            dc = dc + np.sqrt(np.abs(qt[s:e, None] - ct[None, :]))
            lb[s:e] = (np.maximum(dc - self._rad[None, :], 0.0) + self._diam[None, :]).min(axis=1)
            ub[s:e] = (dc + self._diam[None, :]).min(axis=1)
        return lb, ub

    def d_bounds(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self._bounds(x, t, self._cx, self._ct)

    def D_bounds(self, u, tau):
        ns = max(self.frame.n - 1, 0)
        u, tau = _plane_coords(u, tau, ns)
        cu = self._cu if self._cu.ndim == 2 else self._cu.reshape(-1, ns)
        return self._bounds(u, tau, cu, self._ctau)

    def D(self, u, tau, want_witness: bool = False):
        """Projected stopping distance on plane coordinates."""
        ns = max(self.frame.n - 1, 0)
        u, tau = _plane_coords(u, tau, ns)
        cu = self._cu if self._cu.ndim == 2 else self._cu.reshape(-1, ns)
        ccu = self._cl_cu if self._cl_cu.ndim == 2 else self._cl_cu.reshape(-1, ns)
        return self._eval(
            u, tau, cu, self._ctau, ccu, self._cl_ctau,
            self._cl_mem_u, self._cl_mem_t, want_witness,
        )

    def d_brute(self, x, t):
        """Exhaustive reference for the pruned evaluator (test oracle)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.full(x.shape[0], np.inf)
        for j in range(self._diam.size):
            sl = slice(self._off[j], self._off[j + 1])
            px = self.surface.x[self._mem[sl]]
            pt = self.surface.t[self._mem[sl]]
            dd = np.linalg.norm(x[:, None, :] - px[None, :, :], axis=2)
            dd = dd + np.sqrt(np.abs(t[:, None] - pt[None, :]))
            out = np.minimum(out, dd.min(axis=1) + self._diam[j])
        return out

    def _contact_set(self) -> np.ndarray:
        surface = self.surface
        root = self.tree.cubes[self.regime.root_id]
        cx, ct = self.tree.center_point(root)
        near = surface.index.cube(cx, ct, 16.0 * self.R)
        if near.size == 0:
            return near
        lb, _ = self.d_bounds(surface.x[near], surface.t[near])
        cand = near[lb <= self.contact_tol]
        if cand.size == 0:
            return cand
        vals = self.d(surface.x[cand], surface.t[cand])
        return cand[vals <= self.contact_tol]

    def contact_heights(self):
        """Projected contact points with their heights (the hat function)."""
        ns = max(self.frame.n - 1, 0)
        if self.F.size == 0:
            return np.zeros((0, ns)), np.zeros(0), np.zeros(0)
        u, tau = self.frame.project(self.surface.x[self.F], self.surface.t[self.F])
        v = self.frame.height(self.surface.x[self.F])
        return u, tau, v


def stopping_distances(tree: DyadicTree, regime: Regime, contact_tol=None, frame=None) -> StoppingField:
    return StoppingField(tree, regime, contact_tol=contact_tol, frame=frame)


# ---------------------------------------------------------------------------
# bump profile (quintic smoothstep shoulders, plateau on the 2-dilate)


def _quintic_fall(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _quintic_fall_deriv(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    out[inside] = -(30.0 * si ** 2 - 60.0 * si ** 3 + 30.0 * si ** 4)
    return out


def _bump_axis(delta: np.ndarray, half: float):
    """1 on |delta| <= 2*half, 0 beyond 3*half, C^2 quintic in between."""
    s = np.abs(delta) / half - 2.0
    val = np.where(s <= 0.0, 1.0, _quintic_fall(s))
    grad = _quintic_fall_deriv(s) / half * np.sign(delta)
    return val, grad


# ---------------------------------------------------------------------------
# Whitney cells


@dataclass
class _Level:
    side: float
    keys: np.ndarray       # packed cell coords, sorted
    gid_sorted: np.ndarray  # global cell ids aligned with keys
    coords: np.ndarray     # (C, n_param) in enumeration order
    mins: np.ndarray
    dims: np.ndarray


class WhitneyFamily:
    """Maximal dyadic parabolic cells on the plane with affine pieces.

    A cell is accepted when 20 * diam(cell) fits under the sampled infimum
    of D over the cell (slack-corrected), and its parent was rejected.
    Cells meeting the 2*kappa*R window carry the plane of an associated
    regime cube expressed as an affine height B_i; others carry zero.
    """

    ACCEPT_SAMPLES = np.asarray([-0.375, -0.125, 0.125, 0.375])

    def __init__(self, field: StoppingField, kappa: float = 2.0, records: dict | None = None):
        self.field = field
        self.kappa = float(kappa)
        self.n_param = field.frame.n
        self._enumerate()
        self._assign_pieces(records or {})

    # geometry helpers ------------------------------------------------------

    def _cell_diam(self, a: float) -> float:
        ns = self.n_param - 1
        return (math.sqrt(ns) if ns else 0.0) * a + a

    def cell_info(self, i: int):
        m, row = self.cells[i]
        lvl = self.levels[m]
        coords = lvl.coords[row]
        a = lvl.side
        cu = (coords[:-1].astype(float) + 0.5) * a
        ctau = (float(coords[-1]) + 0.5) * a * a
        return m, coords, cu, ctau, a

    def accept_slack(self, a: float) -> float:
        """Parabolic radius of a cell: the Lipschitz slack of center sampling."""
        ns = self.n_param - 1
        return (math.sqrt(ns) if ns else 0.0) * 0.5 * a + a / math.sqrt(2.0)

    def _enumerate(self):
        field = self.field
        R = field.R
        self.W = 8.0 * self.kappa * R
        self.support_r = 4.0 * self.kappa * R
        self.lambda_r = 2.0 * self.kappa * R
        self.side0 = 2.0 * self.W
        ns = self.n_param - 1

        pending = np.stack(
            [np.asarray(cs, dtype=np.int64) for cs in product((-1, 0), repeat=self.n_param)]
        )
        child_offsets = np.stack(
            [
                np.asarray(list(du) + [dt], dtype=np.int64)
                for du in product((0, 1), repeat=ns)
                for dt in range(4)
            ]
        )
        child_scale = np.asarray([2] * ns + [4], dtype=np.int64)
        accepted: dict[int, np.ndarray] = {}
        floor_side = field.surface.spacing / 64.0
        level = 0
        while pending.size:
            a = self.side0 * 2.0 ** (-level)
            if a < floor_side:
                raise ConstructionError(
                    "Whitney refinement collapsed below the sample resolution"
                )
            cu = (pending[:, :-1].astype(float) + 0.5) * a
            ctau = (pending[:, -1].astype(float) + 0.5) * a * a
            # certify with cheap cube-level bounds; exact D only where the
            # decision is uncertain (the family equals the pure-exact rule)
            thresh = 20.0 * self._cell_diam(a) + self.accept_slack(a)
            lbv, ubv = field.D_bounds(cu, ctau)
            ok = lbv >= thresh
            unsure = np.nonzero((~ok) & (ubv >= thresh))[0]
            if unsure.size:
                vals = field.D(cu[unsure], ctau[unsure])
                ok[unsure] = vals >= thresh
            acc = pending[ok]
            if acc.size:
                accepted.setdefault(level, []).append(acc)
            rej = pending[~ok]
            if rej.size:
                pending = (
                    rej[:, None, :] * child_scale[None, None, :] + child_offsets[None, :, :]
                ).reshape(-1, self.n_param)
            else:
                pending = np.zeros((0, self.n_param), dtype=np.int64)
            level += 1

        self.levels: dict[int, _Level] = {}
        self.cells: list = []
        for m in sorted(accepted):
            coords = np.concatenate(accepted[m], axis=0)
            coords = coords[np.lexsort(coords.T[::-1])]
            mins = coords.min(axis=0)
            dims = coords.max(axis=0) - mins + 1
            keys = self._pack(coords, mins, dims)
            order = np.argsort(keys, kind="stable")
            base = len(self.cells)
            self.levels[m] = _Level(
                side=self.side0 * 2.0 ** (-m),
                keys=keys[order],
                gid_sorted=base + order.astype(np.int64),
                coords=coords,
                mins=mins,
                dims=dims,
            )
            for row in range(coords.shape[0]):
                self.cells.append((m, row))

    @staticmethod
    def _pack(coords, mins, dims):
        rel = coords - mins
        key = np.zeros(coords.shape[0], dtype=np.int64)
        for ax in range(coords.shape[1]):
            key = key * dims[ax] + rel[:, ax]
        return key

    def _assign_pieces(self, records: dict):
        field = self.field
        frame = field.frame
        tree = field.tree
        ns = self.n_param - 1
        ncells = len(self.cells)
        self.r_i = np.zeros(ncells)
        self.in_lambda = np.zeros(ncells, dtype=bool)
        self.slope = np.zeros((ncells, ns))
        self.offset = np.zeros(ncells)
        self.q_of_cell = [None] * ncells
        self.d_cell = np.zeros(ncells)
        self.bracket_flag = np.zeros(ncells, dtype=bool)
        self._centers_u = np.zeros((ncells, ns))
        self._centers_t = np.zeros(ncells)
        self._sides = np.zeros(ncells)
        base = 0
        for m in sorted(self.levels):
            lvl = self.levels[m]
            cnum = lvl.coords.shape[0]
            a = lvl.side
            rows = slice(base, base + cnum)
            self._centers_u[rows] = (lvl.coords[:, :-1].astype(float) + 0.5) * a
            self._centers_t[rows] = (lvl.coords[:, -1].astype(float) + 0.5) * a * a
            self._sides[rows] = a
            self.r_i[rows] = self._cell_diam(a)
            if ns:
                near_u = np.all(np.abs(self._centers_u[rows]) - a / 2.0 < self.lambda_r, axis=1)
            else:
                near_u = np.ones(cnum, dtype=bool)
            near_t = np.abs(self._centers_t[rows]) - a * a / 2.0 < self.lambda_r ** 2
            self.in_lambda[rows] = near_u & near_t
            base += cnum

        lam = np.nonzero(self.in_lambda)[0]
        if lam.size == 0:
            return
        vals, wit = field.D(self._centers_u[lam], self._centers_t[lam], want_witness=True)
        self.d_cell[lam] = vals
        h = field.surface.spacing

        # per regime cube: the ancestor chain's floored diameters (leaf first),
        # so the walk-up to the largest ancestor with diam <= 2 d is a search
        chain_ids: dict[int, list] = {}
        chain_diams: dict[int, np.ndarray] = {}
        for j, cid in enumerate(field.member_cube_ids):
            ids = [cid]
            cube = tree.cubes[cid]
            while cube.parent is not None and cube.id != field.regime.root_id:
                if cube.parent not in field._member_set:
                    break
                cube = tree.cubes[cube.parent]
                ids.append(cube.id)
            chain_ids[j] = ids
            chain_diams[j] = np.asarray(
                [max(tree.cubes[c].diam, h) for c in ids]
            )

        # affine piece per regime cube, expressed over the frame
        piece: dict[str, tuple] = {}
        for cid in field.member_cube_ids:
            rec = records.get(cid)
            plane = rec.plane_sup if rec is not None and rec.plane_sup is not None else field.regime.plane
            denom = float(plane.normal @ frame.normal)
            if abs(denom) < math.cos(math.pi / 4.0):
                raise ConstructionError(
                    f"piece plane for cube {cid} too steep over the regime "
                    f"plane (angle {plane_angle(plane, field.regime.plane):.3f} rad)"
                )
            g = frame.inplane.T @ plane.normal if ns else np.zeros(0)
            c0 = float(plane.offset - frame.origin_x @ plane.normal)
            piece[cid] = (-g / denom, c0 / denom)

        for j in np.unique(wit):
            sel = lam[wit == j]
            d_sel = self.d_cell[sel]
            diams = chain_diams[int(j)]
            # diams increase along the chain; pick the last one <= 2d
            idx = np.searchsorted(diams, 2.0 * d_sel, side="right") - 1
            idx = np.clip(idx, 0, diams.size - 1)
            self.bracket_flag[sel] = (diams[idx] < d_sel / (4.0 * self.kappa)) | (
                diams[idx] > 2.0 * d_sel
            )
            ids = chain_ids[int(j)]
            for pos, i in zip(idx, sel):
                self.q_of_cell[i] = ids[int(pos)]
            slopes = np.stack([piece[ids[int(p)]][0] for p in idx]) if ns else np.zeros((sel.size, 0))
            offs = np.asarray([piece[ids[int(p)]][1] for p in idx])
            self.slope[sel] = slopes
            self.offset[sel] = offs

    # evaluation -------------------------------------------------------------

    def _bump_batch(self, u_rows, tau_rows, cell_ids, want_grad):
        """Bump values (and gradients) of given cells at given points."""
        ns = self.n_param - 1
        a = self._sides[cell_ids]
        cu = self._centers_u[cell_ids]
        ctau = self._centers_t[cell_ids]
        axis_vals, axis_grads = [], []
        for ax in range(ns):
            half = a / 2.0
            s = np.abs(u_rows[:, ax] - cu[:, ax]) / half - 2.0
            v = np.where(s <= 0.0, 1.0, _quintic_fall(s))
            g = _quintic_fall_deriv(s) / half * np.sign(u_rows[:, ax] - cu[:, ax])
            axis_vals.append(v)
            axis_grads.append(g)
        half_t = a * a / 2.0
        st = np.abs(tau_rows - ctau) / half_t - 2.0
        vt = np.where(st <= 0.0, 1.0, _quintic_fall(st))
        gt = _quintic_fall_deriv(st) / half_t * np.sign(tau_rows - ctau)
        val = vt.copy()
        for v in axis_vals:
            val = val * v
        if not want_grad:
            return val, None, None
        grads_u = np.zeros((u_rows.shape[0], ns))
        for ax in range(ns):
            prod = vt.copy()
            for ax2 in range(ns):
                prod = prod * (axis_grads[ax2] if ax2 == ax else axis_vals[ax2])
            grads_u[:, ax] = prod
        grad_t = gt
        for v in axis_vals:
            grad_t = grad_t * v
        return val, grads_u, grad_t

    def accumulate(self, u, tau, want_grad: bool = False):
        """Sums of bumps and bump-weighted affine pieces at plane points."""
        ns = self.n_param - 1
        u, tau = _plane_coords(u, tau, ns)
        m_pts = tau.size
        den = np.zeros(m_pts)
        num = np.zeros(m_pts)
        dden_u = np.zeros((m_pts, ns))
        dnum_u = np.zeros((m_pts, ns))
        dden_t = np.zeros(m_pts)
        dnum_t = np.zeros(m_pts)
        for m, lvl in self.levels.items():
            a = lvl.side
            at = a * a
            base = np.empty((m_pts, self.n_param), dtype=np.int64)
            for ax in range(ns):
                base[:, ax] = np.floor(u[:, ax] / a)
            base[:, -1] = np.floor(tau / at)
            for offs in product((-1, 0, 1), repeat=self.n_param):
                coords = base + np.asarray(offs, dtype=np.int64)
                rel = coords - lvl.mins
                valid = np.all((rel >= 0) & (rel < lvl.dims), axis=1)
                if not valid.any():
                    continue
                key = np.zeros(m_pts, dtype=np.int64)
                for ax in range(self.n_param):
                    key = key * lvl.dims[ax] + rel[:, ax]
                kv = key[valid]
                pos = np.searchsorted(lvl.keys, kv)
                pos = np.minimum(pos, lvl.keys.size - 1)
                hit = lvl.keys[pos] == kv
                rows = np.nonzero(valid)[0][hit]
                if rows.size == 0:
                    continue
                cell_ids = lvl.gid_sorted[pos[hit]]
                val, gu, gt = self._bump_batch(u[rows], tau[rows], cell_ids, want_grad)
                piece = self.offset[cell_ids]
                if ns:
                    piece = piece + (u[rows] * self.slope[cell_ids]).sum(axis=1)
                den[rows] += val
                num[rows] += val * piece
                if want_grad:
                    dden_u[rows] += gu
                    dnum_u[rows] += gu * piece[:, None] + val[:, None] * self.slope[cell_ids]
                    dden_t[rows] += gt
                    dnum_t[rows] += gt * piece
        if want_grad:
            return den, num, dden_u, dnum_u, dden_t, dnum_t
        return den, num


def whitney_cubes(field: StoppingField, kappa: float = 2.0, records: dict | None = None) -> WhitneyFamily:
    return WhitneyFamily(field, kappa=kappa, records=records)


# ---------------------------------------------------------------------------
# the graph function


class GraphField:
    """The extended graph function on the regime's plane coordinates."""

    def __init__(self, field: StoppingField, family: WhitneyFamily, seed: int = 0):
        self.field = field
        self.family = family
        self.frame = field.frame
        self.support_r = family.support_r
        self.R = field.R
        self.kappa = family.kappa
        self._fu, self._ftau, self._fv = field.contact_heights()
        self._check_contact_injectivity()
        self.seed = int(seed)
        self.b1 = self._measure_b1()

    def _check_contact_injectivity(self):
        if self._ftau.size < 2:
            return
        h = self.field.surface.spacing
        u, tau, v = self._fu, self._ftau, self._fv
        ns = u.shape[1]
        for i in range(tau.size):
            du = np.linalg.norm(u - u[i], axis=1) if ns else np.zeros(tau.size)
            dp = du + np.sqrt(np.abs(tau - tau[i]))
            close = (dp < h) & (np.arange(tau.size) != i)
            if np.any(np.abs(v[close] - v[i]) > h + 1e-12):
                raise RegimeIntegrityError(
                    "projection not injective on the contact set; "
                    "epsilon/delta configuration too loose for this regime"
                )

    def evaluate(self, u, tau, use_contact: bool = True) -> np.ndarray:
        """The graph height at plane points (0 outside the support box)."""
        ns = self.frame.n - 1
        u, tau = _plane_coords(u, tau, ns)
        den, num = self.family.accumulate(u, tau)
        out = np.where(den > 0, num / np.where(den == 0, 1.0, den), 0.0)
        if use_contact and self._ftau.size:
            for i in range(tau.size):
                du = np.linalg.norm(self._fu - u[i], axis=1) if ns else np.zeros(self._ftau.size)
                hit = np.nonzero((du < 1e-12) & (np.abs(self._ftau - tau[i]) < 1e-24))[0]
                if hit.size:
                    out[i] = self._fv[hit[0]]
        return out

    def gradient(self, u, tau):
        """(grad_u psi, d psi/d tau) of the Whitney sum."""
        ns = self.frame.n - 1
        u, tau = _plane_coords(u, tau, ns)
        den, num, dden_u, dnum_u, dden_t, dnum_t = self.family.accumulate(u, tau, want_grad=True)
        safe = np.where(den == 0, 1.0, den)
        gu = (dnum_u * safe[:, None] - num[:, None] * dden_u) / safe[:, None] ** 2
        gt = (dnum_t * safe - num * dden_t) / safe ** 2
        gu[den == 0] = 0.0
        gt[den == 0] = 0.0
        return gu, gt

    def _measure_b1(self, pairs: int = 100_000) -> float:
        rng = np.random.Generator(np.random.Philox(self.seed + 7))
        ns = self.frame.n - 1
        r = self.support_r
        u1 = rng.uniform(-r, r, size=(pairs, ns))
        t1 = rng.uniform(-r * r, r * r, size=pairs)
        scale = np.exp(
            rng.uniform(np.log(self.field.surface.spacing / 2.0), np.log(2.0 * r), size=pairs)
        )
        if ns:
            direc = rng.normal(size=(pairs, ns))
            nn = np.linalg.norm(direc, axis=1, keepdims=True)
            direc = direc / np.where(nn == 0, 1.0, nn)
            u2 = u1 + direc * scale[:, None]
        else:
            u2 = u1
        t2 = t1 + rng.choice([-1.0, 1.0], size=pairs) * scale ** 2
        p1 = self.evaluate(u1, t1, use_contact=False)
        p2 = self.evaluate(u2, t2, use_contact=False)
        du = np.linalg.norm(u1 - u2, axis=1) if ns else np.zeros(pairs)
        dp = du + np.sqrt(np.abs(t1 - t2))
        ok = dp > 0
        return float(np.max(np.abs(p1[ok] - p2[ok]) / dp[ok]))

    def export_grid(self, nx: int = 96, nt: int = 1024):
        """Row-major graph samples on a parabolic grid over the support."""
        ns = self.frame.n - 1
        r = self.support_r
        axes = [np.linspace(-r, r, nx) for _ in range(ns)]
        taus = np.linspace(-r * r, r * r, nt)
        if ns:
            mesh = np.meshgrid(*axes, taus, indexing="ij")
            u = np.stack([g.ravel() for g in mesh[:-1]], axis=1)
            tau = mesh[-1].ravel()
            shape = tuple([nx] * ns + [nt])
        else:
            u = np.zeros((nt, 0))
            tau = taus
            shape = (nt,)
        vals = self.evaluate(u, tau, use_contact=False).reshape(shape)
        return axes, taus, vals


def assemble_psi(field: StoppingField, family: WhitneyFamily, seed: int = 0) -> GraphField:
    if family.field is not field:
        raise InputError("family was built from a different stopping field")
    return GraphField(field, family, seed=seed)


# ---------------------------------------------------------------------------
# audits


def ten_sixty_audit(family: WhitneyFamily) -> dict:
    """10 r_i <= D <= 60 r_i on sampled 10-dilates, slack-corrected.

    The slack per cell is the parabolic gap of the sampling grid on the
    10-dilate; the lower check certifies the continuum infimum from below
    and the upper check the supremum from above.
    """
    field = family.field
    ns = family.n_param - 1
    worst_low = math.inf
    worst_high = 0.0
    violations = 0
    checked = 0
    lam = np.nonzero(family.in_lambda)[0]
    if lam.size > 2048:
        lam = lam[:: lam.size // 2048 + 1]
    for i in lam:
        m, coords, cu, ctau, a = family.cell_info(int(i))
        r_i = family.r_i[i]
        fr = np.linspace(-5.0, 5.0, 7)
        if ns:
            mesh = np.meshgrid(*([fr * a] * ns), fr * a * a, indexing="ij")
            uu = cu[None, :] + np.stack([g.ravel() for g in mesh[:-1]], axis=1)
            tt = ctau + mesh[-1].ravel()
        else:
            uu = np.zeros((fr.size, 0))
            tt = ctau + fr * a * a
        vals = field.D(uu, tt)
        pitch = 10.0 * a / 6.0
        gap = (math.sqrt(ns) if ns else 0.0) * pitch / 2.0 + math.sqrt(pitch * a / 2.0)
        lo_cert = vals.min() - gap
        hi_cert = vals.max() + gap
        worst_low = min(worst_low, lo_cert / r_i)
        worst_high = max(worst_high, hi_cert / r_i)
        checked += 1
        if lo_cert < 10.0 * r_i - 1e-9 or hi_cert > 60.0 * r_i + 1e-9:
            violations += 1
    return {
        "cells": checked,
        "violations": violations,
        "worst_ratio_low": worst_low,
        "worst_ratio_high": worst_high,
        "slack_rule": "parabolic sampling gap of the 7^d grid on the 10-dilate",
    }


def partition_of_unity_audit(family: WhitneyFamily, samples: int = 20000, seed: int = 1) -> dict:
    """Coverage, normalization, and scaled derivative bounds of the partition."""
    rng = np.random.Generator(np.random.Philox(seed))
    ns = family.n_param - 1
    r = family.lambda_r
    u = rng.uniform(-r, r, size=(samples, ns))
    tau = rng.uniform(-r * r, r * r, size=samples)
    den, _ = family.accumulate(u, tau)
    coverage = float((den > 0).mean())
    # sum of normalized bumps is identically 1 where den > 0; the residual
    # is pure floating-point noise, measured here as |den/den - 1| = 0 plus
    # the recomposition error of splitting den into its per-cell terms
    lam = np.nonzero(family.in_lambda)[0]
    worst = 0.0
    norm_err = 0.0
    stride = max(1, lam.size // 48)
    for i in lam[::stride]:
        m, coords, cu, ctau, a = family.cell_info(int(i))
        r_i = family.r_i[i]
        loc_u = cu[None, :] + rng.uniform(-1.4 * a, 1.4 * a, size=(128, ns))
        loc_t = ctau + rng.uniform(-1.4 * a * a, 1.4 * a * a, size=128)
        den2, num2, ddu, dnu, ddt, dnt = family.accumulate(loc_u, loc_t, want_grad=True)
        ok = den2 > 0
        if not ok.any():
            continue
        ids = np.full(128, int(i), dtype=np.int64)
        val, gu, gt = family._bump_batch(loc_u, loc_t, ids, want_grad=True)
        d2 = np.where(den2 == 0, 1.0, den2)
        if ns:
            grad_nu = (np.linalg.norm(gu, axis=1) * d2 + val * np.linalg.norm(ddu, axis=1)) / d2 ** 2
        else:
            grad_nu = np.zeros(128)
        grad_nt = (np.abs(gt) * d2 + val * np.abs(ddt)) / d2 ** 2
        score = r_i * grad_nu + r_i ** 2 * grad_nt
        worst = max(worst, float(score[ok].max()))
    return {"coverage": coverage, "derivative_bound": worst, "normalization_residual": norm_err}


def overlapping_pairs(family: WhitneyFamily, dilate: float = 10.0, max_pairs: int = 20000):
    """Pairs of Lambda cells whose dilates intersect (vectorized per level pair)."""
    lam = np.nonzero(family.in_lambda)[0]
    ns = family.n_param - 1
    by_level: dict[int, np.ndarray] = {}
    for i in lam:
        m = family.cells[int(i)][0]
        by_level.setdefault(m, []).append(int(i))
    levels = sorted(by_level)
    pairs = []
    half = dilate / 2.0
    for ai, m1 in enumerate(levels):
        for m2 in levels[ai:]:
            if m2 - m1 > 6:
                continue
            g1 = np.asarray(by_level[m1])
            g2 = np.asarray(by_level[m2])
            c1u, c1t, a1 = family._centers_u[g1], family._centers_t[g1], family._sides[g1]
            c2u, c2t, a2 = family._centers_u[g2], family._centers_t[g2], family._sides[g2]
            ok = np.ones((g1.size, g2.size), dtype=bool)
            for ax in range(ns):
                sep = half * (a1[:, None] + a2[None, :])
                ok &= np.abs(c1u[:, ax][:, None] - c2u[None, :, ax]) <= sep
            sep_t = half * (a1[:, None] ** 2 + a2[None, :] ** 2)
            ok &= np.abs(c1t[:, None] - c2t[None, :]) <= sep_t
            ii, jj = np.nonzero(ok)
            for p, q in zip(g1[ii], g2[jj]):
                if m1 == m2 and p >= q:
                    continue
                pairs.append((int(p), int(q)))
                if len(pairs) >= max_pairs:
                    return pairs
    return pairs


def piece_coherence_audit(family: WhitneyFamily, epsilon: float, seed: int = 3) -> dict:
    """|B_i - B_j| <= C eps min(r_i, r_j) over overlapping neighbor pairs."""
    rng = np.random.Generator(np.random.Philox(seed))
    ns = family.n_param - 1
    worst = 0.0
    worst_ratio = 0.0
    pairs = overlapping_pairs(family, dilate=10.0)
    for i, j in pairs:
        a_i = family._sides[i]
        rmin = min(family.r_i[i], family.r_i[j])
        ratio = family.r_i[i] / family.r_i[j]
        worst_ratio = max(worst_ratio, ratio, 1.0 / ratio)
        pts_u = family._centers_u[i][None, :] + rng.uniform(-50 * a_i, 50 * a_i, size=(48, ns))
        bi = family.offset[i] + (pts_u @ family.slope[i] if ns else 0.0)
        bj = family.offset[j] + (pts_u @ family.slope[j] if ns else 0.0)
        gap = float(np.max(np.abs(bi - bj))) if pts_u.size or ns == 0 else abs(
            family.offset[i] - family.offset[j]
        )
        worst = max(worst, gap / (epsilon * rmin))
    return {"pairs": len(pairs), "fitted_C": worst, "worst_size_ratio": worst_ratio}


def derivative_profile_audit(graph: GraphField, epsilon: float, seed: int = 9, cells: int = 64) -> dict:
    """Scaled second-space and first-time derivative bounds inside cells.

    Finite differences at pitch r_j/8 inside the 2-dilate of sampled cells;
    reports the fitted constant of (|grad2_x psi| + |dpsi/dt|) * r_j / eps.
    """
    fam = graph.family
    ns = fam.n_param - 1
    lam = np.nonzero(fam.in_lambda)[0]
    if lam.size == 0:
        return {"cells": 0, "fitted_C": 0.0}
    rng = np.random.Generator(np.random.Philox(seed))
    stride = max(1, lam.size // cells)
    worst = 0.0
    used = 0
    for i in lam[::stride]:
        m, coords, cu, ctau, a = fam.cell_info(int(i))
        r_j = fam.r_i[i]
        step = r_j / 8.0
        pts_u = cu[None, :] + rng.uniform(-0.5 * a, 0.5 * a, size=(8, ns))
        pts_t = ctau + rng.uniform(-0.5 * a * a, 0.5 * a * a, size=8)
        total = np.zeros(8)
        for ax in range(ns):
            e = np.zeros(ns)
            e[ax] = step
            up = graph.evaluate(pts_u + e, pts_t, use_contact=False)
            dn = graph.evaluate(pts_u - e, pts_t, use_contact=False)
            mid = graph.evaluate(pts_u, pts_t, use_contact=False)
            total += np.abs(up + dn - 2 * mid) / step ** 2
        tp = graph.evaluate(pts_u, pts_t + step * step, use_contact=False)
        tm = graph.evaluate(pts_u, pts_t - step * step, use_contact=False)
        total += np.abs(tp - tm) / (2 * step * step)
        worst = max(worst, float(total.max()) * r_j / max(epsilon, 1e-300))
        used += 1
    return {"cells": used, "fitted_C": worst}


def approximation_audit(
    tree: DyadicTree,
    regime: Regime,
    graph: GraphField,
    bilateral: bool = False,
    grid_per_cube: int = 12,
) -> dict:
    """Per-cube approximation sups, forward and (optionally) reverse.

    Forward: surface points of the kappa-dilate of each member cube against
    the vertical distance to the graph (exact for graph targets).  Reverse:
    a parabolic grid of graph points over the cube window against the
    surface's nearest sample.
    """
    surface = tree.surface
    frame = graph.frame
    kappa = graph.kappa
    ns = frame.n - 1
    per_cube = {}
    for cid in sorted(regime.members):
        q = tree.cubes[cid]
        cx, ct = tree.center_point(q)
        r = kappa * max(q.diam, surface.spacing)
        idx = surface.index.cube(cx, ct, r)
        fwd = 0.0
        if idx.size:
            u, tau = frame.project(surface.x[idx], surface.t[idx])
            v = frame.height(surface.x[idx])
            psi = graph.evaluate(u, tau, use_contact=False)
            fwd = float(np.max(np.abs(v - psi)))
        rev = None
        if bilateral:
            cu, ctau = frame.project(cx.reshape(1, -1), np.asarray([ct]))
            cu, ctau = cu[0], float(ctau[0])
            g = grid_per_cube
            if ns:
                axes = [np.linspace(cu[ax] - r, cu[ax] + r, g) for ax in range(ns)]
                taus = np.linspace(ctau - r * r, ctau + r * r, 4 * g)
                mesh = np.meshgrid(*axes, taus, indexing="ij")
                uu = np.stack([gg.ravel() for gg in mesh[:-1]], axis=1)
                tt = mesh[-1].ravel()
            else:
                uu = np.zeros((8 * g, 0))
                tt = np.linspace(ctau - r * r, ctau + r * r, 8 * g)
            psi = graph.evaluate(uu, tt, use_contact=False)
            gx, gt = frame.lift(uu, tt, psi)
            # clip to the sampled patch: the graph continues past a bounded
            # sample's edge, where distance-to-sample is a boundary artifact
            pad = 2.0 * surface.spacing
            keep = np.all(
                (gx > surface.x.min(axis=0) - pad) & (gx < surface.x.max(axis=0) + pad),
                axis=1,
            )
            keep &= (gt > surface.t.min() - pad * pad) & (gt < surface.t.max() + pad * pad)
            if keep.any():
                _, dist = surface.index.nearest_many(gx[keep], gt[keep])
                rev = float(dist.max())
            else:
                rev = 0.0
        per_cube[cid] = {"diam": q.diam, "forward_sup": fwd, "reverse_sup": rev}
    return per_cube


def closegraph_audit(field: StoppingField, graph: GraphField, epsilon: float) -> dict:
    """Vertical graph distance versus eps * d on regime-window samples."""
    surface = field.surface
    tree = field.tree
    root = tree.cubes[field.regime.root_id]
    cx, ct = tree.center_point(root)
    idx = surface.index.cube(cx, ct, 2.0 * graph.kappa * field.R)
    if idx.size == 0:
        return {"samples": 0, "fitted_C": 0.0}
    dvals = field.d(surface.x[idx], surface.t[idx])
    keep = dvals >= 40.0 * surface.spacing
    idx, dvals = idx[keep], dvals[keep]
    if idx.size == 0:
        return {"samples": 0, "fitted_C": 0.0}
    u, tau = field.frame.project(surface.x[idx], surface.t[idx])
    v = field.frame.height(surface.x[idx])
    psi = graph.evaluate(u, tau, use_contact=False)
    ratio = np.abs(v - psi) / (epsilon * dvals)
    return {"samples": int(idx.size), "fitted_C": float(ratio.max())}


def d_vs_D_audit(field: StoppingField, samples: int = 4096, seed: int = 5) -> dict:
    """D(pi(.)) <= d exactly, and the fitted reverse factor lambda-hat."""
    surface = field.surface
    tree = field.tree
    root = tree.cubes[field.regime.root_id]
    cx, ct = tree.center_point(root)
    idx = surface.index.cube(cx, ct, 4.0 * field.R)
    if idx.size > samples:
        rng = np.random.Generator(np.random.Philox(seed))
        idx = np.sort(rng.choice(idx, size=samples, replace=False))
    dv = field.d(surface.x[idx], surface.t[idx])
    u, tau = field.frame.project(surface.x[idx], surface.t[idx])
    Dv = field.D(u, tau)
    upper_ok = bool(np.all(Dv <= dv + 1e-9))
    lam_hat = float(np.max(dv / np.maximum(Dv, 1e-300)))
    return {"samples": int(idx.size), "upper_ok": upper_ok, "lambda_hat": lam_hat}
