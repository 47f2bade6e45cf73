"""Christ-type parabolic dyadic cube decomposition of a Surface.

Construction: nested maximal separated nets (greedy in point order), points
assigned within their parent cube to the nearest net center, so that every
generation partitions the surface and nesting is exact by construction.
Small-boundary behavior is measured, not enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .metric import Surface, dp_to_point, pairwise_dp

__all__ = ["Cube", "DyadicTree", "build_tree", "dilate", "small_boundary_profile"]


@dataclass
class Cube:
    id: str
    k: int
    center_index: int
    members: np.ndarray
    ell: float
    sigma: float
    radius: float
    diam: float
    parent: str | None
    children: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.members.size)


class DyadicTree:
    def __init__(self, surface: Surface, scale0: float, cubes: dict, generations: dict):
        self.surface = surface
        self.scale0 = scale0
        self.cubes = cubes
        self.generations = generations
        self.root_id = generations[0][0]
        self.k_max = max(generations)
        self.warnings: tuple = ()
        self.min_ell_factor: float = 20.0

    @property
    def root(self) -> Cube:
        return self.cubes[self.root_id]

    def center_point(self, cube: Cube):
        return self.surface.x[cube.center_index], float(self.surface.t[cube.center_index])

    def ancestors(self, cube_id: str):
        c = self.cubes[cube_id]
        while c.parent is not None:
            c = self.cubes[c.parent]
            yield c

    def all_ids(self):
        for k in sorted(self.generations):
            yield from self.generations[k]


def _measured_diam(surface: Surface, members: np.ndarray, cx, ct, radius: float) -> float:
    if members.size <= 1:
        return 0.0
    if members.size <= 512:
        dm = pairwise_dp(surface.x[members], surface.t[members], surface.x[members], surface.t[members])
        return float(dm.max())
    # center-radius bound, within a factor 2 of the true diameter
    return 2.0 * radius


def _greedy_net(surface: Surface, sep: float, seed_indices: np.ndarray) -> np.ndarray:
    """Maximal sep-separated net in point order, seeded with a coarser net."""
    net = list(int(i) for i in seed_indices)
    net_x = [surface.x[i] for i in net]
    net_t = [surface.t[i] for i in net]
    chunk = 2048
    for start in range(0, surface.size, chunk):
        idx = np.arange(start, min(start + chunk, surface.size))
        if net:
            nx = np.asarray(net_x)
            nt = np.asarray(net_t)
            dm = pairwise_dp(surface.x[idx], surface.t[idx], nx, nt)
            cand = idx[dm.min(axis=1) >= sep]
        else:
            cand = idx
        for i in cand:
            i = int(i)
            ok = True
            if net:
                d = dp_to_point(np.asarray(net_x), np.asarray(net_t), surface.x[i], surface.t[i])
                ok = bool(d.min() >= sep)
            if ok:
                net.append(i)
                net_x.append(surface.x[i])
                net_t.append(surface.t[i])
    return np.asarray(net, dtype=np.int64)


def build_tree(
    surface: Surface,
    min_ell_factor: float = 20.0,
    max_depth: int | None = None,
    adr_verified: bool = False,
) -> DyadicTree:
    """Build the parabolic dyadic tree.

    Generation sizes halve from scale0 (smallest power of two at least the
    surface diameter, single root) down to the resolution floor
    min_ell_factor * spacing.  Deterministic: identical surfaces give
    identical trees.
    """
    if surface.size == 0:
        raise InputError("empty surface")
    warnings = [] if adr_verified else ["ADR not verified before tree build"]
    scale0 = 2.0 ** math.ceil(math.log2(max(surface.diam, surface.spacing)))
    k_max = 0
    while True:
        nxt = scale0 * 2.0 ** (-(k_max + 1))
        if nxt < min_ell_factor * surface.spacing:
            break
        if max_depth is not None and k_max + 1 > max_depth:
            break
        k_max += 1

    all_points = np.arange(surface.size, dtype=np.int64)
    nets = {0: np.asarray([0], dtype=np.int64)}
    for k in range(1, k_max + 1):
        nets[k] = _greedy_net(surface, scale0 * 2.0 ** (-k), nets[k - 1])
    net_rank = np.full(surface.size, np.iinfo(np.int32).max, dtype=np.int32)
    for k in range(k_max, -1, -1):
        net_rank[nets[k]] = k

    cubes: dict[str, Cube] = {}
    generations: dict[int, list] = {}

    def make_cube(k, center_idx, members, parent_id):
        cx, ct = surface.x[center_idx], float(surface.t[center_idx])
        dists = dp_to_point(surface.x[members], surface.t[members], cx, ct)
        radius = float(dists.max()) if members.size else 0.0
        cube = Cube(
            id=f"c{k:02d}_{center_idx:08d}",
            k=k,
            center_index=int(center_idx),
            members=np.sort(members),
            ell=scale0 * 2.0 ** (-k),
            sigma=float(surface.w[members].sum()),
            radius=radius,
            diam=_measured_diam(surface, np.sort(members), cx, ct, radius),
            parent=parent_id,
        )
        cubes[cube.id] = cube
        generations.setdefault(k, []).append(cube.id)
        return cube

    root = make_cube(0, 0, all_points, None)
    frontier = [root]
    for k in range(1, k_max + 1):
        new_frontier = []
        in_net = net_rank <= k
        for parent in frontier:
            cand = parent.members[in_net[parent.members]]
            # the parent's own center persists in every finer net
            if cand.size == 1:
                child = make_cube(k, cand[0], parent.members, parent.id)
                parent.children.append(child.id)
                new_frontier.append(child)
                continue
            dm = pairwise_dp(
                surface.x[parent.members], surface.t[parent.members],
                surface.x[cand], surface.t[cand],
            )
            owner = np.argmin(dm, axis=1)  # ties resolve to the lower index
            for j in range(cand.size):
                sub = parent.members[owner == j]
                if sub.size == 0:
                    continue
                child = make_cube(k, cand[j], sub, parent.id)
                parent.children.append(child.id)
                new_frontier.append(child)
        frontier = new_frontier
    for k in generations:
        generations[k].sort()
    tree = DyadicTree(surface, scale0, cubes, generations)
    tree.warnings = tuple(warnings)
    tree.min_ell_factor = float(min_ell_factor)
    return tree


def dilate(tree: DyadicTree, cube: Cube, lam: float) -> np.ndarray:
    """Surface points in the cube of length lam * diam(Q) around Q's center."""
    if lam < 1.0:
        raise InputError("dilation factor must be >= 1")
    cx, ct = tree.center_point(cube)
    r = lam * max(cube.diam, tree.surface.spacing)
    return tree.surface.index.cube(cx, ct, r)


def small_boundary_profile(tree: DyadicTree, cube: Cube, rho_list) -> list:
    """Measured boundary-layer mass ratios at depth rho * ell(Q)."""
    surface = tree.surface
    rhos = sorted(float(r) for r in rho_list)
    if not rhos:
        return []
    rmax = rhos[-1] * cube.ell
    members = cube.members
    in_cube = np.zeros(surface.size, dtype=bool)
    in_cube[members] = True
    dist = np.full(members.size, np.inf)
    for j, i in enumerate(members):
        cand = surface.index.cube(surface.x[i], surface.t[i], rmax * 1.5 + surface.spacing)
        outside = cand[~in_cube[cand]]
        if outside.size:
            dist[j] = dp_to_point(surface.x[outside], surface.t[outside], surface.x[i], surface.t[i]).min()
    out = []
    for rho in rhos:
        layer = dist <= rho * cube.ell
        ratio = float(surface.w[members[layer]].sum() / cube.sigma) if cube.sigma > 0 else 0.0
        out.append((rho, ratio))
    return out


def containment_constants(tree: DyadicTree) -> dict:
    """Measured constants of the center-cube containment chain.

    For each cube, r_out is the smallest cube length around the center
    containing all members, and r_in the largest whose surface points are
    all members.  Returns the worst ratios to ell(Q) across the tree.
    """
    surface = tree.surface
    c_out = 0.0
    alpha_in = math.inf
    for cid in tree.all_ids():
        q = tree.cubes[cid]
        cx, ct = tree.center_point(q)
        dx = np.max(np.abs(surface.x[q.members] - cx), axis=1) if q.size else np.zeros(1)
        dt = np.sqrt(np.abs(surface.t[q.members] - ct)) if q.size else np.zeros(1)
        r_out = float(np.maximum(dx, dt).max()) + 1e-12
        c_out = max(c_out, r_out / q.ell)
        cand = surface.index.cube(cx, ct, 2.0 * q.ell)
        in_cube = np.isin(cand, q.members)
        outside = cand[~in_cube]
        if outside.size:
            dxo = np.max(np.abs(surface.x[outside] - cx), axis=1)
            dto = np.sqrt(np.abs(surface.t[outside] - ct))
            r_in = float(np.maximum(dxo, dto).min())
        else:
            r_in = 2.0 * q.ell
        alpha_in = min(alpha_in, r_in / q.ell)
    return {"c_outer": c_out, "alpha_inner": alpha_in}
