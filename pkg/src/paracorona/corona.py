"""Corona decomposition: bad cubes and coherent stopping-time regimes.

Splits the dyadic lattice at a beta threshold, grows regimes top-down under
an angle budget to a reference plane, and measures the Carleson packing
constants of the bad set and the regime roots.  The bilateral variant
subdivides the unilateral regimes at two-sided-beta boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .lattice import DyadicTree
from .planes import BetaRecord, TPlane, plane_angle

__all__ = [
    "CoronaParams",
    "Regime",
    "CoronaResult",
    "classify_cubes",
    "build_regimes",
    "build_bilateral_regimes",
    "packing_constant",
    "audit_coherence",
    "audit_stopping_conditions",
]

ANGLE_TOL = 1e-6


@dataclass(frozen=True)
class CoronaParams:
    epsilon: float
    delta: float
    kappa: float = 2.0
    K: float = 4.0

    def __post_init__(self):
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise InputError("epsilon and delta must lie in (0, 1)")
        if self.epsilon > self.delta / 20.0:
            raise InputError(
                f"epsilon must be << delta: require epsilon <= delta/20 "
                f"(epsilon={self.epsilon:g}, delta/20={self.delta / 20.0:g})"
            )
        if self.K < 2 * self.kappa:
            raise InputError("K must be at least 2*kappa")


@dataclass
class Regime:
    id: str
    root_id: str
    members: list
    m0: list
    m1: list
    m_sibling: list
    m_leaf: list
    plane: TPlane

    @property
    def minimal_cubes(self):
        return sorted(self.m0 + self.m1 + self.m_sibling + self.m_leaf)


@dataclass
class CoronaResult:
    bad: list
    bad_flags: dict
    regimes: list
    assignments: dict
    packing_bad: float
    packing_roots: float
    params: CoronaParams
    bilateral: bool


def classify_cubes(tree: DyadicTree, records: dict, params: CoronaParams, bilateral: bool = False):
    """Threshold split into bad and good cubes.

    Bad cubes are those whose (bilateral) sup beta number is at least
    epsilon; below-resolution cubes are bad with flag "resolution" and are
    excluded from packing audits.
    """
    missing = [cid for cid in tree.all_ids() if cid not in records]
    if missing:
        raise InputError(f"missing beta records for cubes: {missing[:8]}")
    bad, good, flags = [], [], {}
    for cid in tree.all_ids():
        rec: BetaRecord = records[cid]
        if rec.resolution_flag:
            bad.append(cid)
            flags[cid] = "resolution"
            continue
        val = rec.bbeta_inf if bilateral else rec.beta_inf
        if val is None:
            raise InputError(f"record for {cid} lacks the bilateral beta")
        if val >= params.epsilon:
            bad.append(cid)
            flags[cid] = "beta"
        else:
            good.append(cid)
    return set(bad), set(good), flags


def _cube_plane(records: dict, cid: str, bilateral: bool) -> TPlane:
    rec = records[cid]
    plane = rec.plane_bil if bilateral else rec.plane_sup
    if plane is None:
        plane = rec.plane_sup
    return plane


def _grow_regime(tree, records, good, root_id, params, bilateral, assignments, regime_id):
    """Top-down sweep from a seed cube under the angle budget."""
    delta = params.delta
    plane_root = _cube_plane(records, root_id, bilateral)
    members, m0, m1, m_sib, m_leaf = [], [], [], [], []
    queue = [root_id]
    while queue:
        cid = queue.pop(0)
        members.append(cid)
        assignments[cid] = regime_id
        q = tree.cubes[cid]
        if not q.children:
            m_leaf.append(cid)
            continue
        child_bad = [c for c in q.children if c not in good]
        if child_bad:
            m0.append(cid)
            continue
        angles = [plane_angle(_cube_plane(records, c, bilateral), plane_root) for c in q.children]
        if max(angles) > delta + ANGLE_TOL:
            own = plane_angle(_cube_plane(records, cid, bilateral), plane_root)
            if own >= delta / 2.0 - ANGLE_TOL:
                m1.append(cid)
            else:
                m_sib.append(cid)
            continue
        queue.extend(sorted(q.children))
    return Regime(
        id=regime_id, root_id=root_id, members=members,
        m0=m0, m1=m1, m_sibling=m_sib, m_leaf=m_leaf, plane=plane_root,
    )


def build_regimes(tree: DyadicTree, records: dict, params: CoronaParams, bilateral_threshold: bool = False) -> CoronaResult:
    """Partition the good cubes into coherent stopping-time regimes.

    Seeds are taken largest-first (ties by id); a regime absorbs children
    only all-at-once, and only while their planes stay within the angle
    budget of the seed's plane.  Deterministic.
    """
    bad, good, flags = classify_cubes(tree, records, params, bilateral=bilateral_threshold)
    assignments = {cid: "bad" for cid in bad}
    regimes = []
    seed_order = sorted(
        (cid for cid in tree.all_ids() if cid in good),
        key=lambda cid: (tree.cubes[cid].k, cid),
    )
    for cid in seed_order:
        if cid in assignments:
            continue
        rid = f"S{len(regimes):05d}"
        regimes.append(
            _grow_regime(tree, records, good, cid, params, bilateral_threshold, assignments, rid)
        )
    packing_bad = packing_constant(
        tree, [c for c in bad if flags.get(c) != "resolution"]
    )
    packing_roots = packing_constant(tree, [r.root_id for r in regimes])
    return CoronaResult(
        bad=sorted(bad), bad_flags=flags, regimes=regimes,
        assignments=assignments, packing_bad=packing_bad,
        packing_roots=packing_roots, params=params, bilateral=bilateral_threshold,
    )


def build_bilateral_regimes(tree: DyadicTree, records: dict, params: CoronaParams) -> CoronaResult:
    """Bilateral corona: subdivide unilateral regimes at two-sided boundaries.

    Runs the unilateral construction on the one-sided betas, classifies with
    the bilateral betas, then re-roots regimes at cubes whose parent or a
    sibling is two-sided-bad, descending until leaving the host regime or
    hitting a bad sibling.
    """
    bad_star, good_star, flags = classify_cubes(tree, records, params, bilateral=True)
    uni = build_regimes(tree, records, params, bilateral_threshold=False)
    assignments = {cid: "bad" for cid in bad_star}
    regimes = []
    for S in uni.regimes:
        in_S = set(S.members)
        live = [cid for cid in S.members if cid in good_star]
        if not live:
            continue
        seeds = []
        for cid in live:
            q = tree.cubes[cid]
            if cid == S.root_id or q.parent is None:
                seeds.append(cid)
                continue
            parent = tree.cubes[q.parent]
            siblings = [c for c in parent.children]
            if q.parent in bad_star or q.parent not in in_S or any(
                s in bad_star for s in siblings
            ):
                seeds.append(cid)
        seeds.sort(key=lambda cid: (tree.cubes[cid].k, cid))
        for seed in seeds:
            if seed in assignments:
                continue
            rid = f"S*{len(regimes):05d}"
            members, m0, m1, m_sib, m_leaf = [], [], [], [], []
            plane_root = _cube_plane(records, seed, True)
            queue = [seed]
            while queue:
                cid = queue.pop(0)
                members.append(cid)
                assignments[cid] = rid
                q = tree.cubes[cid]
                if not q.children:
                    m_leaf.append(cid)
                    continue
                stop_bad = any(c in bad_star for c in q.children)
                stop_left = any(c not in in_S for c in q.children)
                if stop_bad or stop_left:
                    if stop_bad:
                        m0.append(cid)
                    else:
                        own = plane_angle(_cube_plane(records, cid, True), plane_root)
                        (m1 if own >= params.delta / 2.0 - ANGLE_TOL else m_sib).append(cid)
                    continue
                queue.extend(sorted(q.children))
            regimes.append(Regime(
                id=rid, root_id=seed, members=members,
                m0=m0, m1=m1, m_sibling=m_sib, m_leaf=m_leaf, plane=plane_root,
            ))
    packing_bad = packing_constant(
        tree, [c for c in bad_star if flags.get(c) != "resolution"]
    )
    packing_roots = packing_constant(tree, [r.root_id for r in regimes])
    return CoronaResult(
        bad=sorted(bad_star), bad_flags=flags, regimes=regimes,
        assignments=assignments, packing_bad=packing_bad,
        packing_roots=packing_roots, params=params, bilateral=True,
    )


def packing_constant(tree: DyadicTree, family, mass: dict | None = None) -> float:
    """sup over cubes Q of (sum of family mass inside Q) / sigma(Q)."""
    fam = set(family)
    subtotal = {}
    best = 0.0
    for k in sorted(tree.generations, reverse=True):
        for cid in tree.generations[k]:
            q = tree.cubes[cid]
            own = (mass[cid] if mass else q.sigma) if cid in fam else 0.0
            total = own + sum(subtotal[c] for c in q.children)
            subtotal[cid] = total
            if q.sigma > 0:
                best = max(best, total / q.sigma)
    return float(best)


def audit_coherence(tree: DyadicTree, regime: Regime) -> dict:
    """Literal checks of the coherence definition on one regime."""
    mem = set(regime.members)
    root = regime.root_id
    # (a) unique maximal element containing all members
    a_ok = all(
        cid == root or root in [c.id for c in tree.ancestors(cid)] for cid in mem
    )
    # (b) closed under intermediate ancestors up to the root
    b_ok = True
    for cid in mem:
        if cid == root:
            continue
        walker = tree.cubes[cid]
        while walker.parent is not None and walker.id != root:
            walker = tree.cubes[walker.parent]
            if walker.id == root:
                break
            if walker.id not in mem:
                b_ok = False
                break
    # (c) children all-in or all-out
    c_ok = True
    for cid in mem:
        q = tree.cubes[cid]
        if q.children:
            ins = sum(1 for c in q.children if c in mem)
            if ins not in (0, len(q.children)):
                c_ok = False
    return {"a": a_ok, "b": b_ok, "c": c_ok, "ok": a_ok and b_ok and c_ok}


def audit_stopping_conditions(tree: DyadicTree, records: dict, result: CoronaResult) -> dict:
    """Literal (A)/(B) audits over a corona result.

    Returns the worst member angle per regime (condition (A)), plus (B)
    certificate checks on the minimal cubes.
    """
    bilateral = result.bilateral
    budget = (4.0 if bilateral else 1.0) * result.params.delta
    bad = set(result.bad)
    worst_angle = 0.0
    b_ok = True
    for S in result.regimes:
        for cid in S.members:
            ang = plane_angle(_cube_plane(records, cid, bilateral), S.plane)
            worst_angle = max(worst_angle, ang)
        for cid in S.m0:
            if not any(c in bad for c in tree.cubes[cid].children):
                b_ok = False
        for cid in S.m1:
            ang = plane_angle(_cube_plane(records, cid, bilateral), S.plane)
            if ang < result.params.delta / 2.0 - 2 * ANGLE_TOL:
                b_ok = False
    return {
        "worst_angle": worst_angle,
        "angle_budget": budget + ANGLE_TOL,
        "A_ok": worst_angle <= budget + ANGLE_TOL,
        "B_ok": b_ok,
    }
