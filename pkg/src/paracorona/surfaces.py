"""Synthetic surface batteries with analytic ground truth.

Graph kinds sample x_n = psi(u, t) over the reference plane {x_n = 0} on a
parabolic grid (spatial pitch h, time pitch h^2) with weights from the
parametric area element.  The Cantor product kind reproduces the
positive-parabolic-measure / null-slicewise-measure example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .metric import Surface
from .planes import TPlane

__all__ = ["SurfaceSpec", "GroundTruth", "synthesize", "KINDS"]

KINDS = (
    "t_plane",
    "tilted_plane",
    "lip_graph",
    "regular_graph",
    "bent_graph",
    "holed_plane",
    "ridge",
    "weierstrass_t",
    "cantor_product",
)


@dataclass(frozen=True)
class SurfaceSpec:
    kind: str
    n: int
    extent: float
    h: float
    params: dict = field(default_factory=dict)
    seed: int = 0
    t_extent: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown surface kind {self.kind!r}")
        if self.n < 1:
            raise InputError("n must be >= 1")
        if self.h <= 0 or self.extent <= 0:
            raise InputError("extent and h must be positive")

    @property
    def time_extent(self) -> float:
        return self.extent ** 2 if self.t_extent is None else self.t_extent


@dataclass
class GroundTruth:
    b1: float | None
    planes: list
    regime_notes: str
    beta_notes: str
    extras: dict = field(default_factory=dict)


def _grid(spec: SurfaceSpec):
    """Cell-midpoint parabolic grid over the plane coordinates."""
    L = spec.extent
    T = spec.time_extent
    h = spec.h
    nu = max(1, int(round(L / h)))
    nt = max(1, int(round(T / (h * h))))
    axes = [(-L / 2.0 + (np.arange(nu) + 0.5) * h) for _ in range(spec.n - 1)]
    ts = -T / 2.0 + (np.arange(nt) + 0.5) * h * h
    if spec.n - 1:
        mesh = np.meshgrid(*axes, ts, indexing="ij")
        u = np.stack([m.ravel() for m in mesh[:-1]], axis=1)
        t = mesh[-1].ravel()
    else:
        u = np.zeros((nt, 0))
        t = ts
    return u, t


def _graph_surface(spec: SurfaceSpec, psi, grad_u, warn=()):
    u, t = _grid(spec)
    vals = psi(u, t)
    x = np.concatenate([u, vals[:, None]], axis=1)
    if spec.n - 1:
        g = grad_u(u, t)
        area = np.sqrt(1.0 + (g ** 2).sum(axis=1))
    else:
        area = np.ones(t.size)
    # cell mass scaled by 2^-n so open cubes C_r carry mass ~ r^(n+1)
    w = area * spec.h ** (spec.n + 1) / 2.0 ** spec.n
    return Surface(x, t, w, spacing=spec.h)


def _smoothstep(v: np.ndarray) -> np.ndarray:
    s = np.clip(v, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _smoothstep_integral(v: np.ndarray) -> np.ndarray:
    """Antiderivative of the quintic smoothstep, zero at 0."""
    s = np.clip(v, 0.0, 1.0)
    base = 2.5 * s ** 4 - 3.0 * s ** 5 + s ** 6
    return base + np.maximum(v - 1.0, 0.0)


def _require_resolved(spec, name, period_t=None, period_x=None):
    if period_t is not None and spec.h ** 2 > period_t / 4.0:
        raise InputError(
            f"h too coarse for {name}: time feature {period_t:g} needs h^2 <= {period_t / 4.0:g}"
        )
    if period_x is not None and spec.h > period_x / 4.0:
        raise InputError(
            f"h too coarse for {name}: spatial feature {period_x:g} needs h <= {period_x / 4.0:g}"
        )


def synthesize(spec: SurfaceSpec):
    """Build the surface and its ground truth; deterministic given the seed."""
    n = spec.n
    p = dict(spec.params)
    rng = np.random.Generator(np.random.Philox(spec.seed))
    e_last = np.zeros(n)
    e_last[-1] = 1.0
    base_plane = TPlane(e_last, 0.0)

    if spec.kind == "t_plane":
        surf = _graph_surface(spec, lambda u, t: np.zeros(t.size), lambda u, t: np.zeros_like(u))
        return surf, GroundTruth(
            b1=0.0, planes=[base_plane],
            regime_notes="single regime expected", beta_notes="beta ~ discretization only",
        )

    if spec.kind == "tilted_plane":
        if n < 2:
            raise InputError("tilted_plane needs n >= 2")
        slope = float(p.get("slope", 0.1))
        surf = _graph_surface(
            spec,
            lambda u, t: slope * u[:, 0],
            lambda u, t: np.concatenate(
                [np.full((u.shape[0], 1), slope), np.zeros((u.shape[0], u.shape[1] - 1))], axis=1
            ),
        )
        normal = np.zeros(n)
        normal[0] = -slope
        normal[-1] = 1.0
        return surf, GroundTruth(
            b1=slope, planes=[TPlane(normal, 0.0)],
            regime_notes="single regime", beta_notes="beta ~ 0 against the tilted plane",
        )

    if spec.kind == "lip_graph":
        target = float(p.get("b1", 0.1))
        tones = int(p.get("tones", 3))
        L, T = spec.extent, spec.time_extent
        om = 2.0 * math.pi / L * (1.0 + np.arange(tones))
        eta = 2.0 * math.pi / T * 4.0 ** np.arange(tones)
        phases = rng.uniform(0, 2 * math.pi, size=(tones, 2))
        raw = om + np.sqrt(2.0 * eta)
        amps = target / (tones * raw)

        def psi(u, t):
            out = np.zeros(t.size)
            xu = u[:, 0] if u.shape[1] else 0.0
            for k in range(tones):
                out += amps[k] * np.sin(om[k] * xu + phases[k, 0]) * np.cos(
                    eta[k] * t + phases[k, 1]
                )
            return out

        def grad(u, t):
            g = np.zeros_like(u)
            if u.shape[1]:
                for k in range(tones):
                    g[:, 0] += amps[k] * om[k] * np.cos(om[k] * u[:, 0] + phases[k, 0]) * np.cos(
                        eta[k] * t + phases[k, 1]
                    )
            return g

        surf = _graph_surface(spec, psi, grad)
        return surf, GroundTruth(
            b1=target, planes=[base_plane],
            regime_notes="few regimes at delta >= b1",
            beta_notes="beta_inf <= b1 at all scales",
        )

    if spec.kind == "regular_graph":
        amp = float(p.get("amp", 0.05))
        om_x = float(p.get("om_x", 2.0 * math.pi / spec.extent))
        om_t = float(p.get("om_t", 2.0 * math.pi / spec.time_extent))
        _require_resolved(spec, "regular_graph oscillation",
                          period_t=2.0 * math.pi / om_t,
                          period_x=2.0 * math.pi / om_x if n >= 2 else None)

        def psi(u, t):
            sp = np.sin(om_x * u[:, 0]) if u.shape[1] else 1.0
            return amp * sp * np.sin(om_t * t)

        def grad(u, t):
            g = np.zeros_like(u)
            if u.shape[1]:
                g[:, 0] = amp * om_x * np.cos(om_x * u[:, 0]) * np.sin(om_t * t)
            return g

        surf = _graph_surface(spec, psi, grad)
        b1 = amp * ((om_x if n >= 2 else 0.0) + math.sqrt(2.0 * om_t))
        return surf, GroundTruth(
            b1=b1, planes=[base_plane],
            regime_notes="single smooth regime",
            beta_notes="smooth graph: beta decays with scale",
        )

    if spec.kind == "bent_graph":
        if n < 2:
            raise InputError("bent_graph needs n >= 2")
        total = float(p.get("slope", 0.15))
        width = float(p.get("width", spec.extent / 4.0))

        def psi(u, t):
            return total * width * _smoothstep_integral(u[:, 0] / width + 0.5)

        def grad(u, t):
            g = np.zeros_like(u)
            g[:, 0] = total * _smoothstep(u[:, 0] / width + 0.5)
            return g

        surf = _graph_surface(spec, psi, grad)
        normal2 = np.zeros(n)
        normal2[0] = -total
        normal2[-1] = 1.0
        return surf, GroundTruth(
            b1=total, planes=[base_plane, TPlane(normal2, 0.0)],
            regime_notes="regimes split across the bend when total slope > delta",
            beta_notes="beta peaks at the bend scale",
            extras={"total_slope": total, "width": width},
        )

    if spec.kind == "holed_plane":
        hole_r = float(p.get("hole_r", spec.extent / 8.0))
        if hole_r < 4.0 * spec.h:
            raise InputError(
                f"h too coarse for holed_plane: hole radius {hole_r:g} needs h <= {hole_r / 4.0:g}"
            )
        u, t = _grid(spec)
        x = np.concatenate([u, np.zeros((t.size, 1))], axis=1)
        dp = (np.linalg.norm(u, axis=1) if u.shape[1] else np.zeros(t.size)) + np.sqrt(np.abs(t))
        keep = dp >= hole_r
        w = np.full(keep.sum(), spec.h ** (n + 1) / 2.0 ** n)
        surf = Surface(x[keep], t[keep], w, spacing=spec.h)
        return surf, GroundTruth(
            b1=0.0, planes=[base_plane],
            regime_notes="bilateral regimes avoid the hole dilate",
            beta_notes="one-sided beta ~ 0; bilateral beta jumps near the hole",
            extras={"hole_r": hole_r},
        )

    if spec.kind == "ridge":
        if n < 2:
            raise InputError("ridge needs n >= 2")
        slope = float(p.get("slope", 0.4))

        def psi(u, t):
            return slope * np.maximum(u[:, 0], 0.0)

        def grad(u, t):
            g = np.zeros_like(u)
            g[:, 0] = slope * (u[:, 0] > 0)
            return g

        surf = _graph_surface(spec, psi, grad)
        normal2 = np.zeros(n)
        normal2[0] = -slope
        normal2[-1] = 1.0
        return surf, GroundTruth(
            b1=slope, planes=[base_plane, TPlane(normal2, 0.0)],
            regime_notes="bad cubes straddle the ridge at every scale",
            beta_notes="beta_inf bounded below on ridge-straddling windows",
            extras={"ridge_slope": slope},
        )

    if spec.kind == "weierstrass_t":
        J = int(p.get("octaves", 4))
        amp = float(p.get("amp", 0.1))
        om0 = float(p.get("om0", 2.0 * math.pi / spec.time_extent * 4.0))
        if J > 0:
            _require_resolved(spec, "weierstrass_t finest octave",
                              period_t=2.0 * math.pi / (om0 * 2.0 ** (J - 1)))

        def psi(u, t):
            out = np.zeros(t.size)
            for j in range(J):
                out += amp * 2.0 ** (-j / 2.0) * np.cos(2.0 ** j * om0 * t)
            return out

        surf = _graph_surface(spec, psi, lambda u, t: np.zeros_like(u))
        # each octave has Hoelder-1/2 constant amp*sqrt(2*om0); the tone-sum
        # bound is crude but safe
        b1 = amp * math.sqrt(2.0 * om0) * J
        return surf, GroundTruth(
            b1=b1, planes=[base_plane],
            regime_notes="Lip(1,1/2) at criticality; not regular as J grows",
            beta_notes="per-octave unit contributions to the half derivative",
            extras={"octaves": J, "amp": amp, "om0": om0},
        )

    if spec.kind == "cantor_product":
        g = int(p.get("generation", 4))
        s_x = 1.0 - 1.0 / (2.0 * n)
        rho_x = 2.0 ** (-1.0 / s_x)
        rho_t = 2.0 ** (-4.0 / 3.0)

        def midpoints(rho, gen):
            pts = np.asarray([0.5])
            length = 1.0
            for _ in range(gen):
                off = length * (1.0 - rho) / 2.0
                pts = np.sort(np.concatenate([pts - off, pts + off]))
                length *= rho
            return pts, length

        xs, len_x = midpoints(rho_x, g)
        ts, len_t = midpoints(rho_t, g)
        L = spec.extent
        axes = [xs * L for _ in range(n)]
        mesh = np.meshgrid(*axes, ts * L * L, indexing="ij")
        x = np.stack([m.ravel() for m in mesh[:-1]], axis=1)
        t = mesh[-1].ravel()
        w = np.full(t.size, 1.0 / t.size) * (L ** (n + 1))
        gap_x = L * rho_x ** (g - 1) * (1.0 - 2.0 * rho_x) if g else L
        gap_t = L * L * rho_t ** (g - 1) * (1.0 - 2.0 * rho_t) if g else L * L
        spacing = min(gap_x, math.sqrt(gap_t))
        surf = Surface(x, t, w, spacing=spacing)
        return surf, GroundTruth(
            b1=None, planes=[],
            regime_notes="p-ADR with null slice-wise measure",
            beta_notes="not a graph; measure comparison battery only",
            extras={
                "generation": g,
                "finest_time_feature": L * L * rho_t ** g,
                "finest_space_feature": L * rho_x ** g,
            },
        )

    raise InputError(f"unhandled kind {spec.kind!r}")
