"""Half time derivative, parabolic BMO, graph square function, Calderon."""

import math

import numpy as np
import pytest

from paracorona.errors import InputError, ResolutionError
from paracorona.regularity import (
    GridFunction,
    calderon_identity_check,
    certify_regular,
    half_t_derivative_fourier,
    half_t_derivative_kernel,
    hat_gamma,
    hat_nu,
    make_bank,
    moment_residuals,
    parabolic_bmo,
)


def _tone_grid(nt=4096, freqs=(8,), coeffs=None, policy="periodic"):
    T = 2.0 * math.pi
    h_t = T / nt
    t = np.arange(nt) * h_t
    coeffs = coeffs or [1.0] * len(freqs)
    vals = sum(c * np.cos(k * t) for c, k in zip(coeffs, freqs))
    return GridFunction(vals, math.sqrt(h_t), policy=policy), t, T


def test_fourier_kills_time_independent():
    vals = np.tile(np.linspace(0, 1, 32)[:, None], (1, 256))
    f = GridFunction(vals, 0.1, policy="periodic")
    out = half_t_derivative_fourier(f)
    assert np.max(np.abs(out.values)) <= 1e-12


def test_fourier_tone_amplitude():
    f, t, T = _tone_grid(freqs=(9,))
    out = half_t_derivative_fourier(f)
    expect = math.sqrt(9.0) * np.cos(9 * t)
    assert np.max(np.abs(out.values - expect)) <= 1e-6


def test_fourier_linearity():
    f1, t, _ = _tone_grid(freqs=(4,))
    f2, _, _ = _tone_grid(freqs=(16,))
    combo = GridFunction(2.0 * f1.values - 3.0 * f2.values, f1.h_x, policy="periodic")
    lhs = half_t_derivative_fourier(combo).values
    rhs = 2.0 * half_t_derivative_fourier(f1).values - 3.0 * half_t_derivative_fourier(f2).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_kernel_zero_on_time_independent():
    vals = np.tile(np.linspace(0, 1, 16)[:, None], (1, 512))
    f = GridFunction(vals, 0.1, policy="periodic")
    out = half_t_derivative_kernel(f, cutoff=512 * 0.01 / 4)
    assert np.max(np.abs(out.values)) <= 1e-13


def test_kernel_matches_fourier():
    rng = np.random.default_rng(0)
    f, t, T = _tone_grid(
        nt=4096, freqs=(4, 8, 16, 32), coeffs=list(rng.normal(size=4))
    )
    four = half_t_derivative_fourier(f)
    kern = half_t_derivative_kernel(f, cutoff=T / 2)
    gap = np.linalg.norm(kern.values - four.values) / np.linalg.norm(four.values)
    assert gap <= 1e-3


def test_kernel_cutoff_tail():
    f, t, T = _tone_grid(nt=4096, freqs=(8, 16))
    full = half_t_derivative_kernel(f, cutoff=T / 2)
    for frac in (8, 4):
        part = half_t_derivative_kernel(f, cutoff=T / frac)
        tail = np.max(np.abs(part.values - full.values))
        bound = 8.0 * np.max(np.abs(f.values)) / math.sqrt(T / frac)
        assert tail <= bound


def test_kernel_cutoff_precondition():
    f, _, _ = _tone_grid(nt=256)
    with pytest.raises(ResolutionError):
        half_t_derivative_kernel(f, cutoff=f.h_t)


def test_gridfunction_policy_validation():
    with pytest.raises(InputError):
        GridFunction(np.zeros(8), 0.1, policy="reflect")


def test_bmo_constant_zero():
    f = GridFunction(np.full((16, 256), 3.7), 0.1)
    assert parabolic_bmo(f) <= 1e-12


def test_bmo_halfspace_indicator():
    nx, nt = 128, 256
    h_x = 1.0 / nx
    vals = np.tile((np.arange(nx) >= nx // 2)[:, None].astype(float), (1, nt))
    f = GridFunction(vals, h_x)
    val = parabolic_bmo(f)
    assert 0.4 <= val <= 0.5


def test_bmo_monotone_in_scale_restriction():
    rng = np.random.default_rng(1)
    f = GridFunction(rng.normal(size=(64, 512)), 0.05)
    full = parabolic_bmo(f, min_halfwidth_cells=8)
    coarse = parabolic_bmo(f, min_halfwidth_cells=16)
    assert coarse <= full + 1e-12


def test_hat_gamma_affine_invariance():
    nx, nt = 64, 512
    h_x = 0.02
    y = (np.arange(nx) - nx / 2) * h_x
    t = (np.arange(nt) - nt / 2) * h_x * h_x
    rng = np.random.default_rng(2)
    base = rng.normal(size=(nx, nt)) * 0.01
    f1 = GridFunction(base, h_x, origin=(float(y[0]), float(t[0])))
    affine = 0.7 + 1.3 * y[:, None] + 0.0 * t[None, :]
    f2 = GridFunction(base + affine, h_x, origin=(float(y[0]), float(t[0])))
    r = 0.2
    g1 = hat_gamma(f1, [0.0], 0.0, r)
    g2 = hat_gamma(f2, [0.0], 0.0, r)
    assert abs(g1 - g2) <= 1e-10


def test_hat_gamma_linear_time_closed_form():
    nt = 4096
    h_x = 0.01
    t = (np.arange(nt) - nt / 2) * h_x * h_x
    a = 0.9
    f = GridFunction(a * t, h_x, origin=(float(t[0]),))
    r = 0.15
    got = hat_gamma(f, (), 0.0, r)
    assert got == pytest.approx(a * r / math.sqrt(3.0), rel=0.01)


def test_hat_gamma_matches_surface_gamma():
    from paracorona.planes import gamma as surface_gamma
    from paracorona.surfaces import SurfaceSpec, synthesize

    amp, om_x, om_t = 0.05, 2 * math.pi, 2 * math.pi
    spec = SurfaceSpec("regular_graph", n=2, extent=1.0, h=1.0 / 100,
                       t_extent=0.25, params={"amp": amp, "om_x": om_x, "om_t": om_t})
    surface, _ = synthesize(spec)
    # the same graph as a grid function over the reference plane
    nt = 1024
    t = (np.arange(nt) + 0.5) / nt - 0.5
    h_t = float(t[1] - t[0])
    h_x = math.sqrt(h_t)
    nx = int(round(1.0 / h_x))
    y = (np.arange(nx) + 0.5) * h_x - 0.5
    vals = amp * np.sin(om_x * y)[:, None] * np.sin(om_t * t)[None, :]
    psi = GridFunction(vals, h_x, origin=(float(y[0]), float(t[0])))
    r = 0.21
    g_hat = hat_gamma(psi, [0.1], 0.05, r)
    lift = np.asarray([0.1, amp * math.sin(om_x * 0.1) * math.sin(om_t * 0.05)])
    i = surface.index.nearest(lift, 0.05)[0]
    g_surf = surface_gamma(surface, surface.x[i], float(surface.t[i]), r)
    assert g_hat <= 4.0 * g_surf
    assert g_surf <= 4.0 * g_hat


def test_hat_nu_affine_zero():
    nt = 2048
    h_x = 0.02
    t = (np.arange(nt) - nt / 2) * h_x * h_x
    f = GridFunction(np.full(nt, 1.23), h_x, origin=(float(t[0]),))
    assert hat_nu(f, (), 0.0, 0.1) <= 1e-20


def test_hat_nu_subadditive_cover():
    nt = 8192
    h_x = 0.02
    t = (np.arange(nt) - nt / 2) * h_x * h_x
    vals = 0.05 * np.cos(40 * t) + 0.02 * np.cos(400 * t)
    f = GridFunction(vals, h_x, origin=(float(t[0]),))
    rho = 0.4
    big = hat_nu(f, (), 0.0, rho)
    # four half-scale windows tile the time extent of the big one
    fine = sum(
        hat_nu(f, (), tc, rho / math.sqrt(2.0))
        for tc in (-0.75 * rho * rho, -0.25 * rho * rho, 0.25 * rho * rho, 0.75 * rho * rho)
    )
    assert big <= 2.0 * fine + 1e-12


def test_calderon_moments_and_reconstruction():
    nt = 65536
    h_x = 0.05
    h_t = h_x * h_x
    t = (np.arange(nt) - nt / 2) * h_t
    lam_max = math.sqrt(nt * h_t / 8.0)
    env = np.exp(-((t) / (nt * h_t / 6.0)) ** 2)
    rng = np.random.default_rng(4)
    vals = np.zeros(nt)
    for j in (3, 4, 5):
        mu = lam_max ** 2 * 2.0 ** (-j)
        vals += rng.normal() * np.cos(2 * math.pi / mu * t + rng.uniform(0, 6))
    f = GridFunction(vals * env, h_x, policy="zero")
    bank = make_bank(f, 8)
    res = moment_residuals(bank, f, lam_max / 4.0)
    assert res["mass"] <= 1e-12
    assert res["k_mass"] <= 1e-12
    r8 = calderon_identity_check(bank, f)
    r5 = calderon_identity_check(make_bank(f, 5), f)
    assert r8 <= r5 + 1e-3
    zero = GridFunction(np.zeros(nt), h_x, policy="zero")
    assert calderon_identity_check(bank, zero) == 0.0


def test_certify_regular_time_independent():
    vals = np.tile(np.linspace(0, 0.3, 32)[:, None], (1, 512))
    f = GridFunction(vals, 0.05, policy="periodic")
    rep = certify_regular(f, delta=0.05, nu_norm=0.0)
    assert rep.bmo_norm <= 1e-6


def test_parabolic_scaling_covariance():
    # f_rho(x, t) = f(rho x, rho^2 t): same sample array at pitch h/rho
    rng = np.random.default_rng(5)
    nt = 2048
    h = 0.05
    vals = rng.normal(size=nt)
    vals = np.convolve(vals, np.ones(31) / 31, mode="same")
    f = GridFunction(vals, h, policy="periodic")
    f2 = GridFunction(vals, h / 2.0, policy="periodic")
    d1 = half_t_derivative_fourier(f).values
    d2 = half_t_derivative_fourier(f2).values
    assert np.max(np.abs(d2 - 2.0 * d1)) <= 1e-6 * max(1.0, np.max(np.abs(d1)))
    # the window battery is identical in index space, so the BMO norms
    # scale exactly with the multiplier
    b1 = parabolic_bmo(half_t_derivative_fourier(f))
    b2 = parabolic_bmo(half_t_derivative_fourier(f2))
    assert b2 == pytest.approx(2.0 * b1, rel=1e-3)
