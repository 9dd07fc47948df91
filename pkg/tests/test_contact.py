import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from rfasim.contact import (ContactError, contact_depth, displacement, force_from_radius, max_depth,
                            solve_contact, surface_profile)
from rfasim.params import DEFAULT_MATERIALS, grams_force_to_newtons
from rfasim.powersplit import DEFAULT_CATHETER

R = DEFAULT_CATHETER.R
E = DEFAULT_MATERIALS.tissue.young
NU = DEFAULT_MATERIALS.tissue.poisson
G = E / (2 * (1 + NU))


def _sol(gf):
    return solve_contact(grams_force_to_newtons(gf), R, E, NU)


def test_force_from_sneddon_pressure_integral():
    # independent route: punch force as the integral of the auxiliary function
    for gf in (1, 10, 40):
        s = _sol(gf)
        I = mp.quad(lambda t: float(s.chi(float(t))), [0, 1])
        F = 2 * math.pi * G * s.a / (1 - NU) * float(I)
        assert F == pytest.approx(s.F, rel=1e-10)


def test_force_law_series_branch_matches_mpmath():
    for x in (1e-4, 0.05, 0.0999, 0.1, 0.5, 0.99):
        exact = (1 + mp.mpf(x) ** 2) * 2 * mp.atanh(x) - 2 * mp.mpf(x)
        F = force_from_radius(x * R, R, G, NU)
        assert F == pytest.approx(float(G / (1 - NU) * R * R * exact), rel=1e-13)


def test_edge_pressure_vanishes():
    s = _sol(20)
    assert abs(s.chi(1.0)) < 1e-15 * s.omega_max
    assert s.omega_max == pytest.approx(max_depth(s.a, R), rel=1e-15)


@pytest.mark.parametrize("gf,a,w", [(10, 0.85982, 0.81354), (20, 1.01009, 1.33434), (40, 1.12307, 2.24581)])
def test_golden_values(gf, a, w):
    s = _sol(gf)
    assert s.a * 1e3 == pytest.approx(a, abs=1e-5)
    assert s.omega_max * 1e3 == pytest.approx(w, abs=1e-5)


def test_outside_displacement_against_raw_kernel_quadrature():
    # scipy quad directly on the untransformed kernel (regular for rho > 1)
    s = _sol(10)
    for rho in (1.05, 1.5, 3.0, 10.0):
        raw, _ = quad(lambda t: s.chi(t) / math.sqrt(rho * rho - t * t), 0, 1, limit=200,
                      epsabs=1e-15)
        assert displacement(s, rho * s.a) == pytest.approx(raw, rel=1e-8)


def test_profile_continuity_at_contact_edge():
    s = _sol(10)
    inside = displacement(s, s.a)
    outside = displacement(s, s.a * (1 + 1e-12))
    assert abs(inside - outside) < 1e-8 * s.omega_max


def test_hertz_limit():
    a = 0.05 * R
    F = force_from_radius(a, R, G, NU)
    s = solve_contact(F, R, E, NU)
    assert s.omega_max == pytest.approx(a * a / R, rel=0.01)
    # Hertz force-indentation law
    E_star = E / (1 - NU ** 2)
    assert F == pytest.approx(4 / 3 * E_star * math.sqrt(R) * s.omega_max ** 1.5, rel=0.01)


def test_hertz_outside_profile_small_contact():
    a = 0.03 * R
    s = solve_contact(force_from_radius(a, R, G, NU), R, E, NU)
    for rho in (1.2, 2.0, 5.0):
        hertz = a * a / (math.pi * R) * ((2 - rho ** 2) * math.asin(1 / rho) + math.sqrt(rho ** 2 - 1))
        assert displacement(s, rho * a) == pytest.approx(hertz, rel=0.01)


def test_contact_depth_and_zero_force():
    s = _sol(10)
    assert contact_depth(s) == pytest.approx(R - math.sqrt(R * R - s.a ** 2))
    z = solve_contact(0.0, R, E, NU)
    assert z.a == 0 and z.omega_max == 0
    assert np.all(surface_profile(z, np.linspace(0, 1e-2, 5)) == 0)


def test_rejects_out_of_range_force():
    with pytest.raises(ContactError):
        solve_contact(1e3, R, E, NU)
    with pytest.raises(ValueError):
        solve_contact(-1.0, R, E, NU)


def test_surface_profile_cutoff_and_monotone():
    s = _sol(20)
    r = np.linspace(0, 25 * s.a, 200)
    w = surface_profile(s, r, cutoff=20)
    assert np.all(w[r > 20 * s.a] == 0)
    assert np.all(np.diff(w[r <= 20 * s.a]) <= 1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=1e-4, max_value=0.99))
def test_solve_inverts_force_law(x):
    a = x * R
    F = force_from_radius(a, R, G, NU)
    s = solve_contact(F, R, E, NU)
    assert force_from_radius(s.a, R, G, NU) == pytest.approx(F, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.5, max_value=60), st.floats(min_value=0.5, max_value=60))
def test_monotone_in_force(f1, f2):
    s1, s2 = _sol(min(f1, f2)), _sol(max(f1, f2))
    assert s1.a <= s2.a and s1.omega_max <= s2.omega_max
