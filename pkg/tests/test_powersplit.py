import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfasim.params import DEFAULT_MATERIALS
from rfasim.powersplit import (DEFAULT_CATHETER, CatheterSpec, PowerSplitError, blood_contact_area,
                               insertion_depth, monte_carlo_area, power_fraction, split_for_force,
                               tissue_contact_area)

SPEC = DEFAULT_CATHETER
R, R_h = SPEC.R, SPEC.R_h

# tissue power fraction, percent, for 10/20/40 gf
TABLE5_ALPHA = {"elastic": (8.46, 13.29, 19.91), "sharp": (18.87, 30.73, 54.57)}


@pytest.mark.parametrize("mode", ["elastic", "sharp"])
def test_alpha_matches_table(mode):
    for F, ref in zip((10, 20, 40), TABLE5_ALPHA[mode]):
        s = split_for_force(F, mode, 20.0)
        assert 100 * s.alpha == pytest.approx(ref, abs=0.05)
        assert s.P_tissue == pytest.approx(20.0 * s.alpha)


def test_wetted_area():
    exp = 2 * math.pi * R ** 2 + 2 * math.pi * R * (SPEC.h_e - R) - 6 * math.pi * R_h ** 2
    assert SPEC.wetted_area == pytest.approx(exp)
    assert tissue_contact_area(SPEC.h_e) + blood_contact_area(tissue_contact_area(SPEC.h_e)) == \
        pytest.approx(SPEC.wetted_area)


@pytest.mark.parametrize("h", [0.5 * R, R, R + 2 * R_h, 3.0e-3])
def test_area_against_monte_carlo_at_joints(h):
    # the piecewise closed form is exact at the branch joints and beyond
    mc = monte_carlo_area(h, n_samples=2 * 10 ** 6, seed=1)
    total = 2 * math.pi * R ** 2 + 2 * math.pi * R * (SPEC.h_e - R)
    sd = total * math.sqrt(0.25 / 2e6)
    assert abs(tissue_contact_area(h) - mc) < 4 * sd


def test_area_continuous_across_branches():
    for j in (R, R + R_h, R + 2 * R_h):
        lo, hi = tissue_contact_area(j * (1 - 1e-12)), tissue_contact_area(j * (1 + 1e-12))
        # acos has a square-root slope at the joints: a 1e-12 step moves the area ~1e-7
        assert lo == pytest.approx(hi, rel=1e-6)


def test_power_fraction_basic():
    s = power_fraction(1.0, 1.0, 1.0, 1.0, 10.0)
    assert s.alpha == 0.5 and s.P_tissue == 5.0
    with pytest.raises(PowerSplitError):
        power_fraction(0.0, 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        power_fraction(-1.0, 1.0, 1.0, 1.0, 1.0)


def test_sharp_exceeds_elastic_depth():
    for F in (10, 20, 40):
        _, he = insertion_depth(F, "elastic")
        _, hs = insertion_depth(F, "sharp")
        assert hs > he


def test_bad_mode_and_catheter():
    with pytest.raises(ValueError):
        insertion_depth(10, "blunt")
    with pytest.raises(ValueError):
        CatheterSpec(R_h=2e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.0, max_value=3.5e-3), st.floats(min_value=0.0, max_value=3.5e-3))
def test_area_monotone(h1, h2):
    lo, hi = sorted((h1, h2))
    assert tissue_contact_area(lo) <= tissue_contact_area(hi) + 1e-18


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1.0, max_value=60.0), st.sampled_from(["elastic", "sharp"]))
def test_alpha_in_unit_interval(F, mode):
    s = split_for_force(F, mode, 20.0)
    assert 0.0 < s.alpha < 1.0
    assert np.isclose(s.A_tissue + s.A_blood, SPEC.wetted_area)
    assert DEFAULT_MATERIALS.tissue.sigma0 < DEFAULT_MATERIALS.blood.sigma0
