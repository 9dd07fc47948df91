import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from rfasim.contact import solve_contact
from rfasim.mesh import (FACET_TAGS, GeometryConfig, Mesh, MeshError, box_mesh, build_mesh, validate_mesh,
                         with_interface_tags)
from rfasim.params import Region, grams_force_to_newtons
from rfasim.powersplit import DEFAULT_CATHETER, tissue_contact_area

L, T_BOARD, T_TISSUE = 0.08, 0.02, 0.02
R, R_h = DEFAULT_CATHETER.R, DEFAULT_CATHETER.R_h


def _contact(F):
    return solve_contact(grams_force_to_newtons(F), R, 75e3, 0.499)


def test_valid_and_volumes(coarse_elastic10):
    m = coarse_elastic10
    d = validate_mesh(m)
    assert d.ok, d.problems
    void = math.pi * R ** 2 * (L - m.meta["z_top"])      # catheter lumen above the electrode
    # the lumen is an inscribed polygon, so the meshed void is slightly smaller
    assert m.volumes.sum() == pytest.approx(L ** 3 - void, rel=1e-4)
    assert m.volumes.sum() >= L ** 3 - void
    assert m.region_volume(Region.BOARD) == pytest.approx(L * L * T_BOARD, rel=1e-12)
    assert set(np.unique(m.cell_region)) == {int(r) for r in Region}


def test_tissue_deficit_matches_sampled_surface(coarse_elastic10):
    # board + tissue slab minus the volume under the sampled deformed surface
    m = coarse_elastic10
    zs, (xc, yc) = m.meta["z_surface"], m.meta["axis"]
    f = np.unique(np.concatenate([m.facets_with_tag("tissue_blood_interface").ravel(),
                                  m.facets_with_tag("electrode_tissue").ravel()]))
    r = np.round(np.hypot(m.nodes[f, 0] - xc, m.nodes[f, 1] - yc), 9)
    w = zs - m.nodes[f, 2]
    ru = np.unique(r)
    wu = np.array([w[r == x].mean() for x in ru])
    sampled = trapezoid(2 * math.pi * ru * wu, ru)
    deficit = L * L * T_TISSUE - m.region_volume(Region.TISSUE)
    assert deficit == pytest.approx(sampled, rel=0.04)


def test_sharp_insertion_volume(coarse_sharp40):
    m = coarse_sharp40
    c = _contact(40)
    w = c.omega_max
    cap = 2 / 3 * math.pi * R ** 3 + math.pi * R * R * (w - R)      # hemisphere plus cylinder
    deficit = L * L * T_TISSUE - m.region_volume(Region.TISSUE)
    assert deficit == pytest.approx(cap, rel=0.12)                  # inscribed polyhedral sphere
    assert m.meta["deep"]
    assert validate_mesh(m).ok


def test_contact_areas(coarse_elastic10, coarse_sharp40):
    c = _contact(10)
    h = R - math.sqrt(R * R - c.a ** 2)
    A = coarse_elastic10.facet_areas(coarse_elastic10.facets_with_tag("electrode_tissue")).sum()
    assert A == pytest.approx(tissue_contact_area(h), rel=0.05)
    # submerged holes are tissue contact as well
    m = coarse_sharp40
    A = m.facet_areas(m.facets_with_tag("electrode_tissue")).sum() + \
        m.facet_areas(m.facets_with_tag("hole_inlets")).sum()
    assert A == pytest.approx(tissue_contact_area(_contact(40).omega_max), rel=0.06)


def test_hole_area(coarse_elastic10):
    m = coarse_elastic10
    A = m.facet_areas(m.facets_with_tag("hole_inlets")).sum()
    assert A == pytest.approx(6 * math.pi * R_h ** 2, rel=0.1)
    # hole facets sit on the electrode wall
    cen = m.nodes[m.facets_with_tag("hole_inlets")].mean(axis=1)
    rc = np.hypot(cen[:, 0] - m.meta["axis"][0], cen[:, 1] - m.meta["axis"][1])
    assert np.allclose(rc, R, rtol=0.05)


def test_tags_and_regions(coarse_elastic10):
    m = coarse_elastic10
    for name in FACET_TAGS:
        assert len(m.facets_with_tag(name)), name
    th = m.region_mask(Region.THERMISTOR)
    assert th.any()
    rc = np.hypot(m.centroids[th, 0] - m.meta["axis"][0], m.centroids[th, 1] - m.meta["axis"][1])
    assert rc.max() < 0.5 * DEFAULT_CATHETER.thermistor_diameter + 1e-9
    # nothing is meshed inside the catheter above the electrode
    c = m.centroids
    inside = np.hypot(c[:, 0] - m.meta["axis"][0], c[:, 1] - m.meta["axis"][1]) < R
    assert not np.any(inside & (c[:, 2] > m.meta["z_top"]))


def test_deterministic_and_roundtrip(tmp_path, coarse_elastic10):
    again = build_mesh(GeometryConfig(mode="elastic", force=10.0, resolution="coarse"))
    assert np.array_equal(again.nodes, coarse_elastic10.nodes)
    assert np.array_equal(again.cells, coarse_elastic10.cells)
    p = tmp_path / "m.npz"
    coarse_elastic10.save(p)
    back = Mesh.load(p)
    assert np.array_equal(back.facets, coarse_elastic10.facets)
    assert back.meta == coarse_elastic10.meta


def test_bad_configs():
    with pytest.raises(MeshError):
        GeometryConfig(mode="blunt")
    with pytest.raises(MeshError):
        GeometryConfig(resolution="huge")
    with pytest.raises(MeshError):
        GeometryConfig(board_thickness=0.05, tissue_thickness=0.04)


def test_box_mesh_interfaces():
    m = box_mesh((3, 3, 4), region=lambda c: np.where(c[:, 2] < 0.5, Region.TISSUE, Region.BLOOD))
    A = m.facet_areas(m.facets_with_tag("tissue_blood_interface")).sum()
    assert A == pytest.approx(1.0)
    assert m.volumes.sum() == pytest.approx(1.0)
    m2 = with_interface_tags(m)
    assert len(m2.facets) == len(m.facets)
    assert validate_mesh(m).ok
