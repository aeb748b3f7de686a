import numpy as np
import pytest
from hypothesis import given, strategies as st

from gutzkz.model import (
    DEFAULT_CONSTANTS,
    Calibration,
    HubbardParams,
    LatticeGeometry,
    PhysicalConstants,
    interaction_from_depth,
    ms_to_natural,
    natural_to_ms,
    read_calibration_table,
    trap_curvature,
    tunneling_from_depth,
)


def test_recoil_self_check_and_positivity():
    c = PhysicalConstants()
    assert abs(c.computed_recoil_energy / c.recoil_energy - 1) < 0.02
    assert c.lattice_spacing == pytest.approx(532e-9)
    with pytest.raises(ValueError):
        PhysicalConstants(atom_mass=-1.0)
    with pytest.raises(ValueError):
        PhysicalConstants(recoil_frequency=500.0)


def test_time_conversion():
    assert ms_to_natural(1.0) == pytest.approx(4 * np.pi, rel=1e-15)
    assert ms_to_natural(0.0) == 0.0
    t = np.linspace(0, 50, 101)
    np.testing.assert_allclose(natural_to_ms(ms_to_natural(t)), t, rtol=1e-15, atol=0)


def test_trap_curvature_values():
    assert trap_curvature(DEFAULT_CONSTANTS) == pytest.approx(2.4e-4, rel=0.02)
    assert trap_curvature(PhysicalConstants(trap_frequency=0.0)) == 0.0
    w = DEFAULT_CONSTANTS.trap_frequency
    ratio = trap_curvature(PhysicalConstants(trap_frequency=2 * w)) / trap_curvature(DEFAULT_CONSTANTS)
    assert ratio == pytest.approx(4.0, rel=1e-12)


def test_geometry_bijection_and_center():
    g = LatticeGeometry(5)
    assert g.n_sites == 125
    idx = np.arange(g.n_sites)
    xyz = g.coordinates(idx)
    assert len(set(zip(*xyz))) == g.n_sites
    np.testing.assert_array_equal(g.index(*xyz), idx)
    assert g.radius_squared[g.index(*g.center)] == 0
    assert g.radius_squared[g.index(0, 0, 0)] == 12
    with pytest.raises(ValueError):
        LatticeGeometry(4)


def test_neighbor_sum_counts():
    g = LatticeGeometry(3)
    ones = np.ones(g.n_sites)
    s = g.neighbor_sum(ones)
    assert s[g.index(1, 1, 1)] == 6
    assert s[g.index(0, 0, 0)] == 3
    gp = LatticeGeometry(3, periodic=True)
    assert np.all(gp.neighbor_sum(ones) == 6)


def test_hubbard_params_validation():
    with pytest.raises(ValueError):
        HubbardParams(J=-0.1, U=1.0)
    with pytest.raises(ValueError):
        HubbardParams(J=0.1, U=0.0)
    p = HubbardParams(0.1, 1.0).with_mu(0.3)
    assert p.mu == 0.3


def test_depth_domain_errors():
    for f in (tunneling_from_depth, interaction_from_depth):
        with pytest.raises(ValueError):
            f(0.0)
        with pytest.raises(ValueError):
            f(-3.0)


def test_monotonicity_on_grid():
    V = np.linspace(2, 40, 77)
    J = tunneling_from_depth(V)
    U = interaction_from_depth(V)
    assert np.all(np.diff(J) < 0)
    assert np.all(np.diff(U) > 0)
    assert np.all(np.diff(U / J) > 0)
    Jb = tunneling_from_depth(V, "bandstructure")
    assert np.all(np.diff(Jb) < 0)
    assert tunneling_from_depth(5) > tunneling_from_depth(35)


def test_interaction_power_law():
    assert interaction_from_depth(35) / interaction_from_depth(5) == pytest.approx(7**0.75, rel=1e-12)


def test_bandstructure_converged_in_planewaves():
    a = tunneling_from_depth(13.0, "bandstructure", n_planewaves=21)
    b = tunneling_from_depth(13.0, "bandstructure", n_planewaves=61)
    assert a == pytest.approx(b, rel=1e-9)


@pytest.mark.xfail(strict=True, reason="closed-form J is 15% above the exact band width at V=13")
def test_backends_agree_at_13():
    Ja = tunneling_from_depth(13.0)
    Jb = tunneling_from_depth(13.0, "bandstructure")
    assert abs(Ja - Jb) / Jb < 0.10


@pytest.mark.xfail(strict=True, reason="closed-form J overestimates the exact band width by 22% at V=8")
def test_backends_agree_above_8():
    V = np.linspace(8, 40, 33)
    Ja = tunneling_from_depth(V)
    Jb = tunneling_from_depth(V, "bandstructure")
    assert np.all(np.abs(Ja - Jb) / Jb < 0.10)


def test_lobe_tip_ratio_logged():
    J, U = tunneling_from_depth(13.0), interaction_from_depth(13.0)
    x = 6 * J / U
    print(f"6 J/U at 13 E_r = {x:.4f} (mean-field n=1 tip at {3 - 2 * np.sqrt(2):.4f})")
    assert 0 < x < 1


def test_calibration_table(tmp_path):
    path = tmp_path / "cal.csv"
    path.write_text("V_Er,J_Er,U_Er\n5,0.06,0.2\n10,0.02,0.3\n20,0.004,0.5\n")
    tab = read_calibration_table(path)
    assert tab.shape == (3, 3)
    cal = Calibration.from_table(path)
    assert cal.tunneling(7.5) == pytest.approx(0.04)
    assert cal.interaction(15.0) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        cal.tunneling(25.0)
    bad = tmp_path / "bad.csv"
    bad.write_text("V,J,U\n5,0.1,0.2\n")
    with pytest.raises(ValueError):
        read_calibration_table(bad)


def test_calibration_params():
    cal = Calibration()
    p = cal.params(13.0, mu=0.2)
    assert p.J == pytest.approx(tunneling_from_depth(13.0))
    assert p.U == pytest.approx(interaction_from_depth(13.0))
    assert p.trap_curvature == pytest.approx(trap_curvature(DEFAULT_CONSTANTS))


@given(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
def test_time_roundtrip_property(t):
    assert natural_to_ms(ms_to_natural(t)) == pytest.approx(t, rel=1e-15, abs=1e-300)
