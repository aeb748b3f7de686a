import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gutzkz.dynamics import (
    EvolutionOptions,
    ObservableSeries,
    RampSchedule,
    Segment,
    derivative,
    evolve,
)
from gutzkz.gutzwiller import Graph, GutzwillerState, compute_order_parameter, ground_state, total_energy
from gutzkz.model import Calibration, HubbardParams, LatticeGeometry, PhysicalConstants, ms_to_natural

FLAT = PhysicalConstants(trap_frequency=0.0)


def constant_calibration(J, U, constants=FLAT):
    """J and U independent of depth, so a schedule only sets the duration."""
    return Calibration(constants, "table", np.array([[1.0, J, U], [60.0, J, U]]))


def hold(T, V=10.0):
    return RampSchedule((Segment(T, V, V),))


def random_state(geom, rng, n_max=7, occupied=4):
    f = np.zeros((geom.n_sites, n_max + 1), complex)
    f[:, :occupied] = rng.normal(size=(geom.n_sites, occupied)) + 1j * rng.normal(size=(geom.n_sites, occupied))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    return GutzwillerState(f, geom)


def test_decoupled_sites_rotate_exactly():
    rng = np.random.default_rng(0)
    geom = Graph(3, [])
    st = random_state(geom, rng)
    U, mu, T = 0.3, 0.1, 0.7
    out = evolve(st, hold(T), constant_calibration(0.0, U), mu, EvolutionOptions(dt=1e-3, renormalize=False))
    n = np.arange(8)
    t = ms_to_natural(T)
    exact = st.amplitudes * np.exp(-1j * (0.5 * U * n * (n - 1) - mu * n) * t)
    np.testing.assert_allclose(out.meta["final_state"].amplitudes, exact, atol=1e-10)


def test_derivative_is_norm_preserving():
    rng = np.random.default_rng(1)
    geom = LatticeGeometry(3)
    st = random_state(geom, rng)
    d = derivative(st, HubbardParams(0.05, 0.3, 0.2, 0.01))
    assert np.max(np.abs(np.real(np.sum(np.conj(st.amplitudes) * d, axis=1)))) < 1e-13


def _two_site_rhs(J, U, mu, n_max=7):
    """Mean-field equations written with dense single-site matrices."""
    n = np.arange(n_max + 1)
    a = np.diag(np.sqrt(n[1:]), 1)
    h0 = np.diag(0.5 * U * n * (n - 1) - mu * n)

    def rhs(_, y):
        f = y.reshape(2, -1)
        psi = np.array([np.conj(fi) @ a @ fi for fi in f])
        out = np.empty_like(f)
        for i in range(2):
            phi = psi[1 - i]
            h = h0 - J * (np.conj(phi) * a + phi * a.conj().T)
            out[i] = -1j * h @ f[i]
        return out.ravel()

    return rhs


def test_two_site_matches_independent_integrator():
    rng = np.random.default_rng(2)
    geom = Graph(2, [(0, 1)])
    st = random_state(geom, rng)
    J, U, mu, T = 0.2, 0.5, 0.3, 1.0
    out = evolve(st, hold(T), constant_calibration(J, U), mu, EvolutionOptions(dt=2e-4, renormalize=False))
    ref = solve_ivp(
        _two_site_rhs(J, U, mu), (0, ms_to_natural(T)), st.amplitudes.ravel(),
        method="DOP853", rtol=1e-12, atol=1e-12,
    )
    np.testing.assert_allclose(out.meta["final_state"].amplitudes.ravel(), ref.y[:, -1], atol=1e-6)


def test_rk4_fourth_order():
    rng = np.random.default_rng(3)
    geom = LatticeGeometry(3, periodic=True)
    st = random_state(geom, rng)
    cal = constant_calibration(0.05, 0.3)

    def final(dt):
        o = EvolutionOptions(dt=dt, sample_interval=0.2, renormalize=False)
        return evolve(st, hold(0.2), cal, 0.2, o).meta["final_state"].amplitudes

    ref = final(0.2 / 256)
    e1 = np.max(np.abs(final(0.2 / 16) - ref))
    e2 = np.max(np.abs(final(0.2 / 32) - ref))
    assert 14 < e1 / e2 < 18


@pytest.fixture(scope="module")
def trapped_ground():
    geom = LatticeGeometry(7)
    cal = Calibration()
    mu = 0.2
    st = ground_state(cal.params(8.0, mu), geom)
    return geom, cal, mu, st


def test_ramp_conserves_norm_and_atom_number(trapped_ground):
    geom, cal, mu, st = trapped_ground
    sched = RampSchedule(((0.5, 8.0, 8.0), (2.0, 8.0, 20.0)))
    out = evolve(st, sched, cal, mu, EvolutionOptions(dt=5e-4, renormalize=False))
    assert out.max_norm_drift < 1e-9
    assert np.ptp(out.total_N) / out.total_N[0] < 1e-8
    assert out.meta["final_state"].is_normalized(1e-9)


def test_hold_keeps_ground_state_stationary(trapped_ground):
    geom, cal, mu, st = trapped_ground
    out = evolve(st, hold(1.0, 8.0), cal, mu, EvolutionOptions(dt=1e-3, gamma_normalization="local"))
    assert np.ptp(out.gamma_MI) < 1e-4
    d0 = compute_order_parameter(st).density
    d1 = compute_order_parameter(out.meta["final_state"]).density
    assert np.max(np.abs(d1 - d0)) < 1e-6


def test_energy_conserved_during_hold(trapped_ground):
    geom, cal, mu, _ = trapped_ground
    st = random_state(geom, np.random.default_rng(4), occupied=3)
    out = evolve(st, hold(1.0, 12.0), cal, mu, EvolutionOptions(dt=2.5e-4, renormalize=False))
    assert np.ptp(out.energy) / abs(out.energy[0]) < 1e-7


def test_time_reversal(trapped_ground):
    geom, cal, mu, _ = trapped_ground
    st = random_state(geom, np.random.default_rng(5), occupied=3)
    opt = EvolutionOptions(dt=5e-4, renormalize=False)
    fwd = evolve(st, hold(0.5, 12.0), cal, mu, opt).meta["final_state"]
    back = evolve(GutzwillerState(np.conj(fwd.amplitudes), geom), hold(0.5, 12.0), cal, mu, opt)
    np.testing.assert_allclose(np.conj(back.meta["final_state"].amplitudes), st.amplitudes, atol=1e-8)


def test_deterministic(trapped_ground):
    geom, cal, mu, st = trapped_ground
    sched = RampSchedule.phase_transition(4.0, 14.0, 8.0, hold=0.1)
    a = evolve(st, sched, cal, mu, EvolutionOptions(dt=1e-3))
    b = evolve(st, sched, cal, mu, EvolutionOptions(dt=1e-3))
    assert np.array_equal(a.gamma_MI, b.gamma_MI)
    assert np.array_equal(a.meta["final_state"].amplitudes, b.meta["final_state"].amplitudes)


def test_input_state_untouched(trapped_ground):
    geom, cal, mu, st = trapped_ground
    before = st.amplitudes.copy()
    evolve(st, hold(0.1, 10.0), cal, mu, EvolutionOptions(dt=1e-3))
    assert np.array_equal(st.amplitudes, before)


def test_samples_follow_schedule(trapped_ground):
    geom, cal, mu, st = trapped_ground
    sched = RampSchedule.phase_transition(10.0, 15.0, 8.0, hold=0.2)
    out = evolve(st, sched, cal, mu, EvolutionOptions(dt=1e-3, sample_interval=0.05))
    np.testing.assert_allclose(out.times, np.arange(len(out)) * 0.05, atol=1e-12)
    np.testing.assert_allclose(out.V, sched.depth(out.times), atol=1e-12)
    assert out.times[-1] == pytest.approx(0.9)


def test_norm_drift_guard(trapped_ground):
    geom, cal, mu, _ = trapped_ground
    st = random_state(geom, np.random.default_rng(6))
    from gutzkz.dynamics import IntegrationError

    with pytest.raises(IntegrationError, match="reduce dt"):
        evolve(st, hold(0.5, 6.0), cal, mu, EvolutionOptions(dt=0.05, sample_interval=0.05, renormalize=False))


def test_unnormalized_input_rejected(trapped_ground):
    geom, cal, mu, st = trapped_ground
    bad = GutzwillerState(2 * st.amplitudes, geom)
    with pytest.raises(ValueError):
        evolve(bad, hold(0.1), cal, mu)


def test_series_csv_round_trip(tmp_path):
    t = np.linspace(0, 1, 11)
    s = ObservableSeries(t, 5 + t, np.sqrt(t) / 3, 1 - np.sqrt(t) / 3, np.full(11, 2400.0), -np.pi * t)
    path = s.to_csv(tmp_path / "s.csv")
    back = ObservableSeries.from_csv(path)
    for name in ("times", "V", "gamma_MI", "condensate_fraction", "total_N", "energy"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    (tmp_path / "bad.csv").write_text("t,V\n0,1\n")
    with pytest.raises(ValueError, match="header"):
        ObservableSeries.from_csv(tmp_path / "bad.csv")


def test_schedule_validation():
    with pytest.raises(ValueError):
        RampSchedule(())
    with pytest.raises(ValueError, match="continuous"):
        RampSchedule(((1.0, 5.0, 10.0), (1.0, 11.0, 12.0)))
    with pytest.raises(ValueError):
        RampSchedule(((-1.0, 5.0, 5.0),))
    with pytest.raises(ValueError):
        RampSchedule(((0.0, 5.0, 5.0),))
    with pytest.raises(ValueError):
        RampSchedule.phase_transition(0.0, 10.0)
    with pytest.raises(ValueError):
        RampSchedule.phase_transition(1.0, 3.0)
    with pytest.raises(ValueError):
        RampSchedule.oscillation(1.0, -1.0)
    with pytest.raises(ValueError):
        EvolutionOptions(dt=0.0)


def test_schedule_depth_and_zero_length_segment():
    s = RampSchedule.phase_transition(2.0, 25.0, hold=20.0)
    assert s.duration == pytest.approx(30.0)
    assert s.depth(0.0) == 5.0 and s.depth(20.0) == 5.0
    assert s.depth(25.0) == pytest.approx(15.0)
    assert s.depth(100.0) == 25.0
    z = RampSchedule.oscillation(2.0, 0.0, prehold=0.0)
    assert z.duration == pytest.approx(10.0)
    assert z.depth(10.0) == 25.0
    assert [seg.shape for seg in z.segments] == ["hold", "linear", "hold"]


def _small_config(L=5, N=60.0, prehold=0.5, dt=1e-3, sample=0.05):
    from gutzkz.dynamics import SimulationConfig

    cal = Calibration(PhysicalConstants(trap_frequency=2 * np.pi * 20 * 75 / L))
    return SimulationConfig(side_length=L, N_target=N, calibration=cal, prehold=prehold,
                            evolution=EvolutionOptions(dt=dt, sample_interval=sample))


def test_zero_length_ramp_is_flat_hold():
    from gutzkz.dynamics import paper_protocol_phase_transition

    s = paper_protocol_phase_transition(3.0, 5.0, _small_config(prehold=2.0))
    assert s.times[-1] == pytest.approx(2.0)
    assert np.all(s.V == 5.0)
    assert np.ptp(s.gamma_MI) < 1e-4


def test_ground_state_stationary_for_20_ms():
    geom = LatticeGeometry(5)
    cal = Calibration()
    st = ground_state(cal.params(10.0, 0.2), geom)
    out = evolve(st, hold(20.0, 10.0), cal, 0.2, EvolutionOptions(dt=2e-3, sample_interval=0.5))
    assert np.ptp(out.gamma_MI) < 1e-4


def test_fast_ramp_oscillates_at_U():
    from gutzkz.dynamics import paper_protocol_oscillation
    from gutzkz.scaling import oscillation_amplitude

    cfg = _small_config(L=11, N=2400 * (11 / 21) ** 3, prehold=0.0, dt=2e-3)
    s = paper_protocol_oscillation(14.0, 1.5, cfg)
    assert np.all(np.diff(s.times) <= 0.02 + 1e-12)
    B_U = cfg.calibration.interaction(25.0) * cfg.calibration.constants.natural_time_per_ms
    fit = oscillation_amplitude(s.times, s.gamma_MI, B_U, 1.2, s.meta["hold_start_ms"])
    assert fit.A > 0.01
    assert abs(fit.B / B_U - 1) < 0.15
