import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gutzkz.dynamics import ObservableSeries
from gutzkz.scaling import (
    ExtractionError,
    excitation_fraction,
    exponent_from_nu_z,
    fit_power_law,
    nu_z_from_nex,
    nu_z_from_tau,
    oscillation_amplitude,
    smooth_trace,
    tau_mi,
    tau_sf,
    universal_rescale,
)


def ramp_trace(k, fn, T=None, n=400, method=None):
    T = T if T is not None else 30.0 / k
    t = np.linspace(0, T, n)
    return smooth_trace(t=t, gamma=fn(t), V=5 + k * t, k=k, method=method)


def test_poly6_recovers_polynomial():
    coef = [0.1, 0.3, -0.05, 0.004, -1e-4, 2e-6, -1e-8]
    poly = np.polynomial.Polynomial(coef)
    tr = ramp_trace(1.0, poly)
    assert tr.method == "poly6"
    t = np.linspace(0, 30, 97)
    np.testing.assert_allclose(tr(t), poly(t), atol=1e-8)
    np.testing.assert_allclose(tr.coefficients, coef, rtol=1e-6, atol=1e-12)


def test_spline_branch_above_threshold():
    tr = ramp_trace(6.0, np.tanh)
    assert tr.method == "spline"
    np.testing.assert_allclose(tr(tr.t), np.tanh(tr.t), atol=1e-14)
    assert ramp_trace(4.0, np.tanh).method == "poly6"


def test_ill_conditioned_poly_falls_back():
    with pytest.warns(UserWarning, match="ill-conditioned"):
        tr = smooth_trace(t=np.linspace(0, 1, 50), gamma=np.linspace(0, 1, 50), k=1.0, cond_limit=1.0)
    assert tr.method == "spline"


def test_smoothing_keeps_monotone_data_monotone():
    tr = ramp_trace(1.0, lambda t: 1 - np.exp(-t / 8))
    assert np.all(np.diff(tr(np.linspace(0, 30, 500))) > 0)


def test_too_few_samples():
    with pytest.raises(ExtractionError):
        smooth_trace(t=np.arange(5.0), gamma=np.zeros(5))


def test_series_input_uses_ramp_stage():
    t = np.arange(0, 40.0001, 0.05)
    V = np.where(t < 10, 5.0, 5 + (t - 10))
    g = np.where(t < 10, 0.0, np.minimum((t - 10) / 10, 1.0))
    s = ObservableSeries(t, V, g, 1 - g, np.ones_like(t), np.zeros_like(t), meta={"ramp_start_ms": 10.0, "k": 1.0})
    tr = smooth_trace(s, method="spline")
    assert tr.t[0] == pytest.approx(0.0) and tr.V[0] == pytest.approx(5.0)
    assert tau_sf(tr) == pytest.approx(6.0, abs=1e-6)


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0, 8.0])
def test_tau_sf_closed_form(k):
    # gamma = min(k t / 10, 1) reaches 0.6 at t = 6/k
    tr = ramp_trace(k, lambda t: np.minimum(k * t / 10, 1.0), n=2001, method="spline")
    assert tau_sf(tr) == pytest.approx(6 / k, rel=1e-4)


def test_tau_sf_threshold_edge_cases():
    tr = ramp_trace(1.0, lambda t: 0.5 + 0.01 * t)
    assert tau_sf(tr, threshold=0.0) == 0.0
    with pytest.raises(ExtractionError):
        tau_sf(tr, threshold=0.99)


def test_tau_mi_linear_delay():
    # 0.6 at t=30, 0.85/0.9/0.95 at 42.5/45/47.5
    tr = ramp_trace(0.5, lambda t: 0.02 * t, T=60, n=601, method="spline")
    assert tau_mi(tr) == pytest.approx(15.0, rel=1e-9)
    assert tau_mi(tr, end_cuts=(0.85, 0.9, 0.95), average=False) == pytest.approx([12.5, 15.0, 17.5], rel=1e-9)
    assert tau_mi(tr, end_cuts=(0.85, 0.9, 0.95)) == pytest.approx(15.0, rel=1e-9)
    # depth start: V = 5 + 0.5 t passes 13 at t = 16
    assert tau_mi(tr, start_ref="depth") == pytest.approx(45.0 - 16.0, rel=1e-9)


def test_tau_mi_missing_cut():
    tr = ramp_trace(1.0, lambda t: 0.025 * t)  # tops out at 0.75
    with pytest.raises(ExtractionError, match="0.9"):
        tau_mi(tr)
    with pytest.raises(ValueError):
        tau_mi(tr, start_ref="bogus")


def test_excitation_fraction_self_reference_is_zero():
    fn = lambda t: 1 - np.exp(-t / 5)
    traces = {k: ramp_trace(k, lambda t, k=k: fn(k * t), method="spline") for k in (0.5, 1.0, 2.0)}
    nex = excitation_fraction(traces, traces[0.5])
    # gamma depends on V only, so every trace equals the reference in V
    assert all(abs(v) < 1e-6 for v in nex.values())
    ref = lambda V: np.ones_like(V)
    nex1 = excitation_fraction(traces, ref)
    Vs = np.linspace(18, 20, 21)
    assert nex1[1.0] == pytest.approx(np.mean(np.exp(-(Vs - 5) / 5)), rel=1e-6)


def test_excitation_fraction_window_check():
    tr = ramp_trace(1.0, np.tanh, T=10)  # V up to 15
    with pytest.raises(ExtractionError):
        excitation_fraction({1.0: tr}, lambda V: V)


@pytest.mark.parametrize("C", [0.0, 1.0, 2.5, 4.0, 5.9])
def test_cosine_recovery_and_phase(C):
    t = np.arange(0, 1.5, 0.02)
    A, B, D = 0.03, 21.0, 0.7
    y = A * np.cos(B * t + C) + D
    fit = oscillation_amplitude(t, y, B0=0.9 * B)
    assert fit.A == pytest.approx(A, abs=1e-6)
    assert fit.B == pytest.approx(B, abs=1e-6)
    assert fit.D == pytest.approx(D, abs=1e-6)
    assert np.angle(np.exp(1j * (fit.C - C))) == pytest.approx(0.0, abs=1e-6)
    assert fit.A >= 0 and 0 <= fit.C < 2 * np.pi
    assert fit.residual_rms < 1e-9


def test_cosine_fit_window_and_offset():
    t = np.arange(0, 5, 0.02)
    y = np.where(t < 2, 0.0, 0.05 * np.cos(30 * (t - 2)) + 0.6)
    fit = oscillation_amplitude(t, y, B0=28.0, t0=2.0, window=1.2)
    assert fit.A == pytest.approx(0.05, abs=1e-6) and fit.B == pytest.approx(30, abs=1e-5)
    with pytest.raises(ExtractionError):
        oscillation_amplitude(t, y, B0=28.0, t0=4.95)


def test_power_law_exact_recovery():
    k = np.array([0.5, 1, 2, 4, 8])
    fit = fit_power_law(k, 3.2 * k**-0.53)
    assert fit.exponent == pytest.approx(-0.53, abs=1e-10)
    assert fit.prefactor == pytest.approx(3.2, rel=1e-10)
    assert fit.exponent_uncertainty < 1e-10
    assert fit.k_range == (0.5, 8.0) and fit.n_points == 5
    rec = fit.as_record()
    assert set(rec) >= {"exponent", "uncertainty", "prefactor", "k_range", "n_points", "outliers"}


def test_power_law_noisy_uncertainty_covers_truth():
    rng = np.random.default_rng(5)
    k = np.geomspace(0.5, 8, 8)
    hits = 0
    for _ in range(200):
        y = 2 * k**-0.9 * np.exp(0.05 * rng.standard_normal(k.size))
        f = fit_power_law(k, y)
        hits += abs(f.exponent + 0.9) < f.exponent_uncertainty
    assert 0.55 < hits / 200 < 0.85  # about 68 percent for a 1-sigma error


def test_power_law_outlier_flag():
    k = np.geomspace(0.5, 8, 7)
    rng = np.random.default_rng(0)
    y = k**-0.5 * np.exp(0.01 * rng.standard_normal(k.size))
    y[3] *= 2.0
    assert fit_power_law(k, y).outliers == [3]


def test_power_law_input_errors():
    with pytest.raises(ValueError, match="3 points"):
        fit_power_law([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 2])


@given(st.floats(0.1, 10), st.floats(0.1, 10))
@settings(max_examples=30, deadline=None)
def test_power_law_scale_equivariance(a, c):
    k = np.array([0.5, 1, 2, 4, 6])
    y = np.array([3.0, 2.1, 1.3, 0.8, 0.7])
    base = fit_power_law(k, y)
    scaled = fit_power_law(c * k, a * y)
    assert scaled.exponent == pytest.approx(base.exponent, abs=1e-9)
    assert scaled.exponent_uncertainty == pytest.approx(base.exponent_uncertainty, rel=1e-7)


def test_weighted_fit_uses_absolute_errors():
    k = np.array([1.0, 2, 4, 8])
    y = k**-1.0
    f = fit_power_law(k, y, y_err=0.1 * y)
    # all log errors equal 0.1: var(slope) = 0.01 / sum((ln k - mean)^2)
    lk = np.log(k)
    assert f.exponent_uncertainty == pytest.approx(0.1 / np.sqrt(np.sum((lk - lk.mean()) ** 2)), rel=1e-10)


def test_nu_z_from_tau():
    assert nu_z_from_tau(-0.53).nu_z == pytest.approx(0.53 / 0.47, rel=1e-12)
    assert nu_z_from_tau(-0.5).nu_z == pytest.approx(1.0)
    for nz in (0.2, 1.0, 1.13, 3.0):
        assert nu_z_from_tau(exponent_from_nu_z(nz)).nu_z == pytest.approx(nz, rel=1e-12)
    with pytest.raises(ValueError):
        nu_z_from_tau(-1.0)
    with pytest.raises(ValueError):
        nu_z_from_tau(0.2)


def test_nu_z_from_nex():
    r = nu_z_from_nex(0.97)
    assert r.nu_z == pytest.approx(1.5 / 0.97 - 1, rel=1e-12)
    assert r.interpretation["selected"] == "on_tip"
    assert nu_z_from_nex(1.0).nu_z == pytest.approx(0.5)
    assert r.interpretation["predicted_exponents"]["on_tip"] == pytest.approx(1.0)
    assert r.interpretation["predicted_exponents"]["off_tip"] == pytest.approx(0.75)
    assert nu_z_from_nex(0.76).interpretation["selected"] == "off_tip"
    with pytest.raises(ValueError):
        nu_z_from_nex(1.6)


def _family_with_b(b, V_c=13.0):
    """Traces whose gamma depends only on (V - V_c) k^-(1-b)."""
    g = lambda x: 1 / (1 + np.exp(-x / 3))
    out = {}
    for k in (0.5, 1.0, 2.0, 4.0):
        t = np.linspace(0, 30 / k, 600)
        V = 5 + k * t
        out[k] = smooth_trace(t=t, gamma=g((V - V_c) * k ** (-(1 - b))), V=V, k=k, method="spline")
    return out


def test_collapse_scores():
    fam = _family_with_b(0.53)
    res = universal_rescale(fam, b=0.53)
    assert res.score < 1e-4
    assert res.unrescaled_score > 100 * res.score
    assert universal_rescale({1.0: fam[1.0]}).score == 0.0
    identical = {k: fam[1.0] for k in (1.0, 2.0)}
    assert universal_rescale(identical, b=1.0).score == 0.0


def test_collapse_needs_overlap():
    fam = _family_with_b(0.53)
    with pytest.raises(ExtractionError):
        universal_rescale(fam, V_c=40.0)
