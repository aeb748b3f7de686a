"""Critical-dynamics observables from gamma_MI traces and their power-law scaling.

Times are in ms measured from the start of the ramp, depths in E_r, ramp
rates k in E_r/ms.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, least_squares

log = logging.getLogger(__name__)

__all__ = [
    "ExtractionError",
    "FitError",
    "SmoothedTrace",
    "ScalingFit",
    "CriticalParameters",
    "CosineFit",
    "CollapseResult",
    "smooth_trace",
    "tau_sf",
    "tau_mi",
    "excitation_fraction",
    "oscillation_amplitude",
    "fit_power_law",
    "nu_z_from_tau",
    "exponent_from_nu_z",
    "nu_z_from_nex",
    "universal_rescale",
]


class ExtractionError(ValueError):
    """A trace does not contain the crossing or window a quantity needs."""


class FitError(RuntimeError):
    pass


@dataclass
class SmoothedTrace:
    """gamma_MI(t) smoothed over a ramp; ``depth`` maps t back to V."""

    t: np.ndarray
    gamma: np.ndarray
    V: np.ndarray
    method: str
    model: object = field(repr=False)
    k: float | None = None
    rms_residual: float = 0.0

    def __call__(self, t):
        return self.model(t)

    def time_at_depth(self, V):
        return np.interp(V, self.V, self.t)

    def at_depth(self, V):
        """Smoothed gamma as a function of depth (V must increase along the trace)."""
        return self.model(self.time_at_depth(V))

    @property
    def coefficients(self):
        if self.method == "poly6":
            return self.model.convert().coef
        return self.model.c


def _ramp_part(series, ramp_start=None, ramp_end=None):
    meta = getattr(series, "meta", {}) or {}
    t = np.asarray(series.times, dtype=float)
    if ramp_start is None:
        ramp_start = meta.get("ramp_start_ms", t[0])
    if ramp_end is None:
        ramp_end = meta.get("hold_start_ms", t[-1])
    sel = (t >= ramp_start - 1e-9) & (t <= ramp_end + 1e-9)
    return t[sel] - ramp_start, np.asarray(series.gamma_MI)[sel], np.asarray(series.V)[sel]


def smooth_trace(
    series=None,
    k: float | None = None,
    *,
    t=None,
    gamma=None,
    V=None,
    poly_threshold: float = 4.0,
    method: str | None = None,
    cond_limit: float = 1e10,
):
    """Smooth a gamma_MI trace: 6th-order polynomial for k <= 4 E_r/ms, natural cubic spline above.

    Pass an :class:`ObservableSeries` (the ramp stage is selected from its
    metadata) or explicit ``t``/``gamma``/``V`` arrays.
    """
    if series is not None:
        t, gamma, V = _ramp_part(series)
        if k is None:
            k = series.meta.get("k")
    t = np.asarray(t, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    V = np.asarray(V if V is not None else t, dtype=float)
    if t.size < 10:
        raise ExtractionError("need at least 10 samples to smooth a trace")
    if method is None:
        method = "poly6" if (k is not None and k <= poly_threshold) else "spline"
    if method == "poly6":
        window = (t.min(), t.max())
        x = (2 * t - window[0] - window[1]) / (window[1] - window[0])
        cond = np.linalg.cond(np.vander(x, 7))
        if cond > cond_limit:
            warnings.warn(f"poly6 fit ill-conditioned (cond={cond:.2e}); using spline")
            method = "spline"
        else:
            model = Polynomial.fit(t, gamma, 6)
            rms = float(np.sqrt(np.mean((model(t) - gamma) ** 2)))
            return SmoothedTrace(t, gamma, V, "poly6", model, k, rms)
    if method != "spline":
        raise ValueError(f"unknown smoother {method!r}")
    model = CubicSpline(t, gamma, bc_type="natural")
    return SmoothedTrace(t, gamma, V, "spline", model, k, 0.0)


def _first_crossing(trace: SmoothedTrace, level: float, t_from=None, n_grid=4000):
    t0 = trace.t[0] if t_from is None else t_from
    grid = np.linspace(t0, trace.t[-1], n_grid)
    vals = trace(grid) - level
    if vals[0] >= 0:
        return float(grid[0])
    hit = np.nonzero(vals >= 0)[0]
    if hit.size == 0:
        raise ExtractionError(f"trace never reaches gamma_MI={level}")
    j = hit[0]
    return float(brentq(lambda x: trace(x) - level, grid[j - 1], grid[j], xtol=1e-12))


def tau_sf(trace: SmoothedTrace, threshold: float = 0.6) -> float:
    """Time from ramp start until the smoothed gamma_MI first reaches ``threshold``."""
    return _first_crossing(trace, threshold)


def tau_mi(
    trace: SmoothedTrace,
    start_ref: str = "gamma",
    end_cuts=(0.9,),
    start_gamma: float = 0.6,
    V_c: float = 13.0,
    average: bool = True,
):
    """Delay from the start reference to each end cut of gamma_MI.

    ``start_ref`` is ``"gamma"`` (first crossing of ``start_gamma``) or
    ``"depth"`` (the time the ramp passes ``V_c``). Returns the mean delay over
    the cuts, or the list of delays with ``average=False``.
    """
    if start_ref == "gamma":
        t_start = _first_crossing(trace, start_gamma)
    elif start_ref == "depth":
        if not trace.V[0] <= V_c <= trace.V[-1]:
            raise ExtractionError(f"trace does not pass V_c={V_c}")
        t_start = float(trace.time_at_depth(V_c))
    else:
        raise ValueError(f"unknown start reference {start_ref!r}")
    delays = []
    for cut in np.atleast_1d(end_cuts):
        try:
            delays.append(_first_crossing(trace, float(cut), t_from=t_start) - t_start)
        except ExtractionError as exc:
            raise ExtractionError(f"end cut gamma_MI={cut}: {exc}") from None
    return float(np.mean(delays)) if average else delays


def excitation_fraction(traces: dict, adiabatic_ref, V_window=(18.0, 20.0), n_points: int = 21):
    """n_ex(k) = mean over the depth window of gamma_ref(V) - gamma_k(V).

    ``traces`` maps k to :class:`SmoothedTrace`; ``adiabatic_ref`` is a
    callable V -> gamma (for example an interpolated ground-state sweep) or a
    SmoothedTrace of the slowest ramp.
    """
    Vs = np.linspace(V_window[0], V_window[1], n_points)
    if isinstance(adiabatic_ref, SmoothedTrace):
        if adiabatic_ref.V[0] > Vs[0] or adiabatic_ref.V[-1] < Vs[-1]:
            raise ExtractionError("reference does not cover the depth window")
        ref = adiabatic_ref.at_depth(Vs)
    else:
        ref = np.asarray(adiabatic_ref(Vs), dtype=float)
    out = {}
    for k, tr in traces.items():
        if tr.V[0] > Vs[0] + 1e-9 or tr.V[-1] < Vs[-1] - 1e-9:
            raise ExtractionError(f"trace k={k} does not cover V in {V_window}")
        out[k] = float(np.mean(ref - tr.at_depth(Vs)))
    return out


@dataclass
class CosineFit:
    A: float
    B: float
    C: float
    D: float
    errors: np.ndarray
    residual_rms: float

    @property
    def A_err(self) -> float:
        return float(self.errors[0])

    def __call__(self, t):
        return self.A * np.cos(self.B * np.asarray(t) + self.C) + self.D


def oscillation_amplitude(t, gamma, B0: float, window: float = 1.2, t0: float = 0.0) -> CosineFit:
    """Fit gamma(t) = A cos(B t + C) + D over the first ``window`` ms after ``t0``.

    ``B0`` (rad/ms) seeds the frequency, normally U/hbar at the hold depth;
    the phase is multi-started over {0, pi/2, pi, 3pi/2}. A is returned
    non-negative with C wrapped to [0, 2pi).
    """
    t = np.asarray(t, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sel = (t >= t0 - 1e-12) & (t <= t0 + window + 1e-12)
    x, y = t[sel] - t0, gamma[sel]
    if x.size < 8:
        raise ExtractionError("need at least 8 samples inside the fit window")
    D0 = y.mean()
    A0 = max(0.5 * (y.max() - y.min()), 1e-12)

    def resid(p):
        return p[0] * np.cos(p[1] * x + p[2]) + p[3] - y

    best = None
    for C0 in (0.0, np.pi / 2, np.pi, 1.5 * np.pi):
        try:
            r = least_squares(resid, [A0, B0, C0, D0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        except Exception as exc:  # noqa: BLE001 - report after all restarts
            log.debug("cosine restart failed: %s", exc)
            continue
        if best is None or r.cost < best.cost:
            best = r
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitError("cosine fit failed for every phase restart")
    A, B, C, D = best.x
    if A < 0:
        A, C = -A, C + np.pi
    C = float(np.mod(C, 2 * np.pi))
    dof = max(x.size - 4, 1)
    s2 = 2 * best.cost / dof
    try:
        cov = np.linalg.inv(best.jac.T @ best.jac) * s2
        errors = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        errors = np.full(4, np.inf)
    return CosineFit(float(A), float(B), C, float(D), errors, float(np.sqrt(2 * best.cost / x.size)))


@dataclass
class ScalingFit:
    """y = prefactor * k**exponent from a log-log regression."""

    exponent: float
    exponent_uncertainty: float
    prefactor: float
    k_range: tuple
    n_points: int
    residuals: np.ndarray = field(repr=False)
    studentized: np.ndarray = field(repr=False)
    outliers: list = field(default_factory=list)

    def __call__(self, k):
        return self.prefactor * np.asarray(k, dtype=float) ** self.exponent

    def as_record(self) -> dict:
        return {
            "exponent": self.exponent,
            "uncertainty": self.exponent_uncertainty,
            "prefactor": self.prefactor,
            "k_range": list(self.k_range),
            "n_points": self.n_points,
            "outliers": list(self.outliers),
        }


def fit_power_law(k, y, y_err=None, outlier_threshold: float = 3.0) -> ScalingFit:
    """Least squares on (ln k, ln y); 1-sigma exponent error from the regression covariance.

    With ``y_err`` the fit is weighted by the propagated log errors y_err/y and
    the covariance uses those errors as absolute. Points whose externally
    studentized residual exceeds ``outlier_threshold`` are listed by index.
    """
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=float)
    if k.shape != y.shape:
        raise ValueError("k and y must have the same length")
    if k.size < 3:
        raise ValueError("need at least 3 points for an exponent with an uncertainty")
    if np.any(y <= 0) or np.any(k <= 0):
        raise ValueError("power-law fit needs strictly positive k and y")
    X = np.column_stack([np.ones_like(k), np.log(k)])
    ly = np.log(y)
    n, p = X.shape
    if y_err is not None:
        w = 1.0 / (np.asarray(y_err, dtype=float) / y) ** 2
    else:
        w = np.ones(n)
    XtW = X.T * w
    cov_unscaled = np.linalg.inv(XtW @ X)
    beta = cov_unscaled @ (XtW @ ly)
    resid = ly - X @ beta
    dof = n - p
    s2 = float(np.sum(w * resid**2) / dof) if dof > 0 else 0.0
    cov = cov_unscaled if y_err is not None else cov_unscaled * s2
    H = (X * w[:, None]) @ cov_unscaled @ X.T
    h = np.clip(np.diag(H), 0, 1 - 1e-12)
    stud = np.full(n, np.nan)
    if dof > 1:
        rw = resid * np.sqrt(w)
        s2_del = (dof * s2 - rw**2 / (1 - h)) / (dof - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            stud = rw / np.sqrt(np.maximum(s2_del, 0) * (1 - h))
    outliers = [int(i) for i in np.nonzero(np.abs(stud) > outlier_threshold)[0]]
    return ScalingFit(
        exponent=float(beta[1]),
        exponent_uncertainty=float(np.sqrt(cov[1, 1])),
        prefactor=float(np.exp(beta[0])),
        k_range=(float(k.min()), float(k.max())),
        n_points=n,
        residuals=resid,
        studentized=stud,
        outliers=outliers,
    )


@dataclass
class CriticalParameters:
    nu_z: float
    nu_z_uncertainty: float
    source: str
    interpretation: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {"nu_z": self.nu_z, "uncertainty": self.nu_z_uncertainty, "source": self.source,
                **self.interpretation}


def nu_z_from_tau(e_tau: float, e_err: float = 0.0) -> CriticalParameters:
    """Invert tau ~ k^(-nu z / (1 + nu z)) for nu z."""
    if not -1 < e_tau <= 0:
        raise ValueError(f"relaxation-time exponent {e_tau} outside (-1, 0]: no nu z solves it")
    a = abs(e_tau)
    return CriticalParameters(a / (1 - a), e_err / (1 - a) ** 2, "tau")


def exponent_from_nu_z(nu_z: float) -> float:
    return -nu_z / (1 + nu_z)


CANDIDATES = {"on_tip": (0.5, 1.0), "off_tip": (0.5, 2.0)}


def nu_z_from_nex(e_nex: float, d: int = 3, nu: float = 0.5, e_err: float = 0.0) -> CriticalParameters:
    """Invert n_ex ~ k^(d nu / (1 + nu z)) for nu z at an assumed nu.

    Also compares the measured exponent with the (nu, z) = (1/2, 1) and
    (1/2, 2) predictions and reports the closer one.
    """
    if not (e_nex > 0 and nu > 0 and d * nu > e_nex):
        raise ValueError(f"excitation exponent {e_nex} incompatible with d={d}, nu={nu}")
    nu_z = d * nu / e_nex - 1
    predicted = {name: d * n / (1 + n * z) for name, (n, z) in CANDIDATES.items()}
    chosen = min(predicted, key=lambda name: abs(predicted[name] - e_nex))
    interp = {
        "nu_assumed": nu,
        "d": d,
        "predicted_exponents": predicted,
        "selected": chosen,
        "selected_nu_z_pair": CANDIDATES[chosen],
    }
    return CriticalParameters(nu_z, d * nu / e_nex**2 * e_err, "n_ex", interp)


@dataclass
class CollapseResult:
    rescaled: dict  # k -> (V_eff, gamma)
    score: float
    unrescaled_score: float
    grid: np.ndarray = field(repr=False)


def _pair_rms(curves):
    if len(curves) < 2:
        return 0.0
    devs = [np.mean((a - b) ** 2) for i, a in enumerate(curves) for b in curves[i + 1 :]]
    return float(np.sqrt(np.mean(devs)))


def _score(traces, V_c, b, n_grid, above_critical):
    axes = {}
    for k, tr in traces.items():
        axes[k] = (tr.V - V_c) * k ** (-(1 - b)) + V_c
    lo = max(a.min() for a in axes.values())
    hi = min(a.max() for a in axes.values())
    if above_critical:
        lo = max(lo, V_c)
    if not hi > lo:
        raise ExtractionError("rescaled traces do not overlap")
    grid = np.linspace(lo, hi, n_grid)
    if len(grid) < 5:
        raise ExtractionError("fewer than 5 common grid points")
    curves = []
    for k, tr in traces.items():
        V = (grid - V_c) * k ** (1 - b) + V_c
        curves.append(tr.at_depth(V))
    return _pair_rms(curves), grid, axes


def universal_rescale(traces: dict, V_c: float = 13.0, b: float = 0.53, n_grid: int = 200, above_critical=True):
    """Rescale depths to V_eff = (V - V_c) k^-(1-b) + V_c and score the collapse.

    The score is the RMS pairwise difference of the smoothed gamma_MI(V_eff)
    curves on a common grid over their overlap (restricted to V_eff >= V_c by
    default); ``unrescaled_score`` is the same with b = 1.
    """
    score, grid, axes = _score(traces, V_c, b, n_grid, above_critical)
    plain, _, _ = _score(traces, V_c, 1.0, n_grid, above_critical)
    rescaled = {k: (axes[k], traces[k].gamma) for k in traces}
    return CollapseResult(rescaled, score, plain, grid)
