"""Real-time Gutzwiller dynamics under lattice-depth ramps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .gutzwiller import (
    GroundStateOptions,
    GutzwillerState,
    compute_order_parameter,
    effective_mu,
    neighbor_table,
    target_atom_number,
    total_energy,
)
from .model import Calibration, HubbardParams, LatticeGeometry, ms_to_natural
from .observables import gamma_mi

log = logging.getLogger(__name__)

__all__ = [
    "Segment",
    "RampSchedule",
    "EvolutionOptions",
    "ObservableSeries",
    "IntegrationError",
    "derivative",
    "evolve",
    "SimulationConfig",
    "prepare_initial_state",
    "paper_protocol_phase_transition",
    "paper_protocol_oscillation",
]


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Segment:
    duration: float  # ms
    V_start: float
    V_end: float

    @property
    def shape(self) -> str:
        return "hold" if self.V_start == self.V_end else "linear"


@dataclass(frozen=True)
class RampSchedule:
    """Piecewise-linear lattice depth V(t) (E_r) over consecutive segments (ms)."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("schedule needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            if not np.isclose(a.V_end, b.V_start, rtol=0, atol=1e-12):
                raise ValueError("V must be continuous across segments")
        if any(s.duration < 0 for s in segs):
            raise ValueError("segment durations must be non-negative")
        if not self.duration > 0:
            raise ValueError("total duration must be positive")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def depth(self, t_ms):
        """V(t); constant beyond either end."""
        knots_t = self.boundaries
        knots_V = [self.segments[0].V_start] + [s.V_end for s in self.segments]
        # zero-length segments produce repeated knots; np.interp takes the later value
        return np.interp(t_ms, knots_t, knots_V)

    @classmethod
    def phase_transition(cls, k, V_stop, V0=5.0, hold=20.0):
        """Hold at V0, then ramp linearly at k (E_r/ms) up to V_stop."""
        if not k > 0:
            raise ValueError("ramp rate must be positive")
        if V_stop < V0:
            raise ValueError("V_stop must not be below V0")
        return cls((Segment(hold, V0, V0), Segment((V_stop - V0) / k, V0, V_stop)))

    @classmethod
    def oscillation(cls, k, hold_time, V0=5.0, V_hold=25.0, prehold=20.0):
        """Hold at V0, ramp at k to V_hold, then hold there for hold_time."""
        if not k > 0:
            raise ValueError("ramp rate must be positive")
        if hold_time < 0:
            raise ValueError("hold_time must be non-negative")
        return cls(
            (
                Segment(prehold, V0, V0),
                Segment((V_hold - V0) / k, V0, V_hold),
                Segment(hold_time, V_hold, V_hold),
            )
        )


@dataclass
class EvolutionOptions:
    dt: float = 5e-4  # ms
    sample_interval: float = 0.05  # ms
    renormalize: bool = True
    max_norm_drift: float = 1e-4
    gamma_normalization: str = "bandmap"
    snapshot_times: tuple = ()  # ms; psi fields stored at the nearest sample

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sample_interval < self.dt * (1 - 1e-9):
            raise ValueError("sample_interval must be at least dt")


SERIES_COLUMNS = ("t_ms", "V_Er", "gamma_MI", "cond_frac", "N", "energy_Er")


@dataclass
class ObservableSeries:
    times: np.ndarray
    V: np.ndarray
    gamma_MI: np.ndarray
    condensate_fraction: np.ndarray
    total_N: np.ndarray
    energy: np.ndarray
    meta: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict, repr=False)
    max_norm_drift: float = 0.0

    def __post_init__(self):
        n = len(self.times)
        for name in ("V", "gamma_MI", "condensate_fraction", "total_N", "energy"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
            if len(getattr(self, name)) != n:
                raise ValueError("series arrays must have equal length")
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            cols = (self.times, self.V, self.gamma_MI, self.condensate_fraction, self.total_N, self.energy)
            for row in zip(*cols):
                w.writerow([f"{x:.17g}" for x in row])
        return path

    @classmethod
    def from_csv(cls, path, meta=None):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(h.strip() for h in next(reader))
            if header != SERIES_COLUMNS:
                raise ValueError(f"{path}: unexpected series header {header}")
            data = np.array([[float(x) for x in row] for row in reader if row], dtype=float)
        if data.size == 0:
            raise ValueError(f"{path}: empty series")
        return cls(*data.T, meta=dict(meta or {}))


def derivative(state: GutzwillerState, params: HubbardParams) -> np.ndarray:
    """df_i/dt = -i h_mf(psi[state]) f_i in natural units (hbar = 1, E_r)."""
    ptr, idx = neighbor_table(state.geometry)
    mu_eff = np.ascontiguousarray(effective_mu(params, state.geometry), dtype=float)
    M = state.n_sites
    psi = np.empty(M, dtype=np.complex128)
    phi = np.empty(M, dtype=np.complex128)
    out = np.empty_like(state.amplitudes)
    _kernels.derivative(state.amplitudes, mu_eff, params.J, params.U, ptr, idx, psi, phi, out)
    return out


def _observe(state, params, normalization):
    op = compute_order_parameter(state)
    g = gamma_mi(state, normalization, field=op)
    return g, 1 - g, op.total_atoms, total_energy(state, params), op


def evolve(
    state: GutzwillerState,
    schedule: RampSchedule,
    calibration: Calibration,
    mu: float,
    options: EvolutionOptions | None = None,
    meta: dict | None = None,
) -> ObservableSeries:
    """RK4-integrate the Gutzwiller equations along ``schedule``.

    J(t) and U(t) follow V(t) at every RK substage. The input state is not
    modified. Observables are taken from the post-step state every
    ``sample_interval``; the final state is stored in ``meta['final_state']``.
    """
    opt = options or EvolutionOptions()
    if not state.is_normalized(1e-8):
        raise ValueError("initial state is not normalized")
    constants = calibration.constants
    T = schedule.duration
    per_sample = max(1, int(round(opt.sample_interval / opt.dt)))
    n_samples = int(np.ceil(T / (per_sample * opt.dt) - 1e-9))
    n_steps = n_samples * per_sample
    dt_ms = T / n_steps
    dt = float(ms_to_natural(dt_ms, constants))

    t_half = np.arange(2 * n_steps + 1) * (dt_ms / 2)
    V_half = schedule.depth(t_half)
    Js = np.ascontiguousarray(calibration.tunneling(V_half), dtype=float)
    Us = np.ascontiguousarray(calibration.interaction(V_half), dtype=float)
    curv = calibration.trap_curvature
    ptr, idx = neighbor_table(state.geometry)
    mu_eff = np.ascontiguousarray(mu - curv * np.asarray(state.geometry.radius_squared), dtype=float)

    f = state.amplitudes.copy()
    work = GutzwillerState(f, state.geometry)
    snap_steps = {int(round(ts / (per_sample * dt_ms))) * per_sample: ts for ts in opt.snapshot_times}
    rows = []
    snapshots = {}
    worst = 0.0

    def record(step):
        p = HubbardParams(Js[2 * step], Us[2 * step], mu, curv)
        g, c, N, E, op = _observe(work, p, opt.gamma_normalization)
        rows.append((step * dt_ms, V_half[2 * step], g, c, N, E))
        if step in snap_steps:
            snapshots[snap_steps[step]] = op.psi.copy()

    record(0)
    for s in range(n_samples):
        lo = 2 * s * per_sample
        dev = _kernels.rk4_run(
            f, per_sample, dt, Js[lo : lo + 2 * per_sample + 1], Us[lo : lo + 2 * per_sample + 1],
            mu_eff, ptr, idx, opt.renormalize,
        )
        worst = max(worst, dev)
        if worst > opt.max_norm_drift:
            raise IntegrationError(
                f"per-site norm drift {worst:.2e} exceeds {opt.max_norm_drift:.0e} "
                f"at t={(s + 1) * per_sample * dt_ms:.4g} ms; reduce dt"
            )
        record((s + 1) * per_sample)
    if worst > 1e-6:
        log.warning("per-site norm drift reached %.2e (dt=%.3g ms)", worst, dt_ms)
    rows = np.array(rows)
    m = dict(meta or {})
    m.update(dt_ms=dt_ms, mu=mu)
    m["final_state"] = GutzwillerState(f, state.geometry)
    return ObservableSeries(*rows.T, meta=m, snapshots=snapshots, max_norm_drift=worst)


@dataclass
class SimulationConfig:
    """Common set-up shared by the ramp protocols."""

    side_length: int = 21
    n_max: int = 7
    N_target: float = 2400.0
    calibration: Calibration = field(default_factory=Calibration)
    ground_options: GroundStateOptions = field(default_factory=GroundStateOptions)
    evolution: EvolutionOptions = field(default_factory=EvolutionOptions)
    V0: float = 5.0
    prehold: float = 20.0

    @property
    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.side_length)


_INITIAL_CACHE: dict = {}


def prepare_initial_state(config: SimulationConfig):
    """Ground state at V0 with the target atom number; returns (mu, state). Cached per config."""
    key = (
        config.side_length, config.n_max, config.N_target, config.V0,
        config.calibration.mode, config.calibration.constants,
        config.ground_options.tol, config.ground_options.mixing, config.ground_options.seed_psi,
    )
    if key not in _INITIAL_CACHE:
        params = config.calibration.params(config.V0)
        _INITIAL_CACHE[key] = target_atom_number(
            params, config.N_target, config.geometry, config.n_max, config.ground_options
        )
    mu, st = _INITIAL_CACHE[key]
    return mu, st.copy()


def paper_protocol_phase_transition(k, V_stop, config: SimulationConfig | None = None):
    """Ground state at V0, hold for ``prehold`` ms, ramp at k (E_r/ms) to V_stop."""
    cfg = config or SimulationConfig()
    if not V_stop >= cfg.V0:
        raise ValueError("V_stop must be at least V0")
    mu, st = prepare_initial_state(cfg)
    schedule = RampSchedule.phase_transition(k, V_stop, cfg.V0, cfg.prehold)
    meta = {"protocol": "phase_transition", "k": k, "V_stop": V_stop, "ramp_start_ms": cfg.prehold}
    return evolve(st, schedule, cfg.calibration, mu, cfg.evolution, meta)


def paper_protocol_oscillation(k, hold_time, config: SimulationConfig | None = None, V_hold=25.0):
    """Ramp V0 -> V_hold at k, then hold for ``hold_time`` ms (sampled every <= 0.02 ms)."""
    cfg = config or SimulationConfig()
    mu, st = prepare_initial_state(cfg)
    evo = cfg.evolution
    if evo.sample_interval > 0.02:
        evo = EvolutionOptions(**{**evo.__dict__, "sample_interval": 0.02})
    schedule = RampSchedule.oscillation(k, hold_time, cfg.V0, V_hold, cfg.prehold)
    ramp_end = cfg.prehold + (V_hold - cfg.V0) / k
    meta = {"protocol": "oscillation", "k": k, "V_hold": V_hold, "hold_start_ms": ramp_end,
            "ramp_start_ms": cfg.prehold}
    return evolve(st, schedule, cfg.calibration, mu, evo, meta)
