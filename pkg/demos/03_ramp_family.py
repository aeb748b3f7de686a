"""Linear ramps through the transition and the tau_SF power law, on a small lattice.

Takes about a minute. The acceptance suite runs the same analysis at L = 21.
"""

import numpy as np

from gutzkz import scaling
from gutzkz.dynamics import EvolutionOptions, SimulationConfig, paper_protocol_phase_transition
from gutzkz.model import Calibration, PhysicalConstants

L = 11
cfg = SimulationConfig(
    side_length=L,
    N_target=2400 * (L / 21) ** 3,
    calibration=Calibration(PhysicalConstants(trap_frequency=2 * np.pi * 20 * 75 / L)),
    evolution=EvolutionOptions(dt=2e-3, sample_interval=0.05),
    prehold=0.0,  # the V0 ground state is stationary, so the hold changes nothing
)

ks = [0.5, 1.0, 2.0, 4.0, 8.0]
traces = {}
for k in ks:
    s = paper_protocol_phase_transition(k, 25.0, cfg)
    traces[k] = scaling.smooth_trace(s, k)
    marks = [f"{V:.0f}:{g:.2f}" for V, g in zip(s.V[::40], s.gamma_MI[::40])]
    print(f"k = {k:4.1f}  gamma_MI along the ramp  " + " ".join(marks))

taus = [scaling.tau_sf(traces[k]) for k in ks]
fit = scaling.fit_power_law(ks, taus)
print("tau_SF (ms):", np.round(taus, 2))
print(f"tau_SF ~ k^{fit.exponent:.3f} +- {fit.exponent_uncertainty:.3f}")
