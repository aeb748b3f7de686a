"""From a Gutzwiller state to a band-mapped image and back to gamma_MI.

Synthesizes 18 noisy shots of the same ground state, analyzes them one by
one and in pixelwise groups of three, and compares with the state's own value.
"""

import numpy as np

from gutzkz.bandmap import analyze_profile, grouped_statistics
from gutzkz.gutzwiller import target_atom_number
from gutzkz.model import Calibration, LatticeGeometry, PhysicalConstants
from gutzkz.observables import QuasiMomentumProfile, gamma_mi, synthesize_profile

L = 11
cal = Calibration(PhysicalConstants(trap_frequency=2 * np.pi * 20 * 75 / L))
_, st = target_atom_number(cal.params(14.0), 2400 * (L / 21) ** 3, LatticeGeometry(L))

clean = synthesize_profile(st, 64, blur_sigma=0.05)
rng = np.random.default_rng(1)
shots = [
    QuasiMomentumProfile(clean.grid + 0.03 * clean.grid.max() * rng.standard_normal(clean.grid.shape), clean.normalization)
    for _ in range(18)
]

single = [analyze_profile(s).gamma_MI for s in shots]
mean, std = grouped_statistics(shots, 3, 6)
print(f"state:            gamma_MI = {gamma_mi(st):.4f}")
print(f"clean image:      gamma_MI = {analyze_profile(clean).gamma_MI:.4f}")
print(f"single shots:     {np.mean(single):.4f} +- {np.std(single, ddof=1):.4f}")
print(f"groups of three:  {mean:.4f} +- {std:.4f}")
