"""Quasi-static MI fraction of a small trapped cloud as the lattice deepens.

L = 11 with N and the trap scaled so the cloud fills the box the way the
desk-scale (L = 21, N = 2400) campaign does.
"""

import numpy as np

from gutzkz.gutzwiller import compute_order_parameter, target_atom_number
from gutzkz.model import Calibration, LatticeGeometry, PhysicalConstants
from gutzkz.observables import gamma_mi

L = 11
N = 2400 * (L / 21) ** 3
cal = Calibration(PhysicalConstants(trap_frequency=2 * np.pi * 20 * 75 / L))
geom = LatticeGeometry(L)

print(" V/E_r    mu/E_r   gamma(bandmap)  gamma(local)  n_center")
for V in (5, 8, 11, 13, 15, 18, 22, 28, 35):
    mu, st = target_atom_number(cal.params(V), N, geom)
    op = compute_order_parameter(st)
    c = geom.index(*geom.center)
    print(f"{V:5.1f}  {mu:8.4f}  {gamma_mi(st):14.3f}  {gamma_mi(st, 'local'):12.3f}  {op.density[c]:8.3f}")
