"""Where does the n=1 Mott lobe end? Homogeneous mean field against strong coupling.

Scans mu at a few values of zJ/U on a single periodic site and prints the
superfluid window next to the second-order strong-coupling boundaries.
"""

import numpy as np

from gutzkz.gutzwiller import GroundStateOptions, compute_order_parameter, ground_state
from gutzkz.model import HubbardParams, LatticeGeometry

site = LatticeGeometry(1, periodic=True)
opts = GroundStateOptions(max_iter=200_000)
U = 1.0

for x in (0.05, 0.10, 0.15, 0.17):
    J = x * U / 6
    mus = np.linspace(0.0, 1.0, 101)
    mott = []
    for mu in mus:
        psi = compute_order_parameter(ground_state(HubbardParams(J, U, mu=mu), site, options=opts)).psi[0]
        mott.append(abs(psi) < 1e-4)
    mott = np.array(mott)
    root = x * x - 6 * x + 1
    if root >= 0:
        lo, hi = 0.5 * (1 - x - np.sqrt(root)), 0.5 * (1 - x + np.sqrt(root))
        pert = f"[{lo:.3f}, {hi:.3f}]"
    else:
        pert = "none (beyond the tip)"
    found = f"[{mus[mott].min():.2f}, {mus[mott].max():.2f}]" if mott.any() else "none"
    print(f"zJ/U = {x:.2f}: Mott for mu/U in {found}; strong coupling says {pert}")
