"""Band-mapping analysis: 2D quasi-momentum grid -> line profile -> gamma_MI.

Steps: integrate along q_y, subtract the background measured outside the
first Brillouin zone, move the center of mass to q = 0 and symmetrize,
then split the zone into a flat plateau (Mott) and the excess on top of it
(superfluid).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .observables import QuasiMomentumProfile

__all__ = [
    "LineProfile",
    "GammaEstimate",
    "integrate_profile",
    "remove_background",
    "centralize_symmetrize",
    "estimate_gamma",
    "analyze_profile",
    "grouped_statistics",
]


@dataclass
class LineProfile:
    q: np.ndarray
    n: np.ndarray
    center_shift: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.n = np.asarray(self.n, dtype=float)
        if self.q.shape != self.n.shape or self.q.ndim != 1:
            raise ValueError("q and n must be 1D arrays of equal length")
        if np.any(np.diff(self.q) <= 0):
            raise ValueError("q must be strictly increasing")


@dataclass
class GammaEstimate:
    gamma_MI: float
    A_SF: float
    A_tot: float
    diagnostics: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "gamma": self.gamma_MI,
            "A_SF": self.A_SF,
            "A_tot": self.A_tot,
            "diagnostics": dict(self.diagnostics),
        }


def integrate_profile(profile, q_extent: float = 1.5 * np.pi) -> LineProfile:
    """Integrate n(q_x, q_y) along q_y.

    ``profile`` is a :class:`QuasiMomentumProfile` (periodic grid on
    [-pi, pi)) or a ``(q, grid)`` pair for wider experimental grids. The
    periodic grid gets its -pi column repeated at +pi so the line is symmetric
    about 0, and zeros are padded out to ``q_extent`` (nothing lands outside
    the zone in an ideal band map).
    """
    if isinstance(profile, QuasiMomentumProfile):
        grid = np.asarray(profile.grid, dtype=float)
        q = profile.q
        periodic = True
    else:
        q, grid = profile
        q = np.asarray(q, dtype=float)
        grid = np.asarray(grid, dtype=float)
        periodic = False
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.shape[1] != q.size:
        raise ValueError(f"malformed grid of shape {grid.shape} for {q.size} q samples")
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid contains non-finite values")
    dq = q[1] - q[0]
    line = grid.sum(axis=0) * dq
    if periodic:
        q = np.append(q, q[-1] + dq)
        line = np.append(line, line[0])
    n_pad = int(np.ceil((q_extent - q[-1]) / dq - 1e-9))
    if n_pad > 0:
        left = q[0] - dq * np.arange(n_pad, 0, -1)
        right = q[-1] + dq * np.arange(1, n_pad + 1)
        q = np.concatenate([left, q, right])
        line = np.concatenate([np.zeros(n_pad), line, np.zeros(n_pad)])
    return LineProfile(q, line)


def remove_background(p: LineProfile, zone_edge: float = np.pi) -> LineProfile:
    """Shift the profile so the mean outside |q| <= pi is zero."""
    outside = np.abs(p.q) > zone_edge * (1 + 1e-12)
    if not np.any(outside):
        raise ValueError("profile has no samples outside the first Brillouin zone")
    return LineProfile(p.q.copy(), p.n - p.n[outside].mean(), p.center_shift)


def _symmetric_grid(q):
    if q.size % 2 == 1 and np.allclose(q, -q[::-1], atol=1e-12 * np.abs(q).max()):
        return q
    dq = np.median(np.diff(q))
    half = int(np.floor(min(-q[0], q[-1]) / dq + 1e-9))
    return dq * np.arange(-half, half + 1)


def centralize_symmetrize(p: LineProfile, zone_edge: float = np.pi) -> LineProfile:
    """Move the center of mass (taken over |q| <= pi) to zero, then average with the mirror."""
    inside = np.abs(p.q) <= zone_edge * (1 + 1e-12)
    weight = trapezoid(p.n[inside], p.q[inside])
    if not weight > 0:
        raise ValueError("profile has non-positive total weight")
    center = trapezoid(p.q[inside] * p.n[inside], p.q[inside]) / weight
    q = _symmetric_grid(p.q)
    shifted = np.interp(q + center, p.q, p.n, left=0.0, right=0.0)
    sym = 0.5 * (shifted + shifted[::-1])
    return LineProfile(q, sym, float(center))


def estimate_gamma(
    p: LineProfile, plateau_window: float = 0.1, zone_edge: float = np.pi
) -> GammaEstimate:
    """Plateau from the mean of n over |q| in [(1 - window) pi, pi]; SF = excess above it."""
    a = np.abs(p.q)
    edge = zone_edge * (1 + 1e-12)
    inside = a <= edge
    band = (a >= (1 - plateau_window) * zone_edge * (1 - 1e-12)) & inside
    if not np.any(band):
        raise ValueError("plateau window contains no samples")
    plateau = float(p.n[band].mean())
    qi, ni = p.q[inside], p.n[inside]
    A_tot = float(trapezoid(ni, qi))
    if not A_tot > 0:
        raise ValueError("total area must be positive")
    excess = ni - plateau
    excess[excess <= 1e-12 * abs(plateau)] = 0.0  # rounding noise on a flat top is not superfluid
    A_SF = float(trapezoid(excess, qi))
    A_SF = min(A_SF, A_tot)
    diag = {"plateau_height": plateau, "center_shift": p.center_shift}
    return GammaEstimate(1.0 - A_SF / A_tot, A_SF, A_tot, diag)


def analyze_profile(profile, plateau_window: float = 0.1) -> GammaEstimate:
    """Full pipeline on one grid (or an already-integrated :class:`LineProfile`)."""
    line = profile if isinstance(profile, LineProfile) else integrate_profile(profile)
    processed = centralize_symmetrize(remove_background(line))
    return estimate_gamma(processed, plateau_window)


def grouped_statistics(samples, group_size: int = 3, n_groups: int = 6, plateau_window=0.1, ddof=1):
    """Average consecutive groups of grids pixelwise, analyze each, return (mean, std).

    The standard deviation is over the ``n_groups`` gamma values (sample
    standard deviation for ``ddof=1``).
    """
    samples = list(samples)
    if len(samples) != group_size * n_groups:
        raise ValueError(f"expected {group_size}x{n_groups}={group_size * n_groups} samples, got {len(samples)}")
    gammas = []
    for g in range(n_groups):
        chunk = samples[g * group_size : (g + 1) * group_size]
        mean_grid = np.mean([s.grid for s in chunk], axis=0)
        avg = QuasiMomentumProfile(mean_grid, float(np.mean([s.normalization for s in chunk])))
        gammas.append(analyze_profile(avg, plateau_window).gamma_MI)
    gammas = np.array(gammas)
    std = float(gammas.std(ddof=ddof)) if n_groups > ddof else 0.0
    return float(gammas.mean()), std
