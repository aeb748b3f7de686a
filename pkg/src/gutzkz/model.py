"""Physical units, lattice geometry and the lattice-depth calibration.

Internal units: hbar = 1, energies in recoil energies E_r, times in
hbar/E_r. Public APIs that take or return times use milliseconds and
convert with :func:`ms_to_natural` / :func:`natural_to_ms`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import constants as sc

BOHR_RADIUS = sc.physical_constants["Bohr radius"][0]
RB87_MASS = 86.909180527 * sc.atomic_mass

__all__ = [
    "PhysicalConstants",
    "LatticeGeometry",
    "HubbardParams",
    "Calibration",
    "tunneling_from_depth",
    "interaction_from_depth",
    "trap_curvature",
    "ms_to_natural",
    "natural_to_ms",
    "read_calibration_table",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """Experimental constants for 87Rb in a 1064 nm cubic lattice (SI units)."""

    recoil_frequency: float = 2000.0  # E_r / h in Hz
    lattice_wavelength: float = 1064e-9
    atom_mass: float = RB87_MASS
    scattering_length: float = 100 * BOHR_RADIUS
    trap_frequency: float = 2 * np.pi * 20.0  # omega_0, rad/s
    # the nominal 2 kHz recoil is 1.4% below hbar^2 k^2 / 2m for 87Rb at 1064 nm
    recoil_tolerance: float = 0.02

    def __post_init__(self):
        for name in ("recoil_frequency", "lattice_wavelength", "atom_mass", "scattering_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.trap_frequency < 0:
            raise ValueError("trap_frequency must be non-negative")
        if self.recoil_tolerance is not None:
            rel = abs(self.computed_recoil_energy / self.recoil_energy - 1)
            if rel > self.recoil_tolerance:
                raise ValueError(
                    f"recoil energy h*{self.recoil_frequency} Hz differs from "
                    f"hbar^2 k^2 / 2m by {rel:.1%}"
                )

    @property
    def recoil_energy(self) -> float:
        """E_r in joules."""
        return sc.h * self.recoil_frequency

    @property
    def computed_recoil_energy(self) -> float:
        k = 2 * np.pi / self.lattice_wavelength
        return (sc.hbar * k) ** 2 / (2 * self.atom_mass)

    @property
    def lattice_spacing(self) -> float:
        return self.lattice_wavelength / 2

    @property
    def natural_time_per_ms(self) -> float:
        """E_r / hbar expressed in rad per millisecond."""
        return 2 * np.pi * self.recoil_frequency * 1e-3


DEFAULT_CONSTANTS = PhysicalConstants()


def ms_to_natural(t_ms, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    return np.multiply(t_ms, constants.natural_time_per_ms)


def natural_to_ms(t, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    return np.divide(t, constants.natural_time_per_ms)


def trap_curvature(constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Coefficient of r^2 (r in lattice sites) in the trap energy, in E_r."""
    c = constants
    return 0.5 * c.atom_mass * c.trap_frequency**2 * c.lattice_spacing**2 / c.recoil_energy


@dataclass(frozen=True)
class LatticeGeometry:
    """Cubic L x L x L lattice, sites indexed x-major (x, y, z) -> (x*L + y)*L + z.

    Open boundaries by default; ``periodic=True`` wraps the neighbor sum and is
    meant for homogeneous (trap-free) tests.
    """

    side_length: int
    periodic: bool = False

    def __post_init__(self):
        if self.side_length < 1 or self.side_length % 2 == 0:
            raise ValueError("side_length must be a positive odd integer")

    @property
    def shape(self) -> tuple[int, int, int]:
        L = self.side_length
        return (L, L, L)

    @property
    def n_sites(self) -> int:
        return self.side_length**3

    @property
    def center(self) -> tuple[int, int, int]:
        c = self.side_length // 2
        return (c, c, c)

    def coordinates(self, index):
        return np.unravel_index(index, self.shape)

    def index(self, x, y, z):
        return np.ravel_multi_index((x, y, z), self.shape)

    @cached_property
    def radius_squared(self) -> np.ndarray:
        """r_i^2 in sites^2 from the center, flattened in site order."""
        L = self.side_length
        r = np.arange(L) - L // 2
        x, y, z = np.meshgrid(r, r, r, indexing="ij")
        out = (x**2 + y**2 + z**2).astype(float).ravel()
        out.flags.writeable = False
        return out

    def neighbor_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum over the six nearest neighbors of a flat per-site array."""
        g = values.reshape(self.shape)
        if self.periodic:
            out = sum(np.roll(g, s, axis=a) for a in range(3) for s in (1, -1))
            return out.ravel()
        out = np.zeros_like(g)
        out[1:] += g[:-1]
        out[:-1] += g[1:]
        out[:, 1:] += g[:, :-1]
        out[:, :-1] += g[:, 1:]
        out[:, :, 1:] += g[:, :, :-1]
        out[:, :, :-1] += g[:, :, 1:]
        return out.ravel()

    @property
    def coordination(self) -> int:
        return 6


@dataclass(frozen=True)
class HubbardParams:
    """Bose-Hubbard couplings in E_r (trap_curvature in E_r per site^2)."""

    J: float
    U: float
    mu: float = 0.0
    trap_curvature: float = 0.0

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if not self.U > 0:
            raise ValueError("U must be > 0")

    def with_mu(self, mu: float) -> "HubbardParams":
        return HubbardParams(self.J, self.U, mu, self.trap_curvature)


def _check_depth(V):
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0):
        raise ValueError("lattice depth must be positive")
    return V


def _bandwidth_tunneling(V: float, n_planewaves: int = 41) -> float:
    # 1D lattice V sin^2(k x) in plane waves exp(i(q + 2m)kx); energies in E_r
    m = np.arange(n_planewaves) - n_planewaves // 2
    off = np.full(n_planewaves - 1, -V / 4)

    def lowest(q):
        h = np.diag((q + 2.0 * m) ** 2 + V / 2) + np.diag(off, 1) + np.diag(off, -1)
        return np.linalg.eigvalsh(h)[0]

    return (lowest(1.0) - lowest(0.0)) / 4


def tunneling_from_depth(V, method: str = "analytic", n_planewaves: int = 41):
    """Nearest-neighbor tunneling J/E_r for a lattice depth V/E_r.

    ``analytic`` is the deep-lattice closed form; ``bandstructure`` returns a
    quarter of the exact lowest-band width of the 1D lattice.
    """
    V = _check_depth(V)
    if method == "analytic":
        return 4 / np.sqrt(np.pi) * V**0.75 * np.exp(-2 * np.sqrt(V))
    if method == "bandstructure":
        if n_planewaves < 21:
            raise ValueError("need at least 21 plane waves")
        out = np.vectorize(lambda v: _bandwidth_tunneling(float(v), n_planewaves))(V)
        return out if out.ndim else float(out)
    raise ValueError(f"unknown tunneling method {method!r}")


def interaction_from_depth(V, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """On-site interaction U/E_r from the harmonic-Wannier closed form."""
    V = _check_depth(V)
    ka = 2 * np.pi * constants.scattering_length / constants.lattice_wavelength
    return np.sqrt(8 / np.pi) * ka * V**0.75


def read_calibration_table(path) -> np.ndarray:
    """Read a ``V_Er,J_Er,U_Er`` CSV into an (n, 3) array sorted by V."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["V_Er", "J_Er", "U_Er"]:
            raise ValueError(f"{path}: expected header V_Er,J_Er,U_Er, got {header}")
        rows = [[float(x) for x in row] for row in reader if row]
    table = np.array(rows, dtype=float)
    if table.ndim != 2 or len(table) < 2:
        raise ValueError(f"{path}: need at least two rows")
    return table[np.argsort(table[:, 0])]


@dataclass(frozen=True)
class Calibration:
    """Maps lattice depth to Hubbard parameters.

    ``mode`` is ``analytic`` (default), ``bandstructure`` (numerical J, closed
    form U) or ``table`` (linear interpolation of a user table).
    """

    constants: PhysicalConstants = DEFAULT_CONSTANTS
    mode: str = "analytic"
    table: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ("analytic", "bandstructure", "table"):
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        if self.mode == "table" and self.table is None:
            raise ValueError("table mode needs a table")

    @classmethod
    def from_table(cls, path, constants: PhysicalConstants = DEFAULT_CONSTANTS):
        return cls(constants, "table", read_calibration_table(path))

    def _interp(self, V, col):
        V = _check_depth(V)
        lo, hi = self.table[0, 0], self.table[-1, 0]
        if np.any(V < lo) or np.any(V > hi):
            raise ValueError(f"depth outside calibration table range [{lo}, {hi}]")
        out = np.interp(V, self.table[:, 0], self.table[:, col])
        return out if out.ndim else float(out)

    def tunneling(self, V):
        if self.mode == "table":
            return self._interp(V, 1)
        return tunneling_from_depth(V, self.mode)

    def interaction(self, V):
        if self.mode == "table":
            return self._interp(V, 2)
        return interaction_from_depth(V, self.constants)

    @property
    def trap_curvature(self) -> float:
        return trap_curvature(self.constants)

    def params(self, V: float, mu: float = 0.0) -> HubbardParams:
        return HubbardParams(
            float(self.tunneling(V)), float(self.interaction(V)), mu, self.trap_curvature
        )
