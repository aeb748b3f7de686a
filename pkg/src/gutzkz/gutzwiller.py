"""Site-factorized Gutzwiller states and self-consistent mean-field ground states."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .model import HubbardParams, LatticeGeometry

log = logging.getLogger(__name__)

__all__ = [
    "Graph",
    "GutzwillerState",
    "OrderParameterField",
    "ConvergenceError",
    "GroundStateOptions",
    "GroundStateResult",
    "compute_order_parameter",
    "build_local_hamiltonian",
    "ground_state",
    "target_atom_number",
    "total_energy",
    "save_checkpoint",
    "load_checkpoint",
]


class ConvergenceError(RuntimeError):
    """Raised when a self-consistent or bracketing search fails."""

    def __init__(self, message, residual=None, table=None):
        super().__init__(message)
        self.residual = residual
        self.table = table


class Graph:
    """Arbitrary site graph with explicit bonds, for small oracle problems.

    Offers the same surface as :class:`LatticeGeometry` (``n_sites``,
    ``radius_squared``, ``neighbor_sum``, ``neighbor_table``).
    """

    def __init__(self, n_sites, bonds, radius_squared=None):
        self.n_sites = int(n_sites)
        self.bonds = [tuple(b) for b in bonds]
        if radius_squared is None:
            radius_squared = np.zeros(self.n_sites)
        self.radius_squared = np.asarray(radius_squared, dtype=float)
        nbrs = [[] for _ in range(self.n_sites)]
        for i, j in self.bonds:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self._nbrs = nbrs

    def neighbor_table(self):
        ptr = np.zeros(self.n_sites + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(n) for n in self._nbrs])
        idx = np.array([j for n in self._nbrs for j in n], dtype=np.int64)
        return ptr, idx

    def neighbor_sum(self, values):
        out = np.zeros_like(values)
        for i, j in self.bonds:
            out[i] += values[j]
            out[j] += values[i]
        return out


def neighbor_table(geometry):
    """CSR neighbor table (ptr, idx) for a cubic lattice or a :class:`Graph`."""
    if isinstance(geometry, Graph):
        return geometry.neighbor_table()
    cached = getattr(geometry, "_csr", None)
    if cached is not None:
        return cached
    L = geometry.side_length
    M = geometry.n_sites
    x, y, z = np.unravel_index(np.arange(M), geometry.shape)
    cols = []
    for axis, coord in enumerate((x, y, z)):
        for step in (-1, 1):
            c = coord + step
            if geometry.periodic:
                c = c % L
                ok = np.ones(M, dtype=bool)
            else:
                ok = (c >= 0) & (c < L)
                c = np.clip(c, 0, L - 1)
            xyz = [x, y, z]
            xyz[axis] = c
            j = np.ravel_multi_index(xyz, geometry.shape)
            cols.append(np.where(ok, j, -1))
    nb = np.stack(cols, axis=1)
    counts = (nb >= 0).sum(axis=1)
    ptr = np.zeros(M + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(counts)
    idx = nb[nb >= 0].astype(np.int64)
    object.__setattr__(geometry, "_csr", (ptr, idx))
    return ptr, idx


@dataclass
class GutzwillerState:
    """Per-site Fock amplitudes ``amplitudes[i, n]`` on a geometry."""

    amplitudes: np.ndarray
    geometry: object

    def __post_init__(self):
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.ndim != 2 or self.amplitudes.shape[0] != self.geometry.n_sites:
            raise ValueError("amplitudes must have shape (n_sites, n_max + 1)")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")

    @property
    def n_max(self) -> int:
        return self.amplitudes.shape[1] - 1

    @property
    def n_sites(self) -> int:
        return self.amplitudes.shape[0]

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def is_normalized(self, tol=1e-9) -> bool:
        return bool(np.all(np.abs(self.norms() - 1) <= tol))

    def copy(self) -> "GutzwillerState":
        return GutzwillerState(self.amplitudes.copy(), self.geometry)

    @classmethod
    def fock(cls, geometry, occupation, n_max=7):
        occ = np.broadcast_to(np.asarray(occupation, dtype=int), (geometry.n_sites,))
        f = np.zeros((geometry.n_sites, n_max + 1), dtype=np.complex128)
        f[np.arange(geometry.n_sites), occ] = 1.0
        return cls(f, geometry)

    @classmethod
    def coherent(cls, geometry, alpha, n_max=7):
        """Truncated, renormalized coherent state with amplitude alpha on every site."""
        from scipy.special import gammaln

        n = np.arange(n_max + 1)
        alpha = np.broadcast_to(np.asarray(alpha, dtype=complex), (geometry.n_sites,))
        with np.errstate(divide="ignore"):
            logmag = n * np.log(np.abs(alpha)[:, None]) - 0.5 * gammaln(n + 1)
        f = np.exp(logmag) * np.exp(1j * n * np.angle(alpha)[:, None])
        f[np.abs(alpha) == 0] = 0
        f[np.abs(alpha) == 0, 0] = 1
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        return cls(f, geometry)


@dataclass
class OrderParameterField:
    psi: np.ndarray
    density: np.ndarray

    @property
    def total_atoms(self) -> float:
        return float(self.density.sum())


def compute_order_parameter(state: GutzwillerState) -> OrderParameterField:
    """psi_i = <a_i> and density_i = <n_i> for every site."""
    f = state.amplitudes
    sq = np.sqrt(np.arange(1, state.n_max + 1))
    psi = np.sum(sq * np.conj(f[:, :-1]) * f[:, 1:], axis=1)
    density = np.abs(f) ** 2 @ np.arange(state.n_max + 1)
    return OrderParameterField(psi, density)


def build_local_hamiltonian(J, U, mu_eff, Phi, n_max=7) -> np.ndarray:
    """Dense single-site mean-field matrix in the Fock basis |0>..|n_max>."""
    n = np.arange(n_max + 1)
    h = np.diag((0.5 * U * n * (n - 1) - mu_eff * n).astype(complex))
    off = -J * np.conj(Phi) * np.sqrt(n[1:])
    h[n[:-1], n[1:]] = off
    h[n[1:], n[:-1]] = np.conj(off)
    return h


def effective_mu(params: HubbardParams, geometry) -> np.ndarray:
    return params.mu - params.trap_curvature * np.asarray(geometry.radius_squared)


def total_energy(state: GutzwillerState, params: HubbardParams) -> float:
    """<Psi|H|Psi> for the product state (hopping counted once per bond)."""
    op = compute_order_parameter(state)
    phi = state.geometry.neighbor_sum(op.psi)
    kinetic = -params.J * np.real(np.vdot(op.psi, phi))
    n = np.arange(state.n_max + 1)
    prob = np.abs(state.amplitudes) ** 2
    onsite = 0.5 * params.U * prob @ (n * (n - 1))
    trap = params.trap_curvature * np.asarray(state.geometry.radius_squared)
    return float(kinetic + onsite.sum() + np.sum((trap - params.mu) * op.density))


@dataclass
class GroundStateOptions:
    tol: float = 1e-8
    max_iter: int = 10_000
    mixing: float = 0.5
    seed_psi: complex = 0.1
    method: str = "self_consistent"  # or "imaginary_time"
    imaginary_dt: float = 0.05
    degenerate_tol: float = 1e-12


@dataclass
class GroundStateResult:
    state: GutzwillerState
    iterations: int
    residual: float
    residual_history: np.ndarray = field(repr=False)


def _seed_field(geometry, seed, initial_psi):
    if initial_psi is not None:
        return np.array(initial_psi, dtype=complex)
    return np.full(geometry.n_sites, complex(seed))


def ground_state(
    params: HubbardParams,
    geometry,
    n_max: int = 7,
    options: GroundStateOptions | None = None,
    initial_psi=None,
    initial_state: GutzwillerState | None = None,
    return_info: bool = False,
):
    """Self-consistent mean-field ground state.

    Jacobi fixed-point iteration on the psi-field: every site is replaced by
    the lowest eigenvector of its local matrix built from the previous field,
    then psi <- (1 - mixing) psi + mixing psi_eig. Stops once max|delta psi|
    falls below ``options.tol``.
    """
    opt = options or GroundStateOptions()
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if opt.method == "imaginary_time":
        return _imaginary_time_ground_state(params, geometry, n_max, opt, initial_psi, return_info)
    if opt.method != "self_consistent":
        raise ValueError(f"unknown ground-state method {opt.method!r}")

    ptr, idx = neighbor_table(geometry)
    mu_eff = np.ascontiguousarray(effective_mu(params, geometry), dtype=float)
    M = geometry.n_sites
    if initial_state is not None:
        f = initial_state.amplitudes.copy()
        psi = compute_order_parameter(initial_state).psi
    else:
        f = np.zeros((M, n_max + 1), dtype=np.complex128)
        f[:, 1] = 1.0
        psi = _seed_field(geometry, opt.seed_psi, initial_psi)
    phi = np.empty(M, dtype=np.complex128)
    f_new = np.empty_like(f)
    psi_eig = np.empty(M, dtype=np.complex128)
    history = []
    residual = np.inf
    for it in range(1, opt.max_iter + 1):
        _kernels.neighbor_sum(psi, ptr, idx, phi)
        _kernels.ground_sweep(f, phi, mu_eff, params.J, params.U, f_new, psi_eig, opt.degenerate_tol)
        f, f_new = f_new, f
        psi_next = (1 - opt.mixing) * psi + opt.mixing * psi_eig
        residual = float(np.max(np.abs(psi_next - psi))) if M else 0.0
        history.append(residual)
        psi = psi_next
        if residual < opt.tol:
            break
    else:
        raise ConvergenceError(
            f"ground state not converged after {opt.max_iter} iterations "
            f"(residual {residual:.3e})",
            residual=residual,
        )
    # final consistent eigenvectors for the converged field
    _kernels.neighbor_sum(psi, ptr, idx, phi)
    _kernels.ground_sweep(f, phi, mu_eff, params.J, params.U, f_new, psi_eig, opt.degenerate_tol)
    state = GutzwillerState(f_new.copy(), geometry)
    if return_info:
        return GroundStateResult(state, it, residual, np.array(history))
    return state


def _imaginary_time_ground_state(params, geometry, n_max, opt, initial_psi, return_info):
    # normalized gradient flow f <- normalize(f - dtau h f): cross-check backend
    M = geometry.n_sites
    psi0 = _seed_field(geometry, opt.seed_psi, initial_psi)
    f = GutzwillerState.coherent(geometry, psi0, n_max).amplitudes
    ptr, idx = neighbor_table(geometry)
    mu_eff = np.ascontiguousarray(effective_mu(params, geometry), dtype=float)
    psi = np.empty(M, dtype=np.complex128)
    phi = np.empty(M, dtype=np.complex128)
    hf = np.empty_like(f)
    history = []
    residual = np.inf
    for it in range(1, opt.max_iter + 1):
        # apply_minus_i_h gives -i h f, so h f = i * out
        _kernels.derivative(f, mu_eff, params.J, params.U, ptr, idx, psi, phi, hf)
        old = psi.copy()
        f = f - opt.imaginary_dt * (1j * hf)
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        _kernels.order_parameter(f, psi)
        residual = float(np.max(np.abs(psi - old)))
        history.append(residual)
        if residual < opt.tol:
            break
    else:
        raise ConvergenceError("imaginary-time flow not converged", residual=residual)
    state = GutzwillerState(f, geometry)
    if return_info:
        return GroundStateResult(state, it, residual, np.array(history))
    return state


def target_atom_number(
    params: HubbardParams,
    N_target: float,
    geometry,
    n_max: int = 7,
    options: GroundStateOptions | None = None,
    rel_tol: float = 1e-3,
    max_steps: int = 60,
    return_info: bool = False,
):
    """Find mu with sum_i <n_i> = N_target on the monotone N(mu).

    The bracket is narrowed by safeguarded linear interpolation (never closer
    than 5% of the bracket to either end), which keeps bisection's guarantee.

    Returns ``(mu, state)``; with ``return_info`` a third element lists the
    scanned (mu, N) pairs.
    """
    M = geometry.n_sites
    if not 0 < N_target <= n_max * M:
        raise ValueError(f"N_target={N_target} not achievable with n_max={n_max} on {M} sites")
    opt = options or GroundStateOptions()
    table = []
    last = {"psi": None}

    def count(mu):
        seed = last["psi"]
        if seed is not None and np.max(np.abs(seed)) < 1e-6:
            seed = None
        st = ground_state(params.with_mu(mu), geometry, n_max, opt, initial_psi=seed)
        op = compute_order_parameter(st)
        last["psi"] = op.psi
        N = op.total_atoms
        table.append((mu, N))
        log.debug("mu=%.10g N=%.6g", mu, N)
        return N, st

    # below -zJ - max trap the vacuum is the ground state
    z = 6
    lo = -z * params.J - 1e-3 * params.U
    n_lo = 0.0
    hi = max(0.5 * params.U, 1e-3)  # inside the n=1 plateau, off the n=1/n=2 tie at mu = U
    n_hi, st_hi = count(hi)
    expand = 0
    while n_hi < N_target:
        lo, n_lo = hi, n_hi
        hi = 2 * hi + params.U
        n_hi, st_hi = count(hi)
        expand += 1
        if expand > 40:
            raise ConvergenceError("could not bracket N_target", table=table)
    best = (hi, st_hi, n_hi)
    if abs(n_hi - N_target) <= rel_tol * N_target:
        return (hi, st_hi, table) if return_info else (hi, st_hi)
    for _ in range(max_steps):
        w = hi - lo
        frac = (N_target - n_lo) / (n_hi - n_lo) if n_hi > n_lo else 0.5
        mid = lo + w * min(max(frac, 0.05), 0.95)
        n_mid, st = count(mid)
        if abs(n_mid - N_target) < abs(best[2] - N_target):
            best = (mid, st, n_mid)
        if abs(n_mid - N_target) <= rel_tol * N_target:
            return (mid, st, table) if return_info else (mid, st)
        if n_mid < N_target:
            lo, n_lo = mid, n_mid
        else:
            hi, n_hi = mid, n_mid
    raise ConvergenceError(
        f"search did not reach N_target={N_target} (closest N={best[2]:.6g})", table=table
    )


MAGIC = b"GZKZ"
VERSION = 1


def save_checkpoint(path, state: GutzwillerState, metadata: dict | None = None):
    """Binary amplitudes (complex64, little endian, site-major) plus a JSON sidecar."""
    path = Path(path)
    L = getattr(state.geometry, "side_length", 0)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, L, state.n_max))
        fh.write(state.amplitudes.astype("<c8").tobytes())
    meta = dict(metadata or {})
    meta.setdefault("n_sites", state.n_sites)
    meta.setdefault("periodic", bool(getattr(state.geometry, "periodic", False)))
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, default=float))
    return path


def load_checkpoint(path, renormalize=True):
    """Return ``(state, metadata)`` from :func:`save_checkpoint` output."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a Gutzwiller checkpoint")
    version, L, n_max = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    geometry = LatticeGeometry(L, periodic=meta.get("periodic", False))
    amps = np.frombuffer(raw[16:], dtype="<c8").astype(np.complex128)
    amps = amps.reshape(geometry.n_sites, n_max + 1)
    if renormalize:
        amps /= np.linalg.norm(amps, axis=1, keepdims=True)
    return GutzwillerState(amps, geometry), meta
