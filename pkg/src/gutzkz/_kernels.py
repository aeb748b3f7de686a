"""Compiled per-site loops shared by the ground-state solver and the integrator.

Neighbors are passed as a CSR table (``ptr``, ``idx``) so the same loops serve
cubic lattices and small hand-built graphs. All loops run in a fixed order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def order_parameter(f, psi):
    M, d = f.shape
    sq = np.sqrt(np.arange(d) * 1.0)
    for i in range(M):
        acc = 0j
        for n in range(d - 1):
            acc += sq[n + 1] * np.conj(f[i, n]) * f[i, n + 1]
        psi[i] = acc


@njit(cache=True)
def neighbor_sum(psi, ptr, idx, out):
    for i in range(psi.shape[0]):
        acc = 0j
        for k in range(ptr[i], ptr[i + 1]):
            acc += psi[idx[k]]
        out[i] = acc


@njit(cache=True)
def apply_minus_i_h(f, phi, mu_eff, J, U, out):
    """out = -i h_mf f site by site (the constant J|psi|^2 term dropped)."""
    M, d = f.shape
    sq = np.sqrt(np.arange(d) * 1.0)
    onsite = np.empty(d)
    for n in range(d):
        onsite[n] = 0.5 * U * n * (n - 1)
    for i in range(M):
        a = J * np.conj(phi[i])
        b = J * phi[i]
        m = mu_eff[i]
        for n in range(d):
            hf = (onsite[n] - m * n) * f[i, n]
            if n + 1 < d:
                hf -= a * sq[n + 1] * f[i, n + 1]
            if n > 0:
                hf -= b * sq[n] * f[i, n - 1]
            out[i, n] = complex(hf.imag, -hf.real)


@njit(cache=True)
def derivative(f, mu_eff, J, U, ptr, idx, psi, phi, out):
    order_parameter(f, psi)
    neighbor_sum(psi, ptr, idx, phi)
    apply_minus_i_h(f, phi, mu_eff, J, U, out)


@njit(cache=True)
def rk4_step(f, dt, Js, Us, mu_eff, ptr, idx, psi, phi, k, tmp, acc):
    """Advance f in place by one classical RK4 step.

    Js/Us hold the couplings at t, t + dt/2 and t + dt.
    """
    M, d = f.shape
    derivative(f, mu_eff, Js[0], Us[0], ptr, idx, psi, phi, k)
    for i in range(M):
        for n in range(d):
            acc[i, n] = k[i, n]
            tmp[i, n] = f[i, n] + 0.5 * dt * k[i, n]
    derivative(tmp, mu_eff, Js[1], Us[1], ptr, idx, psi, phi, k)
    for i in range(M):
        for n in range(d):
            acc[i, n] += 2.0 * k[i, n]
            tmp[i, n] = f[i, n] + 0.5 * dt * k[i, n]
    derivative(tmp, mu_eff, Js[1], Us[1], ptr, idx, psi, phi, k)
    for i in range(M):
        for n in range(d):
            acc[i, n] += 2.0 * k[i, n]
            tmp[i, n] = f[i, n] + dt * k[i, n]
    derivative(tmp, mu_eff, Js[2], Us[2], ptr, idx, psi, phi, k)
    for i in range(M):
        for n in range(d):
            f[i, n] += dt / 6.0 * (acc[i, n] + k[i, n])


@njit(cache=True)
def renormalize(f):
    """Normalize every site; return the largest |norm^2 - 1| seen."""
    M, d = f.shape
    worst = 0.0
    for i in range(M):
        s = 0.0
        for n in range(d):
            s += f[i, n].real ** 2 + f[i, n].imag ** 2
        dev = abs(s - 1.0)
        if dev > worst:
            worst = dev
        inv = 1.0 / np.sqrt(s)
        for n in range(d):
            f[i, n] *= inv
    return worst


@njit(cache=True)
def _sturm_count(diag, off, x):
    # number of eigenvalues of the symmetric tridiagonal matrix below x
    count = 0
    q = diag[0] - x
    if q < 0:
        count += 1
    for n in range(1, diag.shape[0]):
        if q == 0.0:
            q = 1e-300
        q = diag[n] - x - off[n - 1] ** 2 / q
        if q < 0:
            count += 1
    return count


@njit(cache=True)
def _lowest_eigpair(diag, off, g0, g, c, prev):
    """Lowest eigenpair of a symmetric tridiagonal matrix with off <= 0.

    A coarse Sturm bisection brackets the eigenvalue, then inverse iteration
    shifted to the lower bracket end (so the shifted matrix stays positive
    definite and the unpivoted Thomas solve is stable) converges at rate
    width / gap per step. Returns the eigenvalue (Rayleigh quotient); g is
    overwritten with the unit eigenvector, positive by Perron-Frobenius;
    c and prev are work arrays of the same length.
    """
    d = diag.shape[0]
    lo = diag[0]
    hi = diag[0]
    for n in range(d):
        r = 0.0
        if n > 0:
            r += abs(off[n - 1])
        if n < d - 1:
            r += abs(off[n])
        lo = min(lo, diag[n] - r)
        hi = max(hi, diag[n] + r)
    scale = max(abs(lo), abs(hi), 1e-300)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sturm_count(diag, off, mid) >= 1:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-7 * scale:
            break
    shift = lo - 1e-12 * scale - 1e-300
    for n in range(d):
        g[n] = abs(g0[n]) + 1e-3
    for _ in range(12):
        for n in range(d):
            prev[n] = g[n]
        # Thomas solve of (T - shift) x = g, x overwrites g
        b = diag[0] - shift
        g[0] = g[0] / b
        for n in range(1, d):
            c[n - 1] = off[n - 1] / b
            b = diag[n] - shift - off[n - 1] * c[n - 1]
            g[n] = (g[n] - off[n - 1] * g[n - 1]) / b
        for n in range(d - 2, -1, -1):
            g[n] -= c[n] * g[n + 1]
        s = 0.0
        for n in range(d):
            s += g[n] * g[n]
        s = np.sqrt(s)
        change = 0.0
        for n in range(d):
            g[n] /= s
            change = max(change, abs(g[n] - prev[n]))
        if change < 1e-13:
            break
    lam = 0.0
    for n in range(d):
        lam += diag[n] * g[n] * g[n]
        if n + 1 < d:
            lam += 2.0 * off[n] * g[n] * g[n + 1]
    return lam


@njit(cache=True)
def ground_sweep(f_prev, phi, mu_eff, J, U, f_out, psi_out, degenerate_tol):
    """Replace each site by the lowest eigenvector of its mean-field matrix.

    With Phi = |Phi| e^{i theta} the gauge f_n = e^{i n theta} g_n makes the
    matrix real with off-diagonals -J |Phi| sqrt(n+1). For Phi = 0 the matrix
    is diagonal and exact ties are broken by overlap with the previous state.
    """
    M, d = f_prev.shape
    diag = np.empty(d)
    off = np.empty(d - 1)
    g = np.empty(d)
    g0 = np.empty(d)
    work_c = np.empty(d)
    work_p = np.empty(d)
    for i in range(M):
        for n in range(d):
            diag[n] = 0.5 * U * n * (n - 1) - mu_eff[i] * n
        amp = abs(phi[i])
        t = J * amp
        if t == 0.0:
            best = 0
            for n in range(1, d):
                if diag[n] < diag[best]:
                    best = n
            chosen = best
            w = abs(f_prev[i, best])
            for n in range(d):
                if n != best and diag[n] - diag[best] <= degenerate_tol and abs(f_prev[i, n]) > w:
                    chosen = n
                    w = abs(f_prev[i, n])
            for n in range(d):
                f_out[i, n] = 0j
            f_out[i, chosen] = 1.0 + 0j
            psi_out[i] = 0j
            continue
        for n in range(d - 1):
            off[n] = -t * np.sqrt(n + 1.0)
        for n in range(d):
            g0[n] = abs(f_prev[i, n])
        _lowest_eigpair(diag, off, g0, g, work_c, work_p)
        ph = phi[i] / amp
        rot = 1.0 + 0j
        acc = 0.0
        for n in range(d):
            f_out[i, n] = g[n] * rot
            if n + 1 < d:
                acc += np.sqrt(n + 1.0) * g[n] * g[n + 1]
            rot *= ph
        psi_out[i] = acc * ph


@njit(cache=True)
def rk4_run(f, n_steps, dt, Js, Us, mu_eff, ptr, idx, renorm):
    """Take n_steps RK4 steps; Js/Us have 2*n_steps + 1 entries on the half-step grid.

    Returns the largest per-site |norm^2 - 1| seen after any step.
    """
    M, d = f.shape
    psi = np.empty(M, dtype=np.complex128)
    phi = np.empty(M, dtype=np.complex128)
    k = np.empty_like(f)
    tmp = np.empty_like(f)
    acc = np.empty_like(f)
    worst = 0.0
    for s in range(n_steps):
        rk4_step(f, dt, Js[2 * s : 2 * s + 3], Us[2 * s : 2 * s + 3], mu_eff, ptr, idx, psi, phi, k, tmp, acc)
        if renorm:
            dev = renormalize(f)
        else:
            dev = 0.0
            for i in range(M):
                t = 0.0
                for n in range(d):
                    t += f[i, n].real ** 2 + f[i, n].imag ** 2
                dev = max(dev, abs(t - 1.0))
        worst = max(worst, dev)
    return worst
