"""Pure-numpy twin of the compiled RK4 kernels (same algorithm, same API)."""

import numpy as np


def _lind(H, sign, gamma, X):
    C = H @ X
    return -1j * sign * (C - C.conj().T) - gamma * X


def _comm(H, X):
    C = H @ X
    return -1j * (C - C.conj().T)


def _rk4_slice(H, sign, gamma, X, h, nsub):
    for _ in range(nsub):
        k1 = _lind(H, sign, gamma, X)
        k2 = _lind(H, sign, gamma, X + 0.5 * h * k1)
        k3 = _lind(H, sign, gamma, X + 0.5 * h * k2)
        k4 = _lind(H, sign, gamma, X + h * k3)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return X


def _rk4_tangent(H, Hu, gamma, R, E, h, nsub):
    for _ in range(nsub):
        r1 = _lind(H, 1.0, gamma, R)
        e1 = _lind(H, 1.0, gamma, E) + _comm(Hu, R)
        tr, te = R + 0.5 * h * r1, E + 0.5 * h * e1
        r2 = _lind(H, 1.0, gamma, tr)
        e2 = _lind(H, 1.0, gamma, te) + _comm(Hu, tr)
        tr, te = R + 0.5 * h * r2, E + 0.5 * h * e2
        r3 = _lind(H, 1.0, gamma, tr)
        e3 = _lind(H, 1.0, gamma, te) + _comm(Hu, tr)
        tr, te = R + h * r3, E + h * e3
        r4 = _lind(H, 1.0, gamma, tr)
        e4 = _lind(H, 1.0, gamma, te) + _comm(Hu, tr)
        R = R + (h / 6.0) * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
        E = E + (h / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
    return R, E


def evolve(rho0, H0, Hp, Hs, gamma, up, us, dt, nsub, store=False):
    h = dt / nsub
    X = np.array(rho0, dtype=complex)
    out = [X] if store else None
    for a, b in zip(up, us):
        X = _rk4_slice(H0 + a * Hp + b * Hs, 1.0, gamma, X, h, nsub)
        if store:
            out.append(X)
    return np.array(out) if store else X


def fidelity_gradient(rho0, P, H0, Hp, Hs, gamma, up, us, dt, nsub):
    h = dt / nsub
    states = evolve(rho0, H0, Hp, Hs, gamma, up, us, dt, nsub, store=True)
    N = len(up)
    F = np.vdot(P, states[N]).real
    gp = np.zeros(N)
    gs = np.zeros(N)
    lam = np.array(P, dtype=complex)
    zero = np.zeros_like(lam)
    for j in range(N - 1, -1, -1):
        H = H0 + up[j] * Hp + us[j] * Hs
        _, E = _rk4_tangent(H, Hp, gamma, states[j], zero, h, nsub)
        gp[j] = np.vdot(lam, E).real
        _, E = _rk4_tangent(H, Hs, gamma, states[j], zero, h, nsub)
        gs[j] = np.vdot(lam, E).real
        lam = _rk4_slice(H, -1.0, gamma, lam, h, nsub)
    return F, gp, gs
