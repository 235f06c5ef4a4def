# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 kernels for the dephasing master equation (8x8 operators).

Operators are stored as separate real and imaginary 8x8 blocks so the inner
products vectorize.  All operands are Hermitian, which gives
``X H = (H X)^dagger``: one matrix product per commutator.  The generator is

    L(X) = -i s [H, X] - gamma * X        (elementwise gamma)

with ``s = +1`` forward and ``s = -1`` for the adjoint sweep.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()

cdef enum:
    N = 8
    NN = 64


cdef struct Op:
    double re[NN]
    double im[NN]


cdef inline void _load(Op* dst, const double complex[:, ::1] src) noexcept nogil:
    cdef int a, b
    for a in range(N):
        for b in range(N):
            dst.re[a * N + b] = src[a, b].real
            dst.im[a * N + b] = src[a, b].imag


cdef inline void _store(double complex[:, ::1] dst, const Op* src) noexcept nogil:
    cdef int a, b
    for a in range(N):
        for b in range(N):
            dst[a, b] = src.re[a * N + b] + 1j * src.im[a * N + b]


cdef inline void _hprod(const Op* H, const Op* X, Op* C) noexcept nogil:
    cdef int a, b, c
    cdef double hr, hi
    memset(C, 0, sizeof(Op))
    for a in range(N):
        for c in range(N):
            hr = H.re[a * N + c]
            hi = H.im[a * N + c]
            for b in range(N):
                C.re[a * N + b] += hr * X.re[c * N + b] - hi * X.im[c * N + b]
                C.im[a * N + b] += hr * X.im[c * N + b] + hi * X.re[c * N + b]


cdef inline void _comm_into(const Op* C, double sign, Op* out, bint accumulate) noexcept nogil:
    # out (+)= -i*sign*(C - C^dagger)
    cdef int a, b, ab, ba
    cdef double dr, di
    for a in range(N):
        for b in range(N):
            ab = a * N + b
            ba = b * N + a
            dr = C.re[ab] - C.re[ba]
            di = C.im[ab] + C.im[ba]
            if accumulate:
                out.re[ab] += sign * di
                out.im[ab] -= sign * dr
            else:
                out.re[ab] = sign * di
                out.im[ab] = -sign * dr


cdef inline void _lind(const Op* H, double sign, const double* gamma,
                       const Op* X, Op* out, Op* work) noexcept nogil:
    cdef int k
    _hprod(H, X, work)
    _comm_into(work, sign, out, False)
    for k in range(NN):
        out.re[k] -= gamma[k] * X.re[k]
        out.im[k] -= gamma[k] * X.im[k]


cdef inline void _axpy(Op* dst, const Op* X, double h, const Op* K) noexcept nogil:
    cdef int k
    for k in range(NN):
        dst.re[k] = X.re[k] + h * K.re[k]
        dst.im[k] = X.im[k] + h * K.im[k]


cdef inline void _rk4_combine(Op* X, double h6, const Op* k1, const Op* k2,
                              const Op* k3, const Op* k4) noexcept nogil:
    cdef int k
    for k in range(NN):
        X.re[k] += h6 * (k1.re[k] + 2.0 * k2.re[k] + 2.0 * k3.re[k] + k4.re[k])
        X.im[k] += h6 * (k1.im[k] + 2.0 * k2.im[k] + 2.0 * k3.im[k] + k4.im[k])


cdef inline void _slice_h(const Op* H0, const Op* Hp, const Op* Hs,
                          double up, double us, Op* H) noexcept nogil:
    cdef int k
    for k in range(NN):
        H.re[k] = H0.re[k] + up * Hp.re[k] + us * Hs.re[k]
        H.im[k] = H0.im[k] + up * Hp.im[k] + us * Hs.im[k]


cdef void _rk4_slice(const Op* H, double sign, const double* gamma,
                     Op* X, double h, int nsub) noexcept nogil:
    cdef Op k1, k2, k3, k4, tmp, work
    cdef int s
    for s in range(nsub):
        _lind(H, sign, gamma, X, &k1, &work)
        _axpy(&tmp, X, 0.5 * h, &k1)
        _lind(H, sign, gamma, &tmp, &k2, &work)
        _axpy(&tmp, X, 0.5 * h, &k2)
        _lind(H, sign, gamma, &tmp, &k3, &work)
        _axpy(&tmp, X, h, &k3)
        _lind(H, sign, gamma, &tmp, &k4, &work)
        _rk4_combine(X, h / 6.0, &k1, &k2, &k3, &k4)


cdef inline void _tangent_stage(const Op* H, const Op* Hu, const double* gamma,
                                const Op* R, const Op* E, Op* kr, Op* ke,
                                Op* work) noexcept nogil:
    _lind(H, 1.0, gamma, R, kr, work)
    _lind(H, 1.0, gamma, E, ke, work)
    _hprod(Hu, R, work)
    _comm_into(work, 1.0, ke, True)


cdef void _rk4_tangent(const Op* H, const Op* Hu, const double* gamma,
                       Op* R, Op* E, double h, int nsub) noexcept nogil:
    # RK4 on the pair (R, E) with dR = L R, dE = L E - i[Hu, R]
    cdef Op r1, r2, r3, r4, e1, e2, e3, e4, tr, te, work
    cdef int s
    for s in range(nsub):
        _tangent_stage(H, Hu, gamma, R, E, &r1, &e1, &work)
        _axpy(&tr, R, 0.5 * h, &r1)
        _axpy(&te, E, 0.5 * h, &e1)
        _tangent_stage(H, Hu, gamma, &tr, &te, &r2, &e2, &work)
        _axpy(&tr, R, 0.5 * h, &r2)
        _axpy(&te, E, 0.5 * h, &e2)
        _tangent_stage(H, Hu, gamma, &tr, &te, &r3, &e3, &work)
        _axpy(&tr, R, h, &r3)
        _axpy(&te, E, h, &e3)
        _tangent_stage(H, Hu, gamma, &tr, &te, &r4, &e4, &work)
        _rk4_combine(R, h / 6.0, &r1, &r2, &r3, &r4)
        _rk4_combine(E, h / 6.0, &e1, &e2, &e3, &e4)


cdef inline double _inner(const Op* A, const Op* B) noexcept nogil:
    # Re Tr(A^dagger B)
    cdef int k
    cdef double acc = 0.0
    for k in range(NN):
        acc += A.re[k] * B.re[k] + A.im[k] * B.im[k]
    return acc


def _check(rho0):
    if rho0.shape[0] != N or rho0.shape[1] != N:
        raise ValueError("compiled kernels handle 8x8 operators only")


def evolve(double complex[:, ::1] rho0, double complex[:, ::1] H0,
           double complex[:, ::1] Hp, double complex[:, ::1] Hs,
           double[:, ::1] gamma, double[::1] up, double[::1] us,
           double dt, int nsub, bint store=False):
    """Propagate ``rho0`` through ``len(up)`` constant slices of width ``dt``.

    Returns the final state, or every slice-boundary state when ``store``.
    """
    _check(rho0)
    cdef int nslice = up.shape[0]
    cdef double h = dt / nsub
    cdef int j
    cdef Op X, H, oH0, oHp, oHs
    out = np.empty((nslice + 1 if store else 1, N, N), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    with nogil:
        _load(&X, rho0)
        _load(&oH0, H0)
        _load(&oHp, Hp)
        _load(&oHs, Hs)
        if store:
            _store(o[0], &X)
        for j in range(nslice):
            _slice_h(&oH0, &oHp, &oHs, up[j], us[j], &H)
            _rk4_slice(&H, 1.0, &gamma[0, 0], &X, h, nsub)
            if store:
                _store(o[j + 1], &X)
        if not store:
            _store(o[0], &X)
    return out if store else out[0]


def fidelity_gradient(double complex[:, ::1] rho0, double complex[:, ::1] P,
                      double complex[:, ::1] H0, double complex[:, ::1] Hp,
                      double complex[:, ::1] Hs, double[:, ::1] gamma,
                      double[::1] up, double[::1] us, double dt, int nsub):
    """``Tr(P rho(T))`` and its exact gradient w.r.t. every slice amplitude.

    The gradient is that of the discrete RK4 map itself: a forward sweep
    stores slice-boundary states, the adjoint is swept backwards with the
    conjugate generator, and each slice derivative comes from a tangent-linear
    RK4 pass contracted with the adjoint.
    """
    _check(rho0)
    cdef int nslice = up.shape[0]
    cdef double h = dt / nsub
    cdef int j
    cdef double F
    cdef Op lam, H, R, E, oH0, oHp, oHs
    states = evolve(rho0, H0, Hp, Hs, gamma, up, us, dt, nsub, True)
    cdef double complex[:, :, ::1] st = states
    gp = np.zeros(nslice)
    gs = np.zeros(nslice)
    cdef double[::1] gpv = gp
    cdef double[::1] gsv = gs
    with nogil:
        _load(&oH0, H0)
        _load(&oHp, Hp)
        _load(&oHs, Hs)
        _load(&lam, P)
        _load(&R, st[nslice])
        F = _inner(&lam, &R)
        for j in range(nslice - 1, -1, -1):
            _slice_h(&oH0, &oHp, &oHs, up[j], us[j], &H)
            _load(&R, st[j])
            memset(&E, 0, sizeof(Op))
            _rk4_tangent(&H, &oHp, &gamma[0, 0], &R, &E, h, nsub)
            gpv[j] = _inner(&lam, &E)
            _load(&R, st[j])
            memset(&E, 0, sizeof(Op))
            _rk4_tangent(&H, &oHs, &gamma[0, 0], &R, &E, h, nsub)
            gsv[j] = _inner(&lam, &E)
            _rk4_slice(&H, -1.0, &gamma[0, 0], &lam, h, nsub)
    return F, gp, gs
