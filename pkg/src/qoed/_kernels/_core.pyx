# cython: language_level=3
"""Compiled kernels: propagator + Born-rule probabilities in tight loops."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs

cnp.import_array()

ctypedef double complex cplx

cdef extern from "complex.h" nogil:
    double complex cexp(double complex)
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)


cdef inline void _unitary(double F, double G, double dw, double t, int kind, double sign,
                          cplx* u) noexcept nogil:
    cdef double omega = sqrt(F * F + dw * dw)
    cdef double x = omega * t
    cdef double c = cos(x)
    cdef double s
    cdef cplx I = 1j
    cdef cplx ph, eg, v1
    cdef int k
    if fabs(x) < 1e-6:
        s = t * (1.0 - x * x / 6.0)
    else:
        s = sin(x) / omega
    for k in range(16):
        u[k] = 0
    u[0] = cexp(-I * G * t)
    u[15] = u[0]
    if kind == 1:
        ph = cexp(-I * (dw - G) * t)
        u[5] = ph * (c - I * dw * s)
        u[6] = -I * F * ph * s
        u[9] = u[6]
        u[10] = ph * (c + I * dw * s)
    else:
        eg = cexp(I * G * t)
        v1 = cexp(I * sign * dw * t)
        u[5] = v1 * eg * (c - I * sign * dw * s)
        u[6] = v1 * eg * (-I * F * s)
        u[9] = conj(v1) * eg * (-I * F * s)
        u[10] = conj(v1) * eg * (c + I * sign * dw * s)


cdef inline void _probs(const cplx* u, const cplx[:, :] rho, const cplx[:, :, :] povm,
                        double* out) noexcept nogil:
    # out[o] = Re Tr(M_o U rho U^dagger).  U is zero outside (0,0), (3,3) and
    # the {1,2} block, and both rho_t and M_o are Hermitian, so only the upper
    # triangle of rho_t is formed.
    cdef cplx tmp[16]
    cdef cplx rt[16]
    cdef double acc
    cdef int i, j, o
    for j in range(4):
        tmp[j] = u[0] * rho[0, j]
        tmp[4 + j] = u[5] * rho[1, j] + u[6] * rho[2, j]
        tmp[8 + j] = u[9] * rho[1, j] + u[10] * rho[2, j]
        tmp[12 + j] = u[15] * rho[3, j]
    for i in range(4):
        for j in range(i, 4):
            if j == 0:
                rt[4 * i + j] = tmp[4 * i] * conj(u[0])
            elif j == 1:
                rt[4 * i + j] = tmp[4 * i + 1] * conj(u[5]) + tmp[4 * i + 2] * conj(u[6])
            elif j == 2:
                rt[4 * i + j] = tmp[4 * i + 1] * conj(u[9]) + tmp[4 * i + 2] * conj(u[10])
            else:
                rt[4 * i + j] = tmp[4 * i + 3] * conj(u[15])
    for o in range(4):
        acc = 0.0
        for i in range(4):
            acc = acc + creal(povm[o, i, i]) * creal(rt[5 * i])
            for j in range(i + 1, 4):
                # M_ij rt_ji + M_ji rt_ij = 2 Re(M_ij conj(rt_ij))
                acc = acc + 2.0 * (creal(povm[o, i, j]) * creal(rt[4 * i + j])
                                   + cimag(povm[o, i, j]) * cimag(rt[4 * i + j]))
        out[o] = acc


def experiment_probs(double F, double G, double dw, int kind, double sign,
                     times, rho, povm):
    cdef const double[:] tv = np.ascontiguousarray(times, dtype=np.float64)
    cdef const cplx[:, :, :] rv = np.ascontiguousarray(rho, dtype=np.complex128)
    cdef const cplx[:, :, :, :] mv = np.ascontiguousarray(povm, dtype=np.complex128)
    cdef Py_ssize_t k, n = tv.shape[0]
    out = np.empty((n, 4), dtype=np.float64)
    cdef double[:, :] ov = out
    cdef cplx u[16]
    with nogil:
        for k in range(n):
            _unitary(F, G, dw, tv[k], kind, sign, u)
            _probs(u, rv[k], mv[k], &ov[k, 0])
    return out


cdef inline void _unitary_split(double F, double dw, double t, int kind, double sign, cplx eg,
                                cplx* u) noexcept nogil:
    # as _unitary, with eg = exp(iGt) supplied by the caller
    cdef double omega = sqrt(F * F + dw * dw)
    cdef double x = omega * t
    cdef double c = cos(x)
    cdef double s
    cdef cplx I = 1j
    cdef cplx ph, v1
    if fabs(x) < 1e-6:
        s = t * (1.0 - x * x / 6.0)
    else:
        s = sin(x) / omega
    u[0] = conj(eg)
    u[15] = u[0]
    if kind == 1:
        ph = cexp(-I * dw * t) * eg
        u[5] = ph * (c - I * dw * s)
        u[6] = -I * F * ph * s
        u[9] = u[6]
        u[10] = ph * (c + I * dw * s)
    else:
        v1 = cexp(I * sign * dw * t)
        u[5] = v1 * eg * (c - I * sign * dw * s)
        u[6] = v1 * eg * (-I * F * s)
        u[9] = conj(v1) * eg * (-I * F * s)
        u[10] = conj(v1) * eg * (c + I * sign * dw * s)


def grid_probs(f_axis, g_axis, double dw, int kind, double sign, times, rho, povm):
    cdef const double[:] fv = np.ascontiguousarray(f_axis, dtype=np.float64)
    cdef const double[:] gv = np.ascontiguousarray(g_axis, dtype=np.float64)
    cdef const double[:] tv = np.ascontiguousarray(times, dtype=np.float64)
    cdef const cplx[:, :, :] rv = np.ascontiguousarray(rho, dtype=np.complex128)
    cdef const cplx[:, :, :, :] mv = np.ascontiguousarray(povm, dtype=np.complex128)
    cdef Py_ssize_t a, b, k
    cdef Py_ssize_t nf = fv.shape[0], ng = gv.shape[0], n = tv.shape[0]
    out = np.empty((nf, ng, n, 4), dtype=np.float64)
    cdef double[:, :, :, :] ov = out
    # exp(iGt) for every (G, t); the F-dependent part is cheap to redo
    cdef const cplx[:, :] egv = np.exp(1j * np.multiply.outer(np.asarray(gv), np.asarray(tv)))
    cdef cplx u[16]
    cdef int z
    for z in range(16):
        u[z] = 0
    with nogil:
        for a in range(nf):
            for b in range(ng):
                for k in range(n):
                    _unitary_split(fv[a], dw, tv[k], kind, sign, egv[b, k], u)
                    _probs(u, rv[k], mv[k], &ov[a, b, k, 0])
    return out
