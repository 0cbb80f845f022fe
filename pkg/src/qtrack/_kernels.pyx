# cython: language_level=3
"""Compiled propagation kernels.

Same contracts as ``_kernels_py``; small dense complex matrices are handled
with explicit loops so the per-step cost is dominated by arithmetic rather
than numpy dispatch.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs

cnp.import_array()

ctypedef double complex cplx


cdef inline void _matmul(const cplx[:, ::1] a, const cplx[:, ::1] b,
                         cplx[:, ::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef cplx acc
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc


cdef inline cplx _expi(double x) noexcept nogil:
    return cos(x) + 1j * sin(x)


def step_unitaries(double[:, ::1] energies, cplx[:, :, ::1] vecs, double dt):
    cdef Py_ssize_t m = energies.shape[0]
    cdef Py_ssize_t n = energies.shape[1]
    out_arr = np.empty((m, n, n), dtype=np.complex128)
    cdef cplx[:, :, ::1] out = out_arr
    cdef Py_ssize_t j, a, c, b
    cdef cplx acc
    cdef cplx ph[64]
    if n > 64:
        raise ValueError("compiled kernels support dimension <= 64")
    with nogil:
        for j in range(m):
            for b in range(n):
                ph[b] = _expi(-energies[j, b] * dt)
            for a in range(n):
                for c in range(n):
                    acc = 0
                    for b in range(n):
                        acc = acc + vecs[j, a, b] * ph[b] * vecs[j, c, b].conjugate()
                    out[j, a, c] = acc
    return out_arr


def chain(cplx[:, :, ::1] steps):
    cdef Py_ssize_t m = steps.shape[0]
    cdef Py_ssize_t n = steps.shape[1]
    out_arr = np.zeros((m + 1, n, n), dtype=np.complex128)
    cdef cplx[:, :, ::1] out = out_arr
    cdef Py_ssize_t j, i
    for i in range(n):
        out[0, i, i] = 1.0
    with nogil:
        for j in range(m):
            _matmul(steps[j], out[j], out[j + 1], n)
    return out_arr


def conjugate_series(cplx[:, :, ::1] props, cplx[:, ::1] op):
    cdef Py_ssize_t m = props.shape[0]
    cdef Py_ssize_t n = props.shape[1]
    out_arr = np.empty((m, n, n), dtype=np.complex128)
    cdef cplx[:, :, ::1] out = out_arr
    cdef cplx[:, ::1] tmp = np.empty((n, n), dtype=np.complex128)
    cdef Py_ssize_t j, a, b, c
    cdef cplx acc
    with nogil:
        for j in range(m):
            _matmul(op, props[j], tmp, n)
            for a in range(n):
                for c in range(n):
                    acc = 0
                    for b in range(n):
                        acc = acc + props[j, b, a].conjugate() * tmp[b, c]
                    out[j, a, c] = acc
    return out_arr


def cell_weights(double[:, ::1] energies, double dt):
    cdef Py_ssize_t m = energies.shape[0]
    cdef Py_ssize_t n = energies.shape[1]
    out_arr = np.empty((m, n, n), dtype=np.complex128)
    cdef cplx[:, :, ::1] out = out_arr
    cdef Py_ssize_t j, a, b
    cdef double x
    with nogil:
        for j in range(m):
            for a in range(n):
                for b in range(n):
                    x = (energies[j, a] - energies[j, b]) * dt
                    if fabs(x) < 1e-4:
                        out[j, a, b] = 1.0 + 0.5j * x - x * x / 6.0
                    else:
                        out[j, a, b] = (_expi(x) - 1.0) / (1j * x)
    return out_arr


def cell_average_series(cplx[:, :, ::1] props, double[:, ::1] energies,
                        cplx[:, :, ::1] vecs, cplx[:, ::1] op, double dt):
    cdef Py_ssize_t m = energies.shape[0]
    cdef Py_ssize_t n = energies.shape[1]
    cdef cplx[:, :, ::1] phi = cell_weights(energies, dt)
    out_arr = np.empty((m, n, n), dtype=np.complex128)
    cdef cplx[:, :, ::1] out = out_arr
    cdef cplx[:, ::1] t1 = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] t2 = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] w = np.empty((n, n), dtype=np.complex128)
    cdef Py_ssize_t j, a, b, c
    cdef cplx acc
    with nogil:
        for j in range(m):
            # local = (V^dag op V) * phi
            _matmul(op, vecs[j], t1, n)
            for a in range(n):
                for c in range(n):
                    acc = 0
                    for b in range(n):
                        acc = acc + vecs[j, b, a].conjugate() * t1[b, c]
                    t2[a, c] = acc * phi[j, a, c]
            # w = V local V^dag U_j
            for a in range(n):
                for c in range(n):
                    acc = 0
                    for b in range(n):
                        acc = acc + t2[a, b] * vecs[j, c, b].conjugate()
                    t1[a, c] = acc
            _matmul(vecs[j], t1, w, n)
            _matmul(w, props[j], t1, n)
            for a in range(n):
                for c in range(n):
                    acc = 0
                    for b in range(n):
                        acc = acc + props[j, b, a].conjugate() * t1[b, c]
                    out[j, a, c] = acc
    return out_arr
