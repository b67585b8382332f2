# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: PSD square root, node split and the fused branch walker.

Same contract as ``_kernel_py``. Internally every matrix is column-major so
it can go straight to LAPACK/BLAS; inputs and outputs are C-ordered numpy.
"""

import numpy as np

from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport zgemm, zgemv
from scipy.linalg.cython_lapack cimport zheevd

from .errors import NotPsdError

ctypedef double complex zc

ENERGY, TRACE, RESIDUAL = 0, 1, 2
STOP_DEPTH, STOP_RESIDUAL, STOP_DEAD = 0, 1, 2

# eigenvalues this small carry no relative precision (subnormal range)
cdef double _TINY = 2.2250738585072014e-308 / 2.220446049250313e-16
cdef int _ERR_NOT_PSD = -1
cdef int _ERR_LAPACK = -2
cdef int _ERR_ALLOC = -3


cdef struct Work:
    int d
    int lwork
    int lrwork
    int liwork
    zc* work
    double* rwork
    int* iwork
    zc* tmp
    double* w


cdef int _work_alloc(Work* wk, int d) noexcept nogil:
    wk.d = d
    wk.lwork = 2 * d + d * d
    wk.lrwork = 1 + 5 * d + 2 * d * d
    wk.liwork = 3 + 5 * d
    wk.work = <zc*>malloc(wk.lwork * sizeof(zc))
    wk.rwork = <double*>malloc(wk.lrwork * sizeof(double))
    wk.iwork = <int*>malloc(wk.liwork * sizeof(int))
    wk.tmp = <zc*>malloc(d * d * sizeof(zc))
    wk.w = <double*>malloc(d * sizeof(double))
    if (wk.work == NULL or wk.rwork == NULL or wk.iwork == NULL
            or wk.tmp == NULL or wk.w == NULL):
        return _ERR_ALLOC
    return 0


cdef void _work_free(Work* wk) noexcept nogil:
    free(wk.work)
    free(wk.rwork)
    free(wk.iwork)
    free(wk.tmp)
    free(wk.w)


cdef inline double _abs2(zc z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef void _herm(int d, zc* a) noexcept nogil:
    cdef int r, c
    cdef zc v
    for c in range(d):
        a[c + c * d] = a[c + c * d].real
        for r in range(c + 1, d):
            v = 0.5 * (a[r + c * d] + a[c + r * d].conjugate())
            a[r + c * d] = v
            a[c + r * d] = v.conjugate()


cdef void _gemm(char* ta, char* tb, int d, zc* a, zc* b, zc* c) noexcept nogil:
    cdef zc one = 1.0
    cdef zc zero = 0.0
    zgemm(ta, tb, &d, &d, &d, &one, a, &d, b, &d, &zero, c, &d)


cdef void _gemv(int d, zc* a, zc* x, zc* y) noexcept nogil:
    cdef zc one = 1.0
    cdef zc zero = 0.0
    cdef int inc = 1
    zgemv(b"N", &d, &d, &one, a, &d, x, &inc, &zero, y, &inc)


cdef int _psd_sqrt(Work* wk, zc* a, zc* s, double tol,
                   double floor) noexcept nogil:
    # a is overwritten with eigenvectors; on _ERR_NOT_PSD, wk.w[0] holds the
    # offending eigenvalue
    cdef int d = wk.d
    cdef int info = 0
    cdef int i, k
    cdef double scale, root
    zheevd(b"V", b"L", &d, a, &d, wk.w, wk.work, &wk.lwork, wk.rwork,
           &wk.lrwork, wk.iwork, &wk.liwork, &info)
    if info != 0:
        return _ERR_LAPACK
    scale = fabs(wk.w[0])
    if fabs(wk.w[d - 1]) > scale:
        scale = fabs(wk.w[d - 1])
    if wk.w[0] < -(tol * scale + _TINY):
        return _ERR_NOT_PSD
    for i in range(d):
        if wk.w[i] <= floor * scale:
            wk.w[i] = 0.0
        root = sqrt(wk.w[i])
        for k in range(d):
            wk.tmp[k + i * d] = a[k + i * d] * root
    _gemm(b"N", b"C", d, wk.tmp, a, s)
    _herm(d, s)
    return 0


cdef double _quad(int d, zc* r, zc* x, zc* buf) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    _gemv(d, r, x, buf)
    for i in range(d):
        acc += (x[i].conjugate() * buf[i]).real
    return acc


cdef double _trace(int d, zc* r) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    for i in range(d):
        acc += r[i + i * d].real
    return acc


cdef double _fro2(int n, zc* a) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    for i in range(n):
        acc += _abs2(a[i])
    return acc


cdef int _draw(int m, double* probs, double u) noexcept nogil:
    cdef int j
    cdef int last = 0
    cdef double acc = 0.0
    for j in range(m):
        acc += probs[j]
        if probs[j] > 0.0:
            last = j
        if u < acc:
            return j
    return last


cdef void _to_fortran(int d, object src, zc* dst):
    cdef const zc[:, ::1] view = np.ascontiguousarray(src, dtype=np.complex128)
    cdef int r, c
    for c in range(d):
        for r in range(d):
            dst[r + c * d] = view[r, c]


cdef object _from_fortran(int d, zc* src):
    out = np.empty((d, d), dtype=np.complex128)
    cdef zc[:, ::1] view = out
    cdef int r, c
    for c in range(d):
        for r in range(d):
            view[r, c] = src[r + c * d]
    return out


def psd_sqrt(a, double tol, double floor=0.0):
    """Return ``(w, s)``: clamped eigenvalues of ``a`` and its principal root."""
    cdef int d = a.shape[0]
    cdef Work wk
    cdef zc* buf = <zc*>malloc(2 * d * d * sizeof(zc))
    cdef int status
    cdef int wstatus = _work_alloc(&wk, d)
    if buf == NULL or wstatus != 0:
        free(buf)
        _work_free(&wk)
        raise MemoryError()
    try:
        _to_fortran(d, a, buf)
        with nogil:
            status = _psd_sqrt(&wk, buf, buf + d * d, tol, floor)
        if status == _ERR_NOT_PSD:
            scale = max(abs(wk.w[0]), abs(wk.w[d - 1]))
            raise NotPsdError(
                f"eigenvalue {wk.w[0]:.3e} below -{tol:g} * {scale:.3e}"
            )
        if status != 0:
            raise RuntimeError(f"zheevd failed ({status})")
        w = np.array([wk.w[i] for i in range(d)])
        return w, _from_fortran(d, buf + d * d)
    finally:
        free(buf)
        _work_free(&wk)


def split_step(s, projs):
    """Children ``(residuals, dissipations)`` of a node with root ``s``."""
    cdef int m = projs.shape[0]
    cdef int d = projs.shape[1]
    cdef int j, i, n = d * d
    cdef zc* sf = <zc*>malloc(4 * n * sizeof(zc))
    if sf == NULL:
        raise MemoryError()
    cdef zc* pf = sf + n
    cdef zc* e = sf + 2 * n
    cdef zc* f = sf + 3 * n
    residuals = np.empty((m, d, d), dtype=np.complex128)
    dissipations = np.empty((m, d, d), dtype=np.complex128)
    try:
        _to_fortran(d, s, sf)
        for j in range(m):
            _to_fortran(d, projs[j], pf)
            _gemm(b"N", b"N", d, pf, sf, e)
            for i in range(n):
                f[i] = sf[i] - e[i]
            # pf is free again; reuse it for the products
            _gemm(b"C", b"N", d, f, f, pf)
            _herm(d, pf)
            residuals[j] = _from_fortran(d, pf)
            _gemm(b"C", b"N", d, e, e, pf)
            _herm(d, pf)
            dissipations[j] = _from_fortran(d, pf)
        return residuals, dissipations
    finally:
        free(sf)


cdef int _walk(Work* wk, int m, zc* projs, zc* x, int kind, double* u,
               int max_depth, double* q, double stop_scale, double dead_scale,
               double tol, double floor, int retain, zc* r, zc* a, zc* s, zc* es, zc* f,
               zc* y, zc* t, double* raw, double* probs, long long* letters,
               double* energies, double* traces, double* step_e,
               double* step_t, unsigned char* dead, zc* ops,
               int* n_out) noexcept nogil:
    cdef int d = wk.d
    cdef int n = d * d
    cdef int k, j, i, status, rr, cc
    cdef double total, scale
    cdef zc* e

    energies[0] = _quad(d, r, x, t)
    traces[0] = _trace(d, r)
    scale = traces[0] if kind == 1 else energies[0]
    n_out[0] = 0
    if scale <= stop_scale:
        return 1

    for k in range(max_depth):
        memcpy(a, r, n * sizeof(zc))
        status = _psd_sqrt(wk, a, s, tol, floor)
        if status != 0:
            n_out[0] = k
            return status
        if kind == 1:
            for j in range(m):
                _gemm(b"N", b"N", d, projs + j * n, s, es + j * n)
                raw[j] = _fro2(n, es + j * n)
        else:
            _gemv(d, s, x, y)
            for j in range(m):
                _gemv(d, projs + j * n, y, t)
                if kind == 2:
                    for i in range(d):
                        t[i] = y[i] - t[i]
                raw[j] = _fro2(d, t)
        total = 0.0
        for j in range(m):
            total += raw[j]
        if total > dead_scale:
            for j in range(m):
                probs[j] = raw[j] / total
        else:
            for j in range(m):
                probs[j] = q[j]
            dead[k] = 1
        j = _draw(m, probs, u[k])
        letters[k] = j + 1

        e = es + j * n
        if kind != 1:
            _gemm(b"N", b"N", d, projs + j * n, s, e)
        for i in range(n):
            f[i] = s[i] - e[i]
        _gemm(b"C", b"N", d, f, f, r)
        _herm(d, r)
        _gemv(d, e, x, t)
        step_e[k] = _fro2(d, t)
        step_t[k] = _fro2(n, e)
        if retain:
            _gemm(b"C", b"N", d, e, e, a)
            _herm(d, a)
            for cc in range(d):
                for rr in range(d):
                    ops[k * n + rr * d + cc] = a[rr + cc * d]
        energies[k + 1] = _quad(d, r, x, t)
        traces[k + 1] = _trace(d, r)
        scale = traces[k + 1] if kind == 1 else energies[k + 1]
        if scale <= stop_scale:
            n_out[0] = k + 1
            return 1

    n_out[0] = max_depth
    if dead[max_depth - 1]:
        return 2
    return 0


def walk_branch(r0, projs, x, int kind, uniforms, q, double stop_scale,
                double dead_scale, double psd_tol, double floor, bint retain):
    """Sample one branch; see ``_kernel_py.walk_branch`` for the contract."""
    cdef int m = projs.shape[0]
    cdef int d = projs.shape[1]
    cdef int n = d * d
    cdef int max_depth = len(uniforms)
    cdef int j, status, steps = 0
    cdef Work wk
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")

    cdef const double[::1] u_v = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef const double[::1] q_v = np.ascontiguousarray(q, dtype=np.float64)
    cdef const zc[::1] x_v = np.ascontiguousarray(x, dtype=np.complex128)
    letters = np.zeros(max_depth, dtype=np.int64)
    energies = np.zeros(max_depth + 1)
    traces = np.zeros(max_depth + 1)
    step_energies = np.zeros(max_depth)
    step_traces = np.zeros(max_depth)
    dead = np.zeros(max_depth, dtype=np.uint8)
    ops = np.zeros((max_depth if retain else 1, d, d), dtype=np.complex128)
    cdef long long[::1] letters_v = letters
    cdef double[::1] en_v = energies
    cdef double[::1] tr_v = traces
    cdef double[::1] se_v = step_energies
    cdef double[::1] st_v = step_traces
    cdef unsigned char[::1] dead_v = dead
    cdef zc[:, :, ::1] ops_v = ops

    # projs (m*n) | r | a | s | es (m*n) | f | y (d) | t (d)
    cdef zc* buf = <zc*>malloc((2 * m * n + 4 * n + 2 * d) * sizeof(zc))
    cdef double* dbuf = <double*>malloc(2 * m * sizeof(double))
    cdef int wstatus = _work_alloc(&wk, d)
    if buf == NULL or dbuf == NULL or wstatus != 0:
        free(buf)
        free(dbuf)
        _work_free(&wk)
        raise MemoryError()
    cdef zc* pf = buf
    cdef zc* r = buf + m * n
    cdef zc* a = r + n
    cdef zc* s = a + n
    cdef zc* es = s + n
    cdef zc* f = es + m * n
    cdef zc* y = f + n
    cdef zc* t = y + d
    try:
        for j in range(m):
            _to_fortran(d, projs[j], pf + j * n)
        _to_fortran(d, r0, r)
        with nogil:
            status = _walk(&wk, m, pf, <zc*>&x_v[0], kind, <double*>&u_v[0], max_depth,
                           <double*>&q_v[0], stop_scale, dead_scale, psd_tol, floor, retain,
                           r, a, s, es, f, y, t, dbuf, dbuf + m,
                           &letters_v[0], &en_v[0], &tr_v[0], &se_v[0],
                           &st_v[0], &dead_v[0], &ops_v[0, 0, 0], &steps)
        if status == _ERR_NOT_PSD:
            raise NotPsdError(f"residual lost positivity at step {steps + 1}")
        if status < 0:
            raise RuntimeError(f"kernel failure ({status})")
        if not retain:
            ops = ops[:0]
        return (steps, status, letters, energies, traces, step_energies,
                step_traces, dead, ops, _from_fortran(d, r))
    finally:
        free(buf)
        free(dbuf)
        _work_free(&wk)
