"""Pure numpy implementation of the hot kernels.

This module is the reference for ``_kernel_c``; both expose the same three
functions with identical semantics. All matrices are complex128 and Hermitian.
"""

import numpy as np

from .errors import NotPsdError

ENERGY, TRACE, RESIDUAL = 0, 1, 2
STOP_DEPTH, STOP_RESIDUAL, STOP_DEAD = 0, 1, 2
# eigenvalues this small carry no relative precision (subnormal range)
TINY = np.finfo(float).tiny / np.finfo(float).eps


def _herm(a):
    return 0.5 * (a + a.conj().T)


def psd_sqrt(a, tol, floor=0.0):
    """Return ``(w, s)``: clamped eigenvalues of ``a`` and its principal root.

    Eigenvalues below ``-tol * |a|`` (less a subnormal-scale slack) raise; the rest at or below
    ``floor * |a|`` are set to zero before taking roots.
    """
    a = np.ascontiguousarray(a, dtype=np.complex128)
    w, v = np.linalg.eigh(a)
    scale = max(abs(w[0]), abs(w[-1]))
    if w[0] < -(tol * scale + TINY):
        raise NotPsdError(
            f"eigenvalue {w[0]:.3e} below -{tol:g} * {scale:.3e}"
        )
    w = np.where(w <= floor * scale, 0.0, w)
    s = (v * np.sqrt(w)) @ v.conj().T
    return w, _herm(s)


def split_step(s, projs):
    """Children of a node whose residual has square root ``s``.

    Returns ``(residuals, dissipations)``, each of shape (m, d, d), with
    ``residuals[j] = (S - P_j S)^* (S - P_j S)`` and
    ``dissipations[j] = (P_j S)^* (P_j S)``.
    """
    m, d, _ = projs.shape
    residuals = np.empty((m, d, d), dtype=np.complex128)
    dissipations = np.empty((m, d, d), dtype=np.complex128)
    for j in range(m):
        e = projs[j] @ s
        f = s - e
        residuals[j] = _herm(f.conj().T @ f)
        dissipations[j] = _herm(e.conj().T @ e)
    return residuals, dissipations


def _draw(probs, u):
    acc = 0.0
    last = 0
    for j, p in enumerate(probs):
        acc += p
        if p > 0.0:
            last = j
        if u < acc:
            return j
    return last


def walk_branch(r0, projs, x, kind, uniforms, q, stop_scale, dead_scale,
                psd_tol, floor, retain):
    """Sample one branch, one uniform variate per letter.

    Returns ``(n, reason, letters, energies, traces, step_energies,
    step_traces, dead, ops, final)``; arrays are sized for ``len(uniforms)``
    steps and only the first ``n`` (``n + 1`` for level values) are valid.
    """
    max_depth = len(uniforms)
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    m, d, _ = projs.shape
    x = np.asarray(x, dtype=np.complex128)
    letters = np.zeros(max_depth, dtype=np.int64)
    energies = np.zeros(max_depth + 1)
    traces = np.zeros(max_depth + 1)
    step_energies = np.zeros(max_depth)
    step_traces = np.zeros(max_depth)
    dead = np.zeros(max_depth, dtype=np.uint8)
    ops = np.zeros((max_depth if retain else 0, d, d), dtype=np.complex128)

    r = np.array(r0, dtype=np.complex128)
    energies[0] = np.vdot(x, r @ x).real
    traces[0] = np.trace(r).real
    if (traces[0] if kind == TRACE else energies[0]) <= stop_scale:
        return 0, STOP_RESIDUAL, letters, energies, traces, step_energies, \
            step_traces, dead, ops, r

    raw = np.empty(m)
    for k in range(max_depth):
        _, s = psd_sqrt(r, psd_tol, floor)
        if kind == TRACE:
            es = projs @ s
            for j in range(m):
                raw[j] = np.sum(es[j].real ** 2 + es[j].imag ** 2)
        else:
            y = s @ x
            for j in range(m):
                t = projs[j] @ y
                if kind == RESIDUAL:
                    t = y - t
                raw[j] = np.sum(t.real ** 2 + t.imag ** 2)
        total = 0.0
        for j in range(m):
            total += raw[j]
        if total > dead_scale:
            probs = raw / total
        else:
            probs = q
            dead[k] = 1
        j = _draw(probs, uniforms[k])
        letters[k] = j + 1

        e = projs[j] @ s
        f = s - e
        r = _herm(f.conj().T @ f)
        ex = e @ x
        step_energies[k] = np.sum(ex.real ** 2 + ex.imag ** 2)
        step_traces[k] = np.sum(e.real ** 2 + e.imag ** 2)
        if retain:
            ops[k] = _herm(e.conj().T @ e)
        energies[k + 1] = np.vdot(x, r @ x).real
        traces[k + 1] = np.trace(r).real
        if (traces[k + 1] if kind == TRACE else energies[k + 1]) <= stop_scale:
            return k + 1, STOP_RESIDUAL, letters, energies, traces, \
                step_energies, step_traces, dead, ops, r

    reason = STOP_DEAD if dead[max_depth - 1] else STOP_DEPTH
    return max_depth, reason, letters, energies, traces, step_energies, \
        step_traces, dead, ops, r
