"""Compiled RK4 stepping of the augmented truth/filter ODE.

Used for systems whose callables are numba functions with the signatures
``VEC_FN`` and ``MAT_FN``.  The algebra mirrors ``filter.augmented_rhs``.
State layout: ``[x, xhat, vec(P)?, vec(Q)?]``; ``mode`` 0 = covariance,
1 = information, 2 = both.
"""

import numpy as np
from numba import njit, types

vec = types.float64[::1]
mat = types.float64[:, ::1]
VEC_FN = vec(vec, vec)
MAT_FN = mat(vec, vec)
_vf = types.FunctionType(VEC_FN)
_mf = types.FunctionType(MAT_FN)


@njit(cache=True)
def _input_at(ut, uv, t):
    k = np.searchsorted(ut, t, side="right") - 1
    if k < 0:
        k = 0
    return uv[k].copy()


@njit(cache=True)
def _deriv(drift, output, jac_f, jac_h, z, u, n, mode, gamma):
    # explicit loops keep allocations low at desk-scale dimensions
    nn = n * n
    x = z[:n].copy()
    xh = z[n:2 * n].copy()
    out = np.empty_like(z)
    out[:n] = drift(x, u)
    innov = output(x, u) - output(xh, u)
    fh = drift(xh, u)
    a = jac_f(xh, u)
    c = jac_h(xh, u)
    p = c.shape[0]
    off = 2 * n
    pc = np.zeros((n, p))
    if mode != 1:
        for i in range(n):
            for q in range(p):
                acc = 0.0
                for r in range(n):
                    acc += z[off + i * n + r] * c[q, r]
                pc[i, q] = acc
    else:
        Q = z[off:off + nn].copy().reshape((n, n))
        pc[:, :] = np.linalg.solve(Q, np.ascontiguousarray(c.T))
    for i in range(n):
        acc = fh[i]
        for q in range(p):
            acc += pc[i, q] * innov[q]
        out[n + i] = acc
    if mode != 1:
        for i in range(n):
            for j in range(n):
                acc = gamma[i, j]
                for r in range(n):
                    acc += a[i, r] * z[off + r * n + j] + z[off + i * n + r] * a[j, r]
                for q in range(p):
                    acc -= pc[i, q] * pc[j, q]
                out[off + i * n + j] = acc
        off += nn
    if mode != 0:
        qg = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for r in range(n):
                    acc += z[off + i * n + r] * gamma[r, j]
                qg[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for r in range(n):
                    acc -= a[r, i] * z[off + r * n + j] + z[off + i * n + r] * a[r, j]
                    acc -= qg[i, r] * z[off + r * n + j]
                for q in range(p):
                    acc += c[q, i] * c[q, j]
                out[off + i * n + j] = acc
    return out


@njit(cache=True)
def _symmetrize(z, n, mode):
    nn = n * n
    off = 2 * n
    nblocks = 2 if mode == 2 else 1
    for _ in range(nblocks):
        M = z[off:off + nn].copy().reshape((n, n))
        S = 0.5 * (M + M.T)
        z[off:off + nn] = S.ravel()
        off += nn


@njit(cache=True)
def _step(drift, output, jac_f, jac_h, z, comp, t, dt, n, mode, gamma, ut, uv):
    # inputs are held over the whole step
    u0 = _input_at(ut, uv, t)
    k1 = _deriv(drift, output, jac_f, jac_h, z, u0, n, mode, gamma)
    k2 = _deriv(drift, output, jac_f, jac_h, z + (0.5 * dt) * k1, u0, n, mode, gamma)
    k3 = _deriv(drift, output, jac_f, jac_h, z + (0.5 * dt) * k2, u0, n, mode, gamma)
    k4 = _deriv(drift, output, jac_f, jac_h, z + dt * k3, u0, n, mode, gamma)
    # compensated (Kahan) update; comp carries the low-order part lost in z
    y = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4) - comp
    znew = z + y
    comp[:] = (znew - z) - y
    _symmetrize(znew, n, mode)
    return znew


@njit(types.Tuple((mat, types.int64))(_vf, _vf, _mf, _mf, vec, types.float64, types.int64, types.int64,
                                      types.int64, types.int64, mat, vec, mat, types.float64), cache=True)
def integrate(drift, output, jac_f, jac_h, z, dt, total, stride, n, mode, gamma, ut, uv, blowup):
    """Samples after every ``stride`` steps (and the last); status 0 ok, 1 blowup, 2 nonfinite."""
    nsamp = (total + stride - 1) // stride
    Z = np.empty((nsamp + 1, z.size))
    Z[0] = z
    count = 1
    status = 0
    comp = np.zeros_like(z)
    k = 0
    while k < total:
        chunk = min(stride, total - k)
        for j in range(chunk):
            z = _step(drift, output, jac_f, jac_h, z, comp, (k + j) * dt, dt, n, mode, gamma, ut, uv)
        k += chunk
        if not np.all(np.isfinite(z)):
            status = 2
            break
        Z[count] = z
        count += 1
        if np.sqrt(np.sum((z[:n] - z[n:2 * n]) ** 2)) > blowup:
            status = 1
            break
    return Z[:count].copy(), status
