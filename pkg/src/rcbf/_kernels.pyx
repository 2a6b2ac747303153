# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of the pure-numpy QP solver in rcbf.qp.

Same dual active-set iteration, same tie-breaking (first maximal violation,
first blocking multiplier, ties enter rather than drop), same tolerances, so
the two backends agree to rounding error. Fixed-capacity stack arrays keep
the hot path allocation-free; callers certify results via rcbf.qp.kkt_check.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    MAX_N = 8
    MAX_M = 24

cdef double FEAS_TOL = 1e-9
cdef double DEP_TOL = 1e-11
cdef int MAX_ITER = 64


cdef int _gram_solve(double* GA, int k, int n, double* rhs, double* out) noexcept nogil:
    """Solve (GA GA') x = rhs for k active rows (row-major GA, k x n).

    Gaussian elimination with partial pivoting on the k x k Gram matrix.
    Returns 0 on success, 1 if a pivot vanished (singular working set).
    """
    cdef double M[MAX_N * (MAX_N + 1)]
    cdef int i, j, c, piv
    cdef double acc, best, tmp, f
    for i in range(k):
        for j in range(k):
            acc = 0.0
            for c in range(n):
                acc += GA[i * n + c] * GA[j * n + c]
            M[i * (k + 1) + j] = acc
        M[i * (k + 1) + k] = rhs[i]
    for c in range(k):
        piv = c
        best = M[c * (k + 1) + c]
        if best < 0:
            best = -best
        for i in range(c + 1, k):
            tmp = M[i * (k + 1) + c]
            if tmp < 0:
                tmp = -tmp
            if tmp > best:
                best = tmp
                piv = i
        if best == 0.0:
            return 1
        if piv != c:
            for j in range(k + 1):
                tmp = M[c * (k + 1) + j]
                M[c * (k + 1) + j] = M[piv * (k + 1) + j]
                M[piv * (k + 1) + j] = tmp
        for i in range(c + 1, k):
            f = M[i * (k + 1) + c] / M[c * (k + 1) + c]
            for j in range(c, k + 1):
                M[i * (k + 1) + j] -= f * M[c * (k + 1) + j]
    for c in range(k - 1, -1, -1):
        acc = M[c * (k + 1) + k]
        for j in range(c + 1, k):
            acc -= M[c * (k + 1) + j] * out[j]
        out[c] = acc / M[c * (k + 1) + c]
    return 0


def solve_qp(cnp.ndarray[cnp.float64_t, ndim=1] q,
             cnp.ndarray[cnp.float64_t, ndim=2] G,
             cnp.ndarray[cnp.float64_t, ndim=1] h):
    """Dual active-set solve of min 0.5||z||^2 + q'z s.t. Gz <= h.

    Returns (z, active_rows, multipliers, code, iterations) with code
    0 = converged (certify via KKT), 1 = infeasible (active_rows carries the
    certificate rows, entering row last), 2 = iteration cap hit.
    """
    cdef int n = q.shape[0]
    cdef int m = G.shape[0]
    if n > MAX_N or m > MAX_M:
        raise ValueError("problem exceeds compiled kernel capacity")

    cdef double z[MAX_N]
    cdef double Gm[MAX_M * MAX_N]
    cdef double hv[MAX_M]
    cdef double GA[(MAX_N + 1) * MAX_N]   # active rows (independent, <= n)
    cdef int active[MAX_N + 1]
    cdef double lam[MAX_N + 1]
    cdef double r[MAX_N + 1]
    cdef double rsol[MAX_N + 1]
    cdef double d[MAX_N]
    cdef double nplus[MAX_N]
    cdef int nact = 0
    cdef int iters = 0
    cdef int i, j, k, p, jblock, code
    cdef double viol, best, cur, denom, scale, t_full, t_block, t, tb, theta, acc
    cdef bint is_active, drop

    for j in range(n):
        z[j] = -q[j]
    for i in range(m):
        hv[i] = h[i]
        for j in range(n):
            Gm[i * n + j] = G[i, j]

    code = 2
    while iters < MAX_ITER:
        iters += 1
        p = -1
        best = FEAS_TOL
        for i in range(m):
            is_active = False
            for k in range(nact):
                if active[k] == i:
                    is_active = True
                    break
            if is_active:
                continue
            viol = -hv[i]
            for j in range(n):
                viol += Gm[i * n + j] * z[j]
            if viol > best:
                best = viol
                p = i
        if p < 0:
            code = 0
            break

        for j in range(n):
            nplus[j] = Gm[p * n + j]
        scale = 0.0
        for j in range(n):
            scale += nplus[j] * nplus[j]
        if scale < 1.0:
            scale = 1.0
        theta = 0.0

        while True:
            if nact > 0:
                for k in range(nact):
                    acc = 0.0
                    for j in range(n):
                        acc += GA[k * n + j] * nplus[j]
                    r[k] = acc
                if _gram_solve(GA, nact, n, r, rsol) == 0:
                    for k in range(nact):
                        r[k] = rsol[k]
                else:
                    # exactly singular working set: no compensation; the
                    # KKT certificate downstream reports any damage
                    for k in range(nact):
                        r[k] = 0.0
                for j in range(n):
                    acc = 0.0
                    for k in range(nact):
                        acc += GA[k * n + j] * r[k]
                    d[j] = -(nplus[j] - acc)
            else:
                for j in range(n):
                    d[j] = -nplus[j]

            denom = 0.0
            for j in range(n):
                denom -= nplus[j] * d[j]
            cur = -hv[p]
            for j in range(n):
                cur += nplus[j] * z[j]
            if denom > DEP_TOL * scale:
                t_full = cur / denom
            else:
                t_full = -1.0           # sentinel: step unbounded
            t_block = -1.0
            jblock = -1
            for k in range(nact):
                if r[k] > DEP_TOL:
                    tb = lam[k] / r[k]
                    if t_block < 0 or tb < t_block:
                        t_block = tb
                        jblock = k

            if t_full < 0 and t_block < 0:
                # Farkas certificate: working set + entering row.
                z_out = np.empty(n)
                for j in range(n):
                    z_out[j] = z[j]
                act_out = np.empty(nact + 1, dtype=np.int64)
                lam_out = np.empty(nact + 1)
                for k in range(nact):
                    act_out[k] = active[k]
                    lam_out[k] = lam[k]
                act_out[nact] = p
                lam_out[nact] = 0.0
                return z_out, act_out, lam_out, 1, iters

            drop = (t_block >= 0) and (t_full < 0 or t_block < t_full)
            t = t_block if drop else t_full

            for j in range(n):
                z[j] += t * d[j]
            for k in range(nact):
                lam[k] -= t * r[k]
            theta += t

            if drop:
                for k in range(jblock, nact - 1):
                    active[k] = active[k + 1]
                    lam[k] = lam[k + 1]
                    for j in range(n):
                        GA[k * n + j] = GA[(k + 1) * n + j]
                nact -= 1
                continue
            active[nact] = p
            lam[nact] = theta
            for j in range(n):
                GA[nact * n + j] = nplus[j]
            nact += 1
            break

    z_out = np.empty(n)
    for j in range(n):
        z_out[j] = z[j]
    act_out = np.empty(nact, dtype=np.int64)
    lam_out = np.empty(nact)
    for k in range(nact):
        act_out[k] = active[k]
        lam_out[k] = lam[k]
    return z_out, act_out, lam_out, code, iters
