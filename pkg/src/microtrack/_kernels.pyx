# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py`` for the reference versions."""
import time

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport abs as iabs

cnp.import_array()

OPTIMAL, INFEASIBLE, LIMIT = 0, 1, 2


cdef inline int _next_axis(long long[3] n, long long[3] ad) noexcept nogil:
    cdef int i, best = -1
    for i in range(3):
        if n[i] < ad[i] and (
            best < 0 or (2 * n[i] + 1) * ad[best] < (2 * n[best] + 1) * ad[i]
        ):
            best = i
    return best


def line_voxels(a, b):
    cdef long long[3] ad, n, cur, step
    cdef int i, best
    cdef long long num, den
    for i in range(3):
        ad[i] = iabs(<long long>b[i] - <long long>a[i])
        step[i] = 1 if <long long>b[i] > <long long>a[i] else -1
        cur[i] = <long long>a[i]
        n[i] = 0
    out = [(cur[0], cur[1], cur[2])]
    while True:
        best = _next_axis(n, ad)
        if best < 0:
            break
        num = 2 * n[best] + 1
        den = ad[best]
        for i in range(3):
            if n[i] < ad[i] and (2 * n[i] + 1) * den == num * ad[i]:
                cur[i] += step[i]
                n[i] += 1
        out.append((cur[0], cur[1], cur[2]))
    return out


def evid_sum(const float[:, :, ::1] data, const long long[:, ::1] a, const long long[:, ::1] b):
    cdef Py_ssize_t e, ne = a.shape[0]
    cdef long long[3] ad, n, cur, step
    cdef int i, best
    cdef long long num, den
    cdef double s, v
    out = np.zeros(ne, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for e in range(ne):
            for i in range(3):
                ad[i] = iabs(b[e, i] - a[e, i])
                step[i] = 1 if b[e, i] > a[e, i] else -1
                cur[i] = a[e, i]
                n[i] = 0
            v = data[cur[0], cur[1], cur[2]]
            s = 1.0 if v > 1.0 else (0.0 if v < 0.0 else v)
            while True:
                best = _next_axis(n, ad)
                if best < 0:
                    break
                num = 2 * n[best] + 1
                den = ad[best]
                for i in range(3):
                    if n[i] < ad[i] and (2 * n[i] + 1) * den == num * ad[i]:
                        cur[i] += step[i]
                        n[i] += 1
                v = data[cur[0], cur[1], cur[2]]
                s += 1.0 if v > 1.0 else (0.0 if v < 0.0 else v)
            o[e] = s
    return out


def nms_suppress(voxels, window):
    cdef long long[:, ::1] vox = np.ascontiguousarray(voxels, dtype=np.int64).reshape(-1, 3)
    cdef Py_ssize_t nv = vox.shape[0], idx
    keep = np.zeros(nv, dtype=bool)
    if nv == 0:
        return keep
    cdef cnp.uint8_t[::1] kp = keep.view(np.uint8)
    lo_arr = np.asarray(vox).min(axis=0)
    shape = np.asarray(vox).max(axis=0) - lo_arr + 1
    mask_arr = np.zeros(tuple(shape), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] mask = mask_arr
    cdef long long lo0 = lo_arr[0], lo1 = lo_arr[1], lo2 = lo_arr[2]
    cdef long long s0 = shape[0], s1 = shape[1], s2 = shape[2]
    cdef long long r0 = window[0] - 1, r1 = window[1] - 1, r2 = window[2] - 1
    cdef long long z, y, x, zz, yy, xx
    cdef bint hit
    with nogil:
        for idx in range(nv):
            z = vox[idx, 0] - lo0
            y = vox[idx, 1] - lo1
            x = vox[idx, 2] - lo2
            hit = False
            zz = max(z - r0, 0)
            while zz <= min(z + r0, s0 - 1) and not hit:
                yy = max(y - r1, 0)
                while yy <= min(y + r1, s1 - 1) and not hit:
                    xx = max(x - r2, 0)
                    while xx <= min(x + r2, s2 - 1):
                        if mask[zz, yy, xx]:
                            hit = True
                            break
                        xx += 1
                    yy += 1
                zz += 1
            if not hit:
                kp[idx] = 1
                mask[z, y, x] = 1
    return keep


cdef struct Search:
    Py_ssize_t n, m, ngroups
    double *cost
    long long *row_ptr
    long long *row_idx
    long long *row_coef
    long long *rhs
    cnp.uint8_t *is_eq
    long long *col_ptr
    long long *col_row
    long long *col_coef
    long long *group
    signed char *val
    long long *amin
    long long *amax
    long long *trail
    Py_ssize_t ntrail
    long long *queue
    Py_ssize_t qhead, qtail
    cnp.uint8_t *inq
    double *gmin
    double obj


cdef inline void _push(Search *s, long long r) noexcept nogil:
    if not s.inq[r]:
        s.inq[r] = 1
        s.queue[s.qtail % s.m] = r
        s.qtail += 1


cdef void _fix(Search *s, long long v, int x) noexcept nogil:
    cdef long long p, r, a
    s.val[v] = x
    s.trail[s.ntrail] = v
    s.ntrail += 1
    if x:
        s.obj += s.cost[v]
    for p in range(s.col_ptr[v], s.col_ptr[v + 1]):
        r = s.col_row[p]
        a = s.col_coef[p]
        if x:
            if a > 0:
                s.amin[r] += a
            else:
                s.amax[r] += a
        elif a > 0:
            s.amax[r] -= a
        else:
            s.amin[r] -= a
        _push(s, r)


cdef void _undo_to(Search *s, Py_ssize_t k) noexcept nogil:
    cdef long long v, p, r, a
    cdef int x
    while s.ntrail > k:
        s.ntrail -= 1
        v = s.trail[s.ntrail]
        x = s.val[v]
        s.val[v] = -1
        if x:
            s.obj -= s.cost[v]
        for p in range(s.col_ptr[v], s.col_ptr[v + 1]):
            r = s.col_row[p]
            a = s.col_coef[p]
            if x:
                if a > 0:
                    s.amin[r] -= a
                else:
                    s.amax[r] -= a
            elif a > 0:
                s.amax[r] += a
            else:
                s.amin[r] += a


cdef bint _propagate(Search *s) noexcept nogil:
    cdef bint ok = True
    cdef long long r, b, p, v, a
    while s.qhead < s.qtail:
        r = s.queue[s.qhead % s.m]
        s.qhead += 1
        s.inq[r] = 0
        if not ok:
            continue
        b = s.rhs[r]
        if s.amin[r] > b or (s.is_eq[r] and s.amax[r] < b):
            ok = False
            continue
        for p in range(s.row_ptr[r], s.row_ptr[r + 1]):
            v = s.row_idx[p]
            if s.val[v] != -1:
                continue
            a = s.row_coef[p]
            if a > 0:
                if s.amin[r] + a > b:
                    _fix(s, v, 0)
                elif s.is_eq[r] and s.amax[r] - a < b:
                    _fix(s, v, 1)
            else:
                if s.amin[r] - a > b:
                    _fix(s, v, 1)
                elif s.is_eq[r] and s.amax[r] + a < b:
                    _fix(s, v, 0)
    s.qhead = 0
    s.qtail = 0
    return ok


cdef double _lower_bound(Search *s) noexcept nogil:
    cdef double lb = s.obj, c
    cdef Py_ssize_t g, v
    for g in range(s.ngroups):
        s.gmin[g] = 0.0
    for v in range(s.n):
        c = s.cost[v]
        if s.val[v] == -1 and c < 0.0:
            g = s.group[v]
            if g < 0:
                lb += c
            elif c < s.gmin[g]:
                s.gmin[g] = c
    for g in range(s.ngroups):
        lb += s.gmin[g]
    return lb


def bnb_search(
    cost,
    row_ptr,
    row_idx,
    row_coef,
    rhs,
    is_eq,
    col_ptr,
    col_row,
    col_coef,
    group,
    Py_ssize_t ngroups,
    order,
    double time_limit,
    long long node_limit,
    double cutoff=np.inf,
):
    cdef double[::1] c_cost = np.ascontiguousarray(cost, dtype=np.float64)
    cdef long long[::1] c_row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
    cdef long long[::1] c_row_idx = np.ascontiguousarray(row_idx, dtype=np.int64)
    cdef long long[::1] c_row_coef = np.ascontiguousarray(row_coef, dtype=np.int64)
    cdef long long[::1] c_rhs = np.ascontiguousarray(rhs, dtype=np.int64)
    cdef cnp.uint8_t[::1] c_is_eq = np.ascontiguousarray(is_eq, dtype=np.uint8)
    cdef long long[::1] c_col_ptr = np.ascontiguousarray(col_ptr, dtype=np.int64)
    cdef long long[::1] c_col_row = np.ascontiguousarray(col_row, dtype=np.int64)
    cdef long long[::1] c_col_coef = np.ascontiguousarray(col_coef, dtype=np.int64)
    cdef long long[::1] c_group = np.ascontiguousarray(group, dtype=np.int64)
    cdef long long[::1] c_order = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n = c_cost.shape[0], m = c_rhs.shape[0]

    # m + 1 keeps every buffer non-empty for memoryview access
    val_arr = np.full(n + 1, -1, dtype=np.int8)
    amin_arr = np.zeros(m + 1, dtype=np.int64)
    amax_arr = np.zeros(m + 1, dtype=np.int64)
    trail_arr = np.zeros(n + 1, dtype=np.int64)
    queue_arr = np.zeros(m + 1, dtype=np.int64)
    inq_arr = np.zeros(m + 1, dtype=np.uint8)
    gmin_arr = np.zeros(ngroups + 1, dtype=np.float64)
    stack_arr = np.zeros((n + 1, 4), dtype=np.int64)
    cdef signed char[::1] val = val_arr
    cdef long long[::1] amin = amin_arr
    cdef long long[::1] amax = amax_arr
    cdef long long[::1] trail = trail_arr
    cdef long long[::1] queue = queue_arr
    cdef cnp.uint8_t[::1] inq = inq_arr
    cdef double[::1] gmin = gmin_arr
    cdef long long[:, ::1] stack = stack_arr

    # dummy one-element views for empty inputs
    dummy_i = np.zeros(1, dtype=np.int64)
    dummy_u = np.zeros(1, dtype=np.uint8)
    dummy_d = np.zeros(1, dtype=np.float64)
    cdef long long[::1] d_i = dummy_i
    cdef cnp.uint8_t[::1] d_u = dummy_u
    cdef double[::1] d_d = dummy_d

    cdef Search s
    s.n = n
    s.m = m if m > 0 else 1
    s.ngroups = ngroups
    s.cost = &c_cost[0] if n > 0 else &d_d[0]
    s.row_ptr = &c_row_ptr[0]
    s.row_idx = &c_row_idx[0] if c_row_idx.shape[0] > 0 else &d_i[0]
    s.row_coef = &c_row_coef[0] if c_row_coef.shape[0] > 0 else &d_i[0]
    s.rhs = &c_rhs[0] if m > 0 else &d_i[0]
    s.is_eq = &c_is_eq[0] if m > 0 else &d_u[0]
    s.col_ptr = &c_col_ptr[0]
    s.col_row = &c_col_row[0] if c_col_row.shape[0] > 0 else &d_i[0]
    s.col_coef = &c_col_coef[0] if c_col_coef.shape[0] > 0 else &d_i[0]
    s.group = &c_group[0] if n > 0 else &d_i[0]
    s.val = &val[0]
    s.amin = &amin[0]
    s.amax = &amax[0]
    s.trail = &trail[0]
    s.ntrail = 0
    s.queue = &queue[0]
    s.qhead = 0
    s.qtail = 0
    s.inq = &inq[0]
    s.gmin = &gmin[0]
    s.obj = 0.0

    cdef Py_ssize_t r, p, v, pos = 0, depth = 0
    cdef long long nodes = 0
    cdef int status = OPTIMAL, x
    cdef bint advanced, improved
    cdef double best = cutoff
    cdef bint have_best = best < np.inf
    best_x = None

    for r in range(m):
        for p in range(c_row_ptr[r], c_row_ptr[r + 1]):
            if c_row_coef[p] < 0:
                amin[r] += c_row_coef[p]
            else:
                amax[r] += c_row_coef[p]
    for r in range(m):
        _push(&s, r)
    if not _propagate(&s):
        return None, float("inf"), INFEASIBLE, 0

    start = time.perf_counter()
    while True:
        nodes += 1
        if (node_limit > 0 and nodes > node_limit) or (
            time_limit > 0
            and (nodes & 1023) == 0
            and time.perf_counter() - start > time_limit
        ):
            status = LIMIT
            break
        improved = False
        with nogil:
            if not have_best or _lower_bound(&s) < best - 1e-9 * max(1.0, abs(best)):
                while pos < n and val[c_order[pos]] != -1:
                    pos += 1
                if pos == n:
                    best = s.obj
                    improved = True
                    have_best = True
                else:
                    stack[depth, 0] = s.ntrail
                    stack[depth, 1] = c_order[pos]
                    stack[depth, 2] = 1
                    stack[depth, 3] = pos
                    depth += 1
        if improved:
            best_x = val_arr[:n].copy()
        advanced = False
        with nogil:
            while depth > 0:
                _undo_to(&s, stack[depth - 1, 0])
                x = <int>stack[depth - 1, 2]
                if x == 2:
                    depth -= 1
                    continue
                stack[depth - 1, 2] = 0 if x == 1 else 2
                _fix(&s, stack[depth - 1, 1], x)
                if _propagate(&s):
                    pos = stack[depth - 1, 3] + 1
                    advanced = True
                    break
        if not advanced:
            break

    if best_x is None:
        return None, best, (INFEASIBLE if status == OPTIMAL else LIMIT), nodes
    return best_x.astype(np.int8), best, status, nodes
