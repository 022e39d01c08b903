"""Pure-Python implementations of the hot kernels.

These mirror ``_kernels.pyx`` statement for statement and are used when the
compiled extension is unavailable (or when ``MICROTRACK_PURE_PYTHON=1``).
"""
import time

import numpy as np

OPTIMAL, INFEASIBLE, LIMIT = 0, 1, 2


def line_voxels(a, b):
    """Voxels whose interior the segment between the centres of ``a`` and ``b`` crosses.

    Voxel boundaries sit at half-integer index coordinates, so the parameter of
    the n-th crossing along an axis with extent ``d`` is ``(2n + 1) / (2|d|)``.
    Crossing times are compared with integer cross-multiplication, which makes
    the traversal exact; simultaneous crossings (the segment passes through a
    voxel edge or corner) advance all tied axes in one step.
    """
    d = [int(b[i]) - int(a[i]) for i in range(3)]
    ad = [abs(x) for x in d]
    step = [1 if x > 0 else -1 for x in d]
    cur = [int(a[0]), int(a[1]), int(a[2])]
    n = [0, 0, 0]
    out = [tuple(cur)]
    while True:
        best = -1
        for i in range(3):
            if n[i] < ad[i] and (
                best < 0 or (2 * n[i] + 1) * ad[best] < (2 * n[best] + 1) * ad[i]
            ):
                best = i
        if best < 0:
            break
        num, den = 2 * n[best] + 1, ad[best]
        for i in range(3):
            if n[i] < ad[i] and (2 * n[i] + 1) * den == num * ad[i]:
                cur[i] += step[i]
                n[i] += 1
        out.append(tuple(cur))
    return out


def evid_sum(data, a, b):
    """Clamped score sums along the voxel lines ``a[e] -> b[e]`` for every row ``e``."""
    out = np.zeros(len(a), dtype=np.float64)
    for e in range(len(a)):
        s = 0.0
        for z, y, x in line_voxels(a[e], b[e]):
            v = float(data[z, y, x])
            if v > 1.0:
                v = 1.0
            elif v < 0.0:
                v = 0.0
            s += v
        out[e] = s
    return out


def nms_suppress(voxels, window):
    """Greedy neighbourhood suppression over voxels given in priority order.

    A voxel is kept iff no previously kept voxel lies within ``|delta| < window``
    on every axis.
    """
    keep = np.zeros(len(voxels), dtype=bool)
    if len(voxels) == 0:
        return keep
    voxels = np.asarray(voxels, dtype=np.int64)
    lo = voxels.min(axis=0)
    shape = voxels.max(axis=0) - lo + 1
    mask = np.zeros(tuple(shape), dtype=bool)
    r = [int(w) - 1 for w in window]
    for idx in range(len(voxels)):
        z, y, x = (int(c) for c in voxels[idx] - lo)
        if mask[
            max(z - r[0], 0) : z + r[0] + 1,
            max(y - r[1], 0) : y + r[1] + 1,
            max(x - r[2], 0) : x + r[2] + 1,
        ].any():
            continue
        keep[idx] = True
        mask[z, y, x] = True
    return keep


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
    ngroups,
    order,
    time_limit,
    node_limit,
    cutoff=float("inf"),
):
    """Depth-first branch and bound over binary variables.

    Constraints are ``sum(coef * x) <= rhs`` (or ``== rhs`` where ``is_eq``)
    with integer coefficients, given as CSR rows plus the transposed CSC
    columns. ``group[v] >= 0`` names a ``sum(x) <= 1`` row the variable belongs
    to; at most one free variable per group contributes to the lower bound.

    Only assignments with objective below ``cutoff`` are reported.
    Returns ``(x, objective, status, nodes)``; ``x`` is None when nothing
    below the cutoff was found.
    """
    cost = [float(c) for c in cost]
    row_ptr, row_idx, row_coef = list(row_ptr), list(row_idx), list(row_coef)
    col_ptr, col_row, col_coef = list(col_ptr), list(col_row), list(col_coef)
    rhs, is_eq, group, order = list(rhs), list(is_eq), list(group), list(order)
    n, m = len(cost), len(rhs)

    val = [-1] * n
    amin = [0] * m
    amax = [0] * m
    for r in range(m):
        for p in range(row_ptr[r], row_ptr[r + 1]):
            if row_coef[p] < 0:
                amin[r] += row_coef[p]
            else:
                amax[r] += row_coef[p]

    trail = []
    queue = []
    qhead = 0
    inq = [False] * m
    obj = 0.0

    def fix(v, x):
        nonlocal obj
        val[v] = x
        trail.append(v)
        if x:
            obj += cost[v]
        for p in range(col_ptr[v], col_ptr[v + 1]):
            r = col_row[p]
            a = col_coef[p]
            if x:
                if a > 0:
                    amin[r] += a
                else:
                    amax[r] += a
            elif a > 0:
                amax[r] -= a
            else:
                amin[r] -= a
            if not inq[r]:
                inq[r] = True
                queue.append(r)

    def undo_to(k):
        nonlocal obj
        while len(trail) > k:
            v = trail.pop()
            x = val[v]
            val[v] = -1
            if x:
                obj -= cost[v]
            for p in range(col_ptr[v], col_ptr[v + 1]):
                r = col_row[p]
                a = col_coef[p]
                if x:
                    if a > 0:
                        amin[r] -= a
                    else:
                        amax[r] -= a
                elif a > 0:
                    amax[r] += a
                else:
                    amin[r] += a

    def propagate():
        nonlocal qhead
        ok = True
        while qhead < len(queue):
            r = queue[qhead]
            qhead += 1
            inq[r] = False
            if not ok:
                continue
            b = rhs[r]
            if amin[r] > b or (is_eq[r] and amax[r] < b):
                ok = False
                continue
            for p in range(row_ptr[r], row_ptr[r + 1]):
                v = row_idx[p]
                if val[v] != -1:
                    continue
                a = row_coef[p]
                if a > 0:
                    if amin[r] + a > b:
                        fix(v, 0)
                    elif is_eq[r] and amax[r] - a < b:
                        fix(v, 1)
                else:
                    if amin[r] - a > b:
                        fix(v, 1)
                    elif is_eq[r] and amax[r] + a < b:
                        fix(v, 0)
        del queue[:]
        qhead = 0
        return ok

    gmin = [0.0] * ngroups

    def lower_bound():
        lb = obj
        for g in range(ngroups):
            gmin[g] = 0.0
        for v in range(n):
            c = cost[v]
            if val[v] == -1 and c < 0.0:
                g = group[v]
                if g < 0:
                    lb += c
                elif c < gmin[g]:
                    gmin[g] = c
        for g in range(ngroups):
            lb += gmin[g]
        return lb

    for r in range(m):
        inq[r] = True
        queue.append(r)
    if not propagate():
        return None, float("inf"), INFEASIBLE, 0

    start = time.perf_counter()
    best = float(cutoff)
    best_x = None
    stack = []
    nodes = 0
    pos = 0
    status = OPTIMAL
    while True:
        nodes += 1
        if (node_limit > 0 and nodes > node_limit) or (
            time_limit > 0
            and (nodes & 255) == 0
            and time.perf_counter() - start > time_limit
        ):
            status = LIMIT
            break
        if best == float("inf") or lower_bound() < best - 1e-9 * max(1.0, abs(best)):
            while pos < n and val[order[pos]] != -1:
                pos += 1
            if pos == n:
                best = obj
                best_x = list(val)
            else:
                stack.append([len(trail), order[pos], 1, pos])
        advanced = False
        while stack:
            frame = stack[-1]
            undo_to(frame[0])
            x = frame[2]
            if x == 2:
                stack.pop()
                continue
            frame[2] = 0 if x == 1 else 2
            fix(frame[1], x)
            if propagate():
                pos = frame[3] + 1
                advanced = True
                break
        if not advanced:
            break

    if best_x is None:
        return None, best, (INFEASIBLE if status == OPTIMAL else LIMIT), nodes
    return np.array(best_x, dtype=np.int8), best, status, nodes
