"""Exact solvers for :class:`~microtrack.ilp.IlpProblem`.

``solve_exact`` splits the problem into independent components (variables
linked through shared rows) and solves each with the built-in depth-first
branch and bound, with HiGHS, or with branch and bound falling back to HiGHS
when a node budget is exhausted (``backend="auto"``).
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse.csgraph import connected_components

from . import kernels

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
LIMIT = "bound-limit"

_STATUS = {kernels.OPTIMAL: OPTIMAL, kernels.INFEASIBLE: INFEASIBLE, kernels.LIMIT: LIMIT}


class SolverError(RuntimeError):
    pass


@dataclass
class Solution:
    x: np.ndarray
    objective_value: float
    status: str
    selected_triplets: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def selected(self):
        return np.flatnonzero(self.x)


def _components(problem):
    n, m = problem.n_vars, len(problem.constraints)
    if m == 0 or n == 0:
        return np.arange(n), n
    rows = np.concatenate([np.full(len(c.idx), r) for r, c in enumerate(problem.constraints)])
    cols = np.concatenate([c.idx for c in problem.constraints])
    # bipartite variable/row graph; rows are nodes n..n+m-1
    adj = sparse.coo_matrix((np.ones(len(rows)), (cols, n + rows)), shape=(n + m, n + m))
    ncomp, labels = connected_components(adj, directed=False)
    return labels[:n], ncomp


def _packing_groups(sub):
    """Assign each variable to the first ``sum(x) <= 1`` row containing it."""
    group = np.full(sub.n_vars, -1, dtype=np.int64)
    ngroups = 0
    for c in sub.constraints:
        if c.sense == "<=" and c.rhs == 1 and len(c.idx) > 1 and (c.coef == 1).all():
            free = c.idx[group[c.idx] < 0]
            if len(free) > 1:
                group[free] = ngroups
                ngroups += 1
    return group, ngroups


def _sub_problem(problem, var_idx, row_idx):
    from .ilp import IlpProblem

    remap = np.full(problem.n_vars, -1, dtype=np.int64)
    remap[var_idx] = np.arange(len(var_idx))
    sub = IlpProblem(
        [problem.names[v] for v in var_idx], problem.objective[var_idx], problem.kind, [], []
    )
    for r in row_idx:
        c = problem.constraints[r]
        sub.add(remap[c.idx], c.coef, c.sense, c.rhs, c.name)
    return sub


def _relaxed_minimiser(ct, group, ngroups):
    """Minimiser of ``ct @ x`` keeping only the packing groups: one most
    negative variable per group, every negative ungrouped variable."""
    x = (ct < 0) & (group < 0)
    if ngroups:
        members = np.flatnonzero(group >= 0)
        order = members[np.lexsort((ct[members], group[members]))]
        first = np.ones(len(order), dtype=bool)
        first[1:] = group[order][1:] != group[order][:-1]
        lead = order[first]
        x[lead[ct[lead] < 0]] = True
    return x


def lagrangian_multipliers(sub, group, ngroups, target, iterations=300):
    """Multipliers for the equality rows maximising the packing-group bound.

    For any feasible ``x``, ``c @ x == (c - A_eq.T @ lam) @ x + lam @ b_eq``,
    so searching on the reduced costs is exact for every ``lam``; good
    multipliers only tighten the bound. Polyak subgradient steps towards
    ``target`` (an upper bound). Returns ``(lam, bound)``.
    """
    eq = [c for c in sub.constraints if c.sense == "="]
    c = sub.objective
    if not eq:
        return np.zeros(0), None
    rows = np.concatenate([np.full(len(e.idx), r) for r, e in enumerate(eq)])
    cols = np.concatenate([e.idx for e in eq])
    vals = np.concatenate([e.coef for e in eq]).astype(float)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(eq), sub.n_vars))
    At = A.T.tocsr()
    b = np.array([e.rhs for e in eq], dtype=float)
    lam = np.zeros(len(eq))
    best_lam, best_bound = lam.copy(), None
    theta, stall = 1.0, 0
    for _ in range(iterations):
        ct = c - At @ lam
        x = _relaxed_minimiser(ct, group, ngroups)
        bound = float(lam @ b + ct[x].sum())
        if best_bound is None or bound > best_bound + 1e-12 * max(1.0, abs(best_bound)):
            best_lam, best_bound, stall = lam.copy(), bound, 0
        else:
            stall += 1
            if stall >= 15:
                theta *= 0.5
                stall = 0
        g = b - A @ x.astype(float)
        gg = float(g @ g)
        gap = target - bound
        if gg == 0 or theta < 1e-4 or gap <= 1e-9 * max(1.0, abs(target)):
            break
        lam = lam + theta * max(gap, 1e-6) / gg * g
    return best_lam, best_bound


def _solve_bnb(sub, time_limit, node_limit):
    t0 = time.perf_counter()
    group, ngroups = _packing_groups(sub)
    order = np.argsort(sub.objective, kind="stable")
    csr = sub.to_csr()
    n = sub.n_vars

    def remaining():
        if time_limit <= 0:
            return 0.0
        return max(time_limit - (time.perf_counter() - t0), 1e-3)

    # a short dive for an incumbent that anchors the multiplier search
    x0, _, st0, nodes = kernels.bnb_search(
        sub.objective, *csr, group, ngroups, order, remaining(), 20 * n + 100
    )
    if x0 is None and st0 == kernels.INFEASIBLE:
        return None, INFEASIBLE, nodes
    if x0 is not None:
        target = sub.objective_value(x0)
    else:
        target = 0.0
    lam, _ = lagrangian_multipliers(sub, group, ngroups, target)
    ct = sub.objective.copy()
    shift = 0.0
    if len(lam):
        eq = [c for c in sub.constraints if c.sense == "="]
        for mult, e in zip(lam, eq):
            ct[e.idx] -= mult * e.coef
            shift += mult * e.rhs
    cutoff = (target - shift) if x0 is not None else np.inf
    limit = max(node_limit - nodes, 1) if node_limit > 0 else 0
    # branch in ascending order of the reformulated coefficients
    order = np.argsort(ct, kind="stable")
    x, _, status, nd = kernels.bnb_search(
        ct, *csr, group, ngroups, order, remaining(), limit, cutoff
    )
    nodes += nd
    st = _STATUS[status]
    if x is None:
        if x0 is None:
            return None, (INFEASIBLE if st == OPTIMAL else LIMIT), nodes
        # nothing strictly better than the dive's incumbent
        return x0, (OPTIMAL if st in (OPTIMAL, INFEASIBLE) else LIMIT), nodes
    return x, st, nodes


def _solve_highs(sub, time_limit):
    n = sub.n_vars
    m = len(sub.constraints)
    options = {"disp": False, "mip_rel_gap": 0.0, "presolve": True}
    if time_limit > 0:
        options["time_limit"] = float(time_limit)
    constraints = ()
    if m:
        row_ptr, row_idx, row_coef, rhs, is_eq, *_ = sub.to_csr()
        A = sparse.csr_matrix((row_coef.astype(float), row_idx, row_ptr), shape=(m, n))
        lb = np.where(is_eq.astype(bool), rhs, -np.inf).astype(float)
        constraints = LinearConstraint(A, lb, rhs.astype(float))
    res = milp(
        sub.objective,
        integrality=np.ones(n),
        bounds=Bounds(0, 1),
        constraints=constraints,
        options=options,
    )
    if res.x is None:
        return None, (INFEASIBLE if res.status == 2 else LIMIT), 0
    x = np.rint(res.x).astype(np.int8)
    return x, (OPTIMAL if res.status == 0 else LIMIT), 0


def solve_exact(problem, time_limit=0.0, backend="auto", node_limit=200_000):
    """Provably optimal assignment, or status ``bound-limit`` on timeout.

    ``time_limit`` (seconds, 0 = none) is a global deadline across
    components. ``node_limit`` only applies to ``backend="auto"``, where it
    bounds the branch-and-bound effort per component before HiGHS takes over.
    """
    if backend not in ("auto", "bnb", "highs"):
        raise ValueError(f"unknown backend {backend!r}")
    t0 = time.perf_counter()
    n = problem.n_vars
    x = np.zeros(n, dtype=np.int8)
    status = OPTIMAL
    nodes = 0
    fallbacks = 0

    for r, c in enumerate(problem.constraints):
        if not len(c.idx) and (0 > c.rhs or (c.sense == "=" and c.rhs != 0)):
            return _finish(problem, None, INFEASIBLE, t0, backend, nodes, fallbacks)

    labels, ncomp = _components(problem)
    row_comp = np.array(
        [labels[c.idx[0]] if len(c.idx) else -1 for c in problem.constraints], dtype=np.int64
    )
    comp_vars = _group_indices(labels, ncomp)
    comp_rows = _group_indices(row_comp[row_comp >= 0], ncomp, np.flatnonzero(row_comp >= 0))

    for k in range(ncomp):
        var_idx = comp_vars[k]
        rows = comp_rows[k]
        if not len(rows):
            x[var_idx] = problem.objective[var_idx] < 0
            continue
        remaining = 0.0
        if time_limit > 0:
            remaining = time_limit - (time.perf_counter() - t0)
            if remaining <= 0:
                remaining = 1e-3
        sub = _sub_problem(problem, var_idx, rows)
        if backend == "highs":
            xs, st, nd = _solve_highs(sub, remaining)
        elif backend == "bnb":
            xs, st, nd = _solve_bnb(sub, remaining, 0)
        else:
            xs, st, nd = _solve_bnb(sub, remaining, node_limit)
            if st == LIMIT and not (time_limit > 0 and time.perf_counter() - t0 >= time_limit):
                fallbacks += 1
                remaining = time_limit - (time.perf_counter() - t0) if time_limit > 0 else 0.0
                xs, st, _ = _solve_highs(sub, max(remaining, 1e-3) if time_limit > 0 else 0.0)
        nodes += nd
        if st == INFEASIBLE:
            return _finish(problem, None, INFEASIBLE, t0, backend, nodes, fallbacks)
        if xs is None:
            zero = np.zeros(sub.n_vars, dtype=np.int8)
            if not sub.is_feasible(zero):
                return _finish(problem, None, LIMIT, t0, backend, nodes, fallbacks)
            xs = zero
        if not sub.is_feasible(xs):
            raise SolverError(f"solver returned an infeasible assignment for component {k}")
        x[var_idx] = xs
        if st == LIMIT:
            status = LIMIT
    return _finish(problem, x, status, t0, backend, nodes, fallbacks)


def _group_indices(labels, ngroups, values=None):
    values = np.arange(len(labels)) if values is None else np.asarray(values)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(ngroups + 1))
    return [values[order[bounds[k] : bounds[k + 1]]] for k in range(ngroups)]


def _finish(problem, x, status, t0, backend, nodes, fallbacks):
    stats = {
        "backend": backend,
        "kernels": kernels.BACKEND,
        "wall_time_s": time.perf_counter() - t0,
        "bnb_nodes": int(nodes),
        "highs_fallbacks": int(fallbacks),
        **problem.stats,
    }
    if x is None:
        return Solution(
            np.zeros(problem.n_vars, np.int8), math.inf, status, np.zeros(0, np.int64), stats
        )
    sel_t = np.flatnonzero(x[problem.triplet_vars]) if len(problem.triplet_vars) else np.zeros(0, np.int64)
    return Solution(x, problem.objective_value(x), status, sel_t, stats)


def brute_force_solve(graph, costs, max_triplets=25):
    """Exhaustive minimum over all triplet subsets (test oracle).

    Feasibility is checked directly on the graph: at most one triplet per
    centre, and for every candidate edge {a, b} the selections at ``a`` using
    ``b`` and at ``b`` using ``a`` agree. Ties go to the lowest subset code.
    """
    t = costs.triplets
    nt = len(t)
    if nt > max_triplets:
        raise ValueError(f"{nt} triplets exceed the brute-force limit of {max_triplets}")
    c = np.asarray(costs.triplet, dtype=np.float64)
    centre = np.zeros((graph.n_candidates, nt), dtype=np.int64)
    centre[t[:, 1], np.arange(nt)] = 1 if nt else 0
    flow = np.zeros((len(graph.edges), nt), dtype=np.int64)
    for e, (a, b) in enumerate(graph.edges.tolist()):
        for r, (i, j, k) in enumerate(t.tolist()):
            if j == a and b in (i, k):
                flow[e, r] += 1
            elif j == b and a in (i, k):
                flow[e, r] -= 1
    best_obj, best_code = math.inf, -1
    bits = np.arange(nt, dtype=np.int64)
    chunk = 1 << 16
    for start in range(0, 1 << nt, chunk):
        codes = np.arange(start, min(start + chunk, 1 << nt), dtype=np.int64)
        X = (codes[:, None] >> bits) & 1
        ok = (X @ centre.T <= 1).all(axis=1) & (X @ flow.T == 0).all(axis=1)
        if not ok.any():
            continue
        vals = np.where(ok, X @ c, np.inf)
        i = int(np.argmin(vals))
        if vals[i] < best_obj - 1e-12:
            best_obj, best_code = float(vals[i]), int(codes[i])
    x = ((best_code >> bits) & 1).astype(np.int8) if nt else np.zeros(0, np.int8)
    sel = np.flatnonzero(x)
    return Solution(x, math.fsum(c[sel]), OPTIMAL, sel, {"backend": "brute-force"})
