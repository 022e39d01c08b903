"""0-1 programs for track selection: the triplet formulation and the legacy
node/edge/triplet formulation, plus LP-format export."""
import math
from dataclasses import dataclass

import numpy as np

from .graph import S


@dataclass(frozen=True)
class Constraint:
    idx: np.ndarray
    coef: np.ndarray
    sense: str  # "<=" or "="
    rhs: int
    name: str = ""


class IlpProblem:
    """Minimise ``objective @ x`` over binary ``x`` subject to integer linear rows.

    ``triplet_vars[t]`` is the variable index of triplet row ``t`` of
    ``triplets``; both formulations carry it so solutions decode the same way.
    """

    def __init__(self, names, objective, kind, triplets, triplet_vars):
        self.names = list(names)
        self.objective = np.asarray(objective, dtype=np.float64)
        if len(self.names) != len(self.objective):
            raise ValueError("names and objective differ in length")
        self.kind = kind
        self.triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        self.triplet_vars = np.asarray(triplet_vars, dtype=np.int64)
        self.triplet_ids = np.arange(len(self.triplets))
        self.constraints = []

    @property
    def n_vars(self):
        return len(self.objective)

    def add(self, idx, coef, sense, rhs, name=""):
        if sense not in ("<=", "="):
            raise ValueError(f"unsupported relation {sense!r}")
        idx = np.asarray(idx, dtype=np.int64)
        coef = np.asarray(coef, dtype=np.int64)
        if len(idx) != len(coef):
            raise ValueError("index and coefficient lengths differ")
        if len(idx) and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise ValueError("constraint references an undeclared variable")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("constraint lists a variable twice")
        self.constraints.append(Constraint(idx, coef, sense, int(rhs), name))

    @property
    def stats(self):
        return {"variables": self.n_vars, "constraints": len(self.constraints)}

    def copy(self):
        p = IlpProblem(self.names, self.objective, self.kind, self.triplets, self.triplet_vars)
        p.triplet_ids = self.triplet_ids
        p.constraints = list(self.constraints)
        return p

    def pinned(self, assignments):
        """Copy with ``x[v] == value`` rows for each ``(v, value)`` in ``assignments``."""
        p = self.copy()
        for v, value in sorted(assignments.items()):
            p.add([v], [1], "=", int(value), f"pin_{self.names[v]}")
        return p

    def is_feasible(self, x):
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.n_vars,) or ((x != 0) & (x != 1)).any():
            return False
        for c in self.constraints:
            act = int((c.coef * x[c.idx]).sum())
            if c.sense == "=" and act != c.rhs:
                return False
            if c.sense == "<=" and act > c.rhs:
                return False
        return True

    def objective_value(self, x):
        x = np.asarray(x)
        return math.fsum(self.objective[x.astype(bool)])

    def to_csr(self):
        """Row and column compressed forms used by the search kernels."""
        m = len(self.constraints)
        row_ptr = np.zeros(m + 1, dtype=np.int64)
        for r, c in enumerate(self.constraints):
            row_ptr[r + 1] = row_ptr[r] + len(c.idx)
        row_idx = np.concatenate([c.idx for c in self.constraints]) if m else np.zeros(0, np.int64)
        row_coef = np.concatenate([c.coef for c in self.constraints]) if m else np.zeros(0, np.int64)
        rhs = np.array([c.rhs for c in self.constraints], dtype=np.int64)
        is_eq = np.array([c.sense == "=" for c in self.constraints], dtype=np.uint8)
        rows = np.repeat(np.arange(m, dtype=np.int64), np.diff(row_ptr))
        order = np.lexsort((rows, row_idx))
        col_row = rows[order]
        col_coef = row_coef[order]
        col_ptr = np.zeros(self.n_vars + 1, dtype=np.int64)
        np.add.at(col_ptr, row_idx + 1, 1)
        col_ptr = np.cumsum(col_ptr)
        return row_ptr, row_idx, row_coef, rhs, is_eq, col_ptr, col_row, col_coef

    def to_lp(self):
        lines = [f"\\ microtrack {self.kind} formulation", "Minimize"]
        lines += _lp_terms("obj", self.names, range(self.n_vars), self.objective)
        lines.append("Subject To")
        for r, c in enumerate(self.constraints):
            name = c.name or f"c{r}"
            rel = "=" if c.sense == "=" else "<="
            if not len(c.idx):
                lines.append(f"\\ {name}: empty row 0 {rel} {c.rhs}")
                continue
            terms = _lp_terms(name, self.names, c.idx, c.coef)
            terms[-1] += f" {rel} {c.rhs}"
            lines += terms
        lines.append("Binary")
        for k in range(0, self.n_vars, 8):
            lines.append(" " + " ".join(self.names[k : k + 8]))
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path):
        with open(path, "w") as f:
            f.write(self.to_lp())


def _lp_terms(label, names, idx, coef, per_line=6):
    parts = []
    for v, a in zip(idx, coef):
        a = float(a)
        sign = "-" if a < 0 else "+"
        parts.append(f"{sign} {abs(a)!r} {names[int(v)]}")
    if not parts:
        parts = ["0 " + names[0]] if names else ["0"]
    if parts[0].startswith("+ "):
        parts[0] = parts[0][2:]
    out = [f" {label}: " + " ".join(parts[:per_line])]
    for k in range(per_line, len(parts), per_line):
        out.append("   " + " ".join(parts[k : k + per_line]))
    return out


def _node_name(i):
    return "S" if i == S else str(int(i))


def triplet_names(triplets):
    return [f"t_{_node_name(i)}_{j}_{_node_name(k)}" for i, j, k in triplets]


def _triplet_incidence(triplets):
    """Map (centre, outer candidate) -> triplet rows centred at ``centre`` that contain ``outer``."""
    inc = {}
    for t, (i, j, k) in enumerate(triplets.tolist()):
        if i != S:
            inc.setdefault((j, i), []).append(t)
        if k != S:
            inc.setdefault((j, k), []).append(t)
    return inc


def build_triplet_ilp(graph, costs, active=None, fixed=None):
    """Variables are the triplet indicators.

    Rows: at most one selected triplet per centre candidate, and for every
    candidate-candidate edge {a, b}, the triplets at ``a`` using ``b`` are
    selected exactly as often as the triplets at ``b`` using ``a``. S edges
    carry no such row, since no triplet is centred at S.

    ``active`` (boolean mask over candidates) restricts the program to the
    triplets whose candidates are all active. ``fixed`` maps candidates whose
    decision is already known to the row of their selected triplet in
    ``costs.triplets`` (-1 for none): their visible triplets are pinned, and
    edges to them use the known usage as right-hand side, which stays exact
    when the selected triplet itself lies outside the active set.
    ``triplet_ids`` on the result maps variables back to rows of
    ``costs.triplets``.
    """
    t_all = costs.triplets
    n = graph.n_candidates
    if active is None:
        active = np.ones(n, dtype=bool)
    active = np.asarray(active, dtype=bool)
    fixed = fixed or {}
    if len(t_all):
        ok = active[t_all[:, 1]]
        for col in (0, 2):
            ok &= (t_all[:, col] == S) | active[np.maximum(t_all[:, col], 0)]
        ids = np.flatnonzero(ok)
    else:
        ids = np.zeros(0, np.int64)
    t = t_all[ids]
    p = IlpProblem(triplet_names(t), costs.triplet[ids], "triplet", t, np.arange(len(t)))
    p.triplet_ids = ids
    starts = np.searchsorted(t[:, 1], np.arange(n + 1)) if len(t) else np.zeros(n + 1, np.int64)
    for j in np.flatnonzero(active).tolist():
        idx = np.arange(starts[j], starts[j + 1])
        p.add(idx, np.ones(len(idx), np.int64), "<=", 1, f"center_{j}")

    def usage(a, b):
        r = fixed[a]
        return int(r >= 0 and b in (t_all[r, 0], t_all[r, 2]))

    inc = _triplet_incidence(t)
    for a, b in graph.edges.tolist():
        if not (active[a] and active[b]):
            continue
        plus = inc.get((a, b), [])
        minus = inc.get((b, a), [])
        fa, fb = a in fixed, b in fixed
        if fa and fb:
            continue
        if fa:
            p.add(minus, [1] * len(minus), "=", usage(a, b), f"flow_{a}_{b}")
        elif fb:
            p.add(plus, [1] * len(plus), "=", usage(b, a), f"flow_{a}_{b}")
        else:
            p.add(plus + minus, [1] * len(plus) + [-1] * len(minus), "=", 0, f"flow_{a}_{b}")
    for v in range(len(t)):
        j = int(t[v, 1])
        if j in fixed:
            p.add([v], [1], "=", int(ids[v] == fixed[j]), f"pin_{p.names[v]}")
    return p


def build_legacy_ilp(graph, costs, triplet_only=False):
    """Node, edge, and triplet indicators with the classic consistency rows.

    S is always selected: it has no node variable or degree row, and the
    edge rows of S edges read ``2 x_Sj - x_j <= 1``. With ``triplet_only``,
    node and edge variables get zero cost so the objective matches the
    triplet formulation.
    """
    n = graph.n_candidates
    ce = graph.edges
    t = costs.triplets
    n_ce = len(ce)
    node_var = np.arange(n)
    ce_var = n + np.arange(n_ce)
    se_var = n + n_ce + np.arange(n)
    t_var = n + n_ce + n + np.arange(len(t))
    names = (
        [f"n_{i}" for i in range(n)]
        + [f"e_{a}_{b}" for a, b in ce.tolist()]
        + [f"e_S_{j}" for j in range(n)]
        + triplet_names(t)
    )
    if triplet_only:
        obj = np.concatenate([np.zeros(n + n_ce + n), costs.triplet])
    else:
        obj = np.concatenate([costs.node, costs.edge, np.full(n, costs.s_edge), costs.triplet])
    p = IlpProblem(names, obj, "legacy", t, t_var)

    incident = [[int(se_var[j])] for j in range(n)]
    for e, (a, b) in enumerate(ce.tolist()):
        incident[a].append(int(ce_var[e]))
        incident[b].append(int(ce_var[e]))
    for i in range(n):
        p.add([node_var[i]] + incident[i], [2] + [-1] * len(incident[i]), "=", 0, f"degree_{i}")
    for e, (a, b) in enumerate(ce.tolist()):
        p.add([ce_var[e], node_var[a], node_var[b]], [2, -1, -1], "<=", 0, f"edge_{a}_{b}")
    for j in range(n):
        p.add([se_var[j], node_var[j]], [2, -1], "<=", 1, f"edge_S_{j}")

    ce_keys = {(a, b): int(ce_var[e]) for e, (a, b) in enumerate(ce.tolist())}

    def edge_var(u, v):
        if u == S:
            return int(se_var[v])
        if v == S:
            return int(se_var[u])
        return ce_keys[(min(u, v), max(u, v))]

    for r, (i, j, k) in enumerate(t.tolist()):
        e1, e2 = edge_var(i, j), edge_var(j, k)
        name = p.names[t_var[r]]
        p.add([t_var[r], e1, e2], [2, -1, -1], "<=", 0, f"tri_lo_{name}")
        p.add([t_var[r], e1, e2], [-1, 1, 1], "<=", 1, f"tri_hi_{name}")
    return p
