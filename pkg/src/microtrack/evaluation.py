"""Edge-level precision/recall of reconstructed tracks against ground truth.

Both track sets are resampled at a fixed arc-length spacing, nodes are paired
by an optimal assignment restricted to pairs closer than ``max_dist``, and an
edge counts as correct when both of its nodes are paired with nodes of one
and the same track on the other side.
"""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

DEFAULT_SPACING = 40.0
DEFAULT_MAX_DIST = 80.0


@dataclass
class Track:
    id: int
    nodes: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 3)

    @property
    def length(self):
        return float(np.linalg.norm(np.diff(self.nodes, axis=0), axis=1).sum())


@dataclass
class MatchResult:
    precision: float
    recall: float
    f1: float
    pairs: list
    counts: dict
    flags: list = field(default_factory=list)
    per_track: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def report(self):
        return {
            "params": self.params,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": self.counts,
            "flags": self.flags,
            "per_track": self.per_track,
        }


def resample_track(track, spacing_nm):
    """Nodes at arc lengths 0, s, 2s, ... plus the original end point."""
    if not spacing_nm > 0:
        raise ValueError("spacing must be positive")
    p = track.nodes
    keep = np.ones(len(p), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(p, axis=0), axis=1) > 0
    p = p[keep]
    if len(p) < 2:
        raise ValueError(f"track {track.id} has zero length")
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))])
    total = arc[-1]
    s = np.arange(0.0, total, spacing_nm)
    if total - s[-1] < 1e-6 * spacing_nm:
        s = s[:-1]
    s = np.append(s, total)
    out = np.stack([np.interp(s, arc, p[:, a]) for a in range(3)], axis=1)
    out[0], out[-1] = p[0], p[-1]
    return Track(track.id, out)


def _flatten(tracks):
    if not tracks:
        return np.zeros((0, 3)), np.zeros(0, np.int64)
    nodes = np.concatenate([t.nodes for t in tracks])
    owner = np.concatenate([np.full(len(t.nodes), k, np.int64) for k, t in enumerate(tracks)])
    return nodes, owner


def match_nodes(rec, gt, max_dist_nm):
    """Optimal pairing of reconstruction and ground-truth nodes.

    Maximises the number of pairs with distance ``<= max_dist_nm`` and, among
    those, minimises the summed distance. Returns ``(rec_node, gt_node, dist)``
    tuples indexing the concatenated node lists of ``rec`` and ``gt``.
    """
    a, _ = _flatten(rec)
    b, _ = _flatten(gt)
    if not len(a) or not len(b):
        return []
    pairs = cKDTree(a).sparse_distance_matrix(cKDTree(b), max_dist_nm, output_type="coo_matrix")
    if pairs.nnz == 0:
        return []
    r, c = pairs.row, pairs.col
    d = np.sqrt(((a[r] - b[c]) ** 2).sum(axis=1))
    ok = d <= max_dist_nm
    r, c, d = r[ok], c[ok], d[ok]
    na, nb = len(a), len(b)
    graph = coo_matrix((np.ones(len(r)), (r, na + c)), shape=(na + nb, na + nb))
    _, label = connected_components(graph, directed=False)
    out = []
    comp = label[r]
    order = np.argsort(comp, kind="stable")
    bounds = np.flatnonzero(np.diff(comp[order])) + 1
    for grp in np.split(order, bounds):
        ur, ri = np.unique(r[grp], return_inverse=True)
        uc, ci = np.unique(c[grp], return_inverse=True)
        big = max_dist_nm * (min(len(ur), len(uc)) + 1) + 1.0
        cost = np.full((len(ur), len(uc)), big)
        cost[ri, ci] = d[grp]
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] < big:
                out.append((int(ur[i]), int(uc[j]), float(cost[i, j])))
    out.sort()
    return out


def _edge_hits(tracks, owner_other, partner):
    """Per track: (correct edges, total edges) where both nodes' partners share a track."""
    res = []
    start = 0
    for t in tracks:
        n = len(t.nodes)
        idx = np.arange(start, start + n)
        pa = partner[idx[:-1]]
        pb = partner[idx[1:]]
        ok = (pa >= 0) & (pb >= 0)
        same = np.zeros(n - 1, dtype=bool)
        same[ok] = owner_other[pa[ok]] == owner_other[pb[ok]]
        res.append((int(same.sum()), n - 1))
        start += n
    return res


def score_edges(rec, gt, pairs):
    """Precision over reconstruction edges, recall over ground-truth edges."""
    a, own_a = _flatten(rec)
    b, own_b = _flatten(gt)
    partner_a = np.full(len(a), -1, np.int64)
    partner_b = np.full(len(b), -1, np.int64)
    for i, j, _ in pairs:
        partner_a[i] = j
        partner_b[j] = i
    rec_hits = _edge_hits(rec, own_b, partner_a)
    gt_hits = _edge_hits(gt, own_a, partner_b)
    tp_rec = sum(h for h, _ in rec_hits)
    n_rec = sum(n for _, n in rec_hits)
    tp_gt = sum(h for h, _ in gt_hits)
    n_gt = sum(n for _, n in gt_hits)
    flags = []
    if n_rec == 0:
        flags.append("no reconstruction edges: precision undefined, reported as 0")
    if n_gt == 0:
        flags.append("no ground-truth edges: recall undefined, reported as 0")
    precision = tp_rec / n_rec if n_rec else 0.0
    recall = tp_gt / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    counts = {
        "rec_edges": n_rec,
        "rec_edges_correct": tp_rec,
        "gt_edges": n_gt,
        "gt_edges_recovered": tp_gt,
        "rec_nodes": len(a),
        "gt_nodes": len(b),
        "matched_nodes": len(pairs),
    }
    per_track = {
        "rec_false_edges": {str(t.id): n - h for t, (h, n) in zip(rec, rec_hits)},
        "gt_missed_edges": {str(t.id): n - h for t, (h, n) in zip(gt, gt_hits)},
    }
    return MatchResult(precision, recall, f1, list(pairs), counts, flags, per_track)


def evaluate(rec, gt, spacing_nm=DEFAULT_SPACING, max_dist_nm=DEFAULT_MAX_DIST):
    rec_r = [resample_track(t, spacing_nm) for t in rec]
    gt_r = [resample_track(t, spacing_nm) for t in gt]
    pairs = match_nodes(rec_r, gt_r, max_dist_nm)
    res = score_edges(rec_r, gt_r, pairs)
    res.params = {"spacing_nm": float(spacing_nm), "max_dist_nm": float(max_dist_nm)}
    return res


def tracks_from_trackset(ts):
    return [Track(k, p) for k, p in enumerate(ts.to_polylines())]


def write_tracks(tracks, path, header=None):
    with open(path, "w") as f:
        f.write("# microtrack tracks " + json.dumps(header or {}, sort_keys=True) + "\n")
        f.write("# track_id node_index z_nm y_nm x_nm\n")
        for t in tracks:
            for k, (z, y, x) in enumerate(t.nodes):
                f.write(f"{int(t.id)} {k} {float(z)!r} {float(y)!r} {float(x)!r}\n")


def read_tracks(path):
    """Returns ``(tracks, header)``."""
    header = {}
    rows = {}
    with open(path) as f:
        for line in f:
            if line.startswith("# microtrack tracks "):
                header = json.loads(line[len("# microtrack tracks ") :])
                continue
            if line.startswith("#") or not line.strip():
                continue
            tid, k, z, y, x = line.split()
            rows.setdefault(int(tid), []).append((int(k), float(z), float(y), float(x)))
    tracks = []
    for tid in sorted(rows):
        pts = sorted(rows[tid])
        if [p[0] for p in pts] != list(range(len(pts))):
            raise ValueError(f"track {tid}: node indices are not dense")
        tracks.append(Track(tid, [p[1:] for p in pts]))
    return tracks, header


def write_report(result, path, extra=None):
    doc = result.report()
    if extra:
        doc = {**extra, **doc}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
