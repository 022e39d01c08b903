"""Candidate graph over C plus the start/end node S, and its triplet set."""
import json

import numpy as np
from scipy.spatial import cKDTree

from .candidates import Candidates

S = -1  # reserved id of the start/end node


class CandidateGraph:
    """Undirected graph on candidates plus S.

    Only candidate-candidate edges are stored (``edges``, rows ``i < j``,
    lexicographically sorted); S is implicitly adjacent to every candidate.
    """

    def __init__(self, candidates, edges, theta_d):
        self.candidates = candidates
        self.theta_d = float(theta_d)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
            if (edges[:, 0] == edges[:, 1]).any():
                raise ValueError("self edges are not allowed")
        self.edges = edges
        self._adj = None

    @property
    def n_candidates(self):
        return len(self.candidates)

    @property
    def n_edges(self):
        """|E| including the S edges."""
        return len(self.edges) + self.n_candidates

    def neighbors(self, j):
        """Sorted candidate neighbours of candidate ``j`` (S excluded)."""
        if self._adj is None:
            adj = [[] for _ in range(self.n_candidates)]
            for a, b in self.edges:
                adj[a].append(int(b))
                adj[b].append(int(a))
            self._adj = [sorted(x) for x in adj]
        return self._adj[j]

    def degree(self, j):
        """Degree in G, counting the S edge."""
        return len(self.neighbors(j)) + 1

    def subgraph(self, idx):
        """Graph induced on candidates ``idx`` (relabelled 0..len-1 in given order)."""
        idx = np.asarray(idx, dtype=np.int64)
        remap = np.full(self.n_candidates, -1, dtype=np.int64)
        remap[idx] = np.arange(len(idx))
        e = remap[self.edges] if len(self.edges) else self.edges
        keep = (e >= 0).all(axis=1) if len(e) else np.zeros(0, bool)
        return CandidateGraph(self.candidates.subset(idx), e[keep], self.theta_d)


def build_graph(cands, theta_d):
    """Connect candidate pairs with world distance ``<= theta_d``."""
    if not theta_d > 0:
        raise ValueError(f"theta_d must be positive, got {theta_d}")
    pos = cands.positions
    if len(pos) < 2:
        return CandidateGraph(cands, np.zeros((0, 2), np.int64), theta_d)
    tree = cKDTree(pos)
    pairs = tree.query_pairs(r=theta_d * (1 + 1e-9) + 1e-9, output_type="ndarray")
    if len(pairs):
        d = np.sqrt(((pos[pairs[:, 0]] - pos[pairs[:, 1]]) ** 2).sum(axis=1))
        pairs = pairs[d <= theta_d]
    return CandidateGraph(cands, pairs, theta_d)


def enumerate_triplets(graph):
    """All triplets ``(i, j, k)`` centred at candidate ``j``.

    Outer nodes range over the neighbours of ``j`` including S, with ``i < k``
    (S = -1 therefore always comes first). Rows are ordered by centre, then
    by ``(i, k)``.
    """
    rows = []
    for j in range(graph.n_candidates):
        nb = [S] + graph.neighbors(j)
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                rows.append((nb[a], j, nb[b]))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def write_graph(graph, path):
    c = graph.candidates
    header = {
        "theta_d": graph.theta_d,
        "candidates": len(c),
        "edges": len(graph.edges),
        "voxel_size_nm": list(c.voxel_size),
        "offset_nm": list(c.offset),
    }
    with open(path, "w") as f:
        f.write("# microtrack graph " + json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(c)):
            z, y, x = c.voxels[i]
            f.write(f"c {i} {z} {y} {x} {float(c.scores[i])!r}\n")
        for a, b in graph.edges:
            f.write(f"e {a} {b}\n")


def read_graph(path):
    with open(path) as f:
        first = f.readline()
        if not first.startswith("# microtrack graph "):
            raise ValueError(f"{path} is not a graph file")
        header = json.loads(first[len("# microtrack graph ") :])
        vox, scores, edges = [], [], []
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "c":
                vox.append([int(v) for v in parts[2:5]])
                scores.append(float(parts[5]))
            elif parts[0] == "e":
                edges.append([int(parts[1]), int(parts[2])])
    cands = Candidates(
        np.asarray(vox, np.int64).reshape(-1, 3),
        scores,
        header["voxel_size_nm"],
        header["offset_nm"],
    )
    return CandidateGraph(cands, np.asarray(edges, np.int64).reshape(-1, 2), header["theta_d"])
