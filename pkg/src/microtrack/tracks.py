"""Turning selected triplets into candidate chains."""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import S

logger = logging.getLogger(__name__)


class DecodeError(RuntimeError):
    """Selected triplets violate the selection constraints (a solver bug)."""


@dataclass
class TrackSet:
    """Chains of candidate ids with their world positions.

    ``opened`` marks tracks that came from a selected cycle; the cycle was
    cut at its longest edge, so every track is an open path.
    """

    tracks: list
    positions: list
    opened: list = field(default_factory=list)

    def __post_init__(self):
        if not self.opened:
            self.opened = [False] * len(self.tracks)

    def __len__(self):
        return len(self.tracks)

    def to_polylines(self):
        return [np.asarray(p, dtype=np.float64) for p in self.positions]

    def to_json(self):
        return json.dumps(
            {
                "tracks": [list(map(int, t)) for t in self.tracks],
                "opened": [bool(c) for c in self.opened],
            },
            sort_keys=True,
        )


def neighbours_from_triplets(triplets, selected):
    """Centre -> (outer, outer) for each selected triplet; raises on double use."""
    nb = {}
    for r in np.asarray(selected, dtype=np.int64).tolist():
        i, j, k = (int(v) for v in triplets[r])
        if j in nb:
            raise DecodeError(f"candidate {j} is the centre of two selected triplets")
        nb[j] = (i, k)
    for j, (i, k) in nb.items():
        for o in (i, k):
            if o != S and j not in nb.get(o, ()):
                raise DecodeError(f"edge {j}-{o} is used at {j} but not at {o}")
    return nb


def decode_tracks(triplets, selected, positions):
    """Assemble chains from selected triplets.

    Every selected candidate names its two neighbours; S marks a chain end.
    Chains are walked from their lowest-id end. The selection constraints do
    not exclude cycles; each leftover cycle is cut at its longest edge (ties:
    lowest id pair) and then listed like a chain.
    """
    nb = neighbours_from_triplets(triplets, selected)
    positions = np.asarray(positions, dtype=np.float64)
    visited = set()
    tracks, opened = [], []

    def walk(start, prev):
        seq = [start]
        visited.add(start)
        cur = start
        while True:
            a, b = nb[cur]
            nxt = b if a == prev else a
            if nxt == S or nxt in visited:
                return seq, nxt != S
            seq.append(nxt)
            visited.add(nxt)
            prev, cur = cur, nxt

    for j in sorted(nb):
        if j in visited or S not in nb[j]:
            continue
        seq, _ = walk(j, S)
        tracks.append(seq)
        opened.append(False)
    for j in sorted(nb):
        if j in visited:
            continue
        a, b = nb[j]
        seq, _ = walk(j, min(a, b))
        tracks.append(_open_cycle(seq, positions))
        opened.append(True)
    if any(opened):
        logger.info("opened %d selected cycle(s) at their longest edge", sum(opened))
    return TrackSet(tracks, [positions[t] for t in tracks], opened)


def _open_cycle(seq, positions):
    n = len(seq)
    nxt = [seq[(p + 1) % n] for p in range(n)]
    length = np.linalg.norm(positions[nxt] - positions[seq], axis=1)
    cut = min(range(n), key=lambda p: (-length[p], min(seq[p], nxt[p]), max(seq[p], nxt[p])))
    path = seq[cut + 1:] + seq[:cut + 1]
    return path if path[0] < path[-1] else path[::-1]


def check_tracks(ts, min_nodes=2):
    """Raise ``DecodeError`` unless tracks are simple, node-disjoint, and long enough."""
    seen = set()
    for t in ts.tracks:
        if len(t) < min_nodes:
            raise DecodeError(f"track {t} has fewer than {min_nodes} candidates")
        if len(set(t)) != len(t):
            raise DecodeError(f"track {t} revisits a node")
        if seen & set(t):
            raise DecodeError(f"tracks share nodes {sorted(seen & set(t))}")
        seen |= set(t)
    return True


def selected_degrees(triplets, selected, n_candidates):
    """Degree of each candidate in the selected edge set (S edges included)."""
    edges = set()
    for r in np.asarray(selected, dtype=np.int64).tolist():
        i, j, k = (int(v) for v in triplets[r])
        for o in (i, k):
            edges.add((j, o) if o == S else (min(j, o), max(j, o)))
    deg = np.zeros(n_candidates, dtype=np.int64)
    for a, b in edges:
        if a != S:
            deg[a] += 1
        if b != S:
            deg[b] += 1
    return deg
