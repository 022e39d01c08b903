"""Candidate extraction by two strided non-maxima suppression passes."""
import json
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_WINDOW1 = (1, 10, 10)
DEFAULT_WINDOW2 = (1, 3, 3)


@dataclass(frozen=True)
class NmsParams:
    window1: tuple = DEFAULT_WINDOW1
    window2: tuple = DEFAULT_WINDOW2
    threshold: float = 0.5

    def __post_init__(self):
        for name in ("window1", "window2"):
            w = tuple(int(v) for v in getattr(self, name))
            if len(w) != 3 or min(w) < 1:
                raise ValueError(f"{name} must have three components >= 1, got {w}")
            object.__setattr__(self, name, w)
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        object.__setattr__(self, "threshold", float(self.threshold))

    def to_dict(self):
        return {
            "window1": list(self.window1),
            "window2": list(self.window2),
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class Candidate:
    id: int
    voxel: tuple
    position: tuple
    score: float


class Candidates:
    """Column-oriented candidate set; candidate ``i`` has id ``i``."""

    def __init__(self, voxels, scores, voxel_size, offset):
        self.voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        self.scores = np.asarray(scores, dtype=np.float32).reshape(-1)
        if len(self.voxels) != len(self.scores):
            raise ValueError("voxels and scores differ in length")
        self.voxel_size = tuple(float(v) for v in voxel_size)
        self.offset = tuple(float(o) for o in offset)
        self.positions = np.asarray(self.offset) + self.voxels * np.asarray(self.voxel_size)

    @classmethod
    def empty(cls, voxel_size=(40.0, 4.0, 4.0), offset=(0.0, 0.0, 0.0)):
        return cls(np.zeros((0, 3), np.int64), np.zeros(0, np.float32), voxel_size, offset)

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        return Candidate(
            int(i),
            tuple(int(v) for v in self.voxels[i]),
            tuple(float(p) for p in self.positions[i]),
            float(self.scores[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Candidates(self.voxels[idx], self.scores[idx], self.voxel_size, self.offset)

    def sorted(self):
        """Copy reordered lexicographically by voxel (z, y, x)."""
        order = np.lexsort((self.voxels[:, 2], self.voxels[:, 1], self.voxels[:, 0]))
        return self.subset(order)


def _window_argmax(block, window):
    """Per-window max and flat in-window argmax of a block tiled by ``window``."""
    wz, wy, wx = window
    nz, ny, nx = (-(-s // w) for s, w in zip(block.shape, window))
    padded = np.full((nz * wz, ny * wy, nx * wx), -np.inf, dtype=np.float32)
    padded[: block.shape[0], : block.shape[1], : block.shape[2]] = block
    tiles = (
        padded.reshape(nz, wz, ny, wy, nx, wx)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(nz, ny, nx, wz * wy * wx)
    )
    arg = tiles.argmax(axis=-1)
    mx = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]
    return mx, arg


def nms_pass1(vol, window1, threshold):
    """One candidate per ``window1`` tile whose maximum exceeds ``threshold``.

    Tiles are laid out with stride equal to the window, starting at voxel 0;
    partial tiles at the far boundary are scanned too. Ties resolve to the
    smallest (z, y, x) voxel inside the tile.
    Returns ``(voxels, scores)``.
    """
    window1 = tuple(int(w) for w in window1)
    data = vol.data
    wz, wy, wx = window1
    voxels, scores = [], []
    # slab-wise over z to bound memory on large volumes
    for z0 in range(0, data.shape[0], wz):
        mx, arg = _window_argmax(data[z0 : z0 + wz], window1)
        hit = np.nonzero(mx > threshold)
        if not len(hit[0]):
            continue
        a = arg[hit]
        dz, rem = np.divmod(a, wy * wx)
        dy, dx = np.divmod(rem, wx)
        vz = z0 + hit[0] * wz + dz
        vy = hit[1] * wy + dy
        vx = hit[2] * wx + dx
        voxels.append(np.stack([vz, vy, vx], axis=1))
        scores.append(mx[hit])
    if not voxels:
        return np.zeros((0, 3), np.int64), np.zeros(0, np.float32)
    return np.concatenate(voxels).astype(np.int64), np.concatenate(scores).astype(np.float32)


def nms_pass2(voxels, scores, window2):
    """Greedy suppression of near-duplicate maxima.

    Candidates are visited by descending score (ties: smaller voxel first) and
    kept unless a kept candidate lies within ``|delta| < window2`` per axis.
    Returns the kept ``(voxels, scores)`` in visiting order.
    """
    voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    scores = np.asarray(scores, dtype=np.float32).reshape(-1)
    order = np.lexsort((voxels[:, 2], voxels[:, 1], voxels[:, 0], -scores))
    voxels, scores = voxels[order], scores[order]
    keep = kernels.nms_suppress(voxels, tuple(int(w) for w in window2))
    return voxels[keep], scores[keep]


def extract_candidates(vol, params=None):
    params = params or NmsParams()
    v, s = nms_pass1(vol, params.window1, params.threshold)
    v, s = nms_pass2(v, s, params.window2)
    return Candidates(v, s, vol.voxel_size, vol.offset).sorted()


def write_candidates(cands, path, source="", params=None):
    header = {
        "source": str(source),
        "nms": params.to_dict() if params is not None else None,
        "voxel_size_nm": list(cands.voxel_size),
        "offset_nm": list(cands.offset),
        "count": len(cands),
    }
    with open(path, "w") as f:
        f.write("# microtrack candidates " + json.dumps(header, sort_keys=True) + "\n")
        f.write("# id z y x score\n")
        for i in range(len(cands)):
            z, y, x = cands.voxels[i]
            f.write(f"{i} {z} {y} {x} {float(cands.scores[i])!r}\n")


def read_candidates(path):
    """Returns ``(candidates, header)``."""
    header = None
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("# microtrack candidates "):
                header = json.loads(line[len("# microtrack candidates ") :])
            elif line.startswith("#") or not line.strip():
                continue
            else:
                rows.append(line.split())
    if header is None:
        raise ValueError(f"{path} is not a candidates file")
    voxels = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in rows], dtype=np.int64)
    scores = np.array([float(r[4]) for r in rows], dtype=np.float32)
    ids = [int(r[0]) for r in rows]
    if ids != list(range(len(rows))):
        raise ValueError("candidate ids must be dense and ordered from 0")
    return Candidates(voxels, scores, header["voxel_size_nm"], header["offset_nm"]), header
