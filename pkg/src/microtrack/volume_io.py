"""Score volumes on disk: a directory holding ``meta.json`` and raw float32 data."""
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_VOXEL_SIZE = (40.0, 4.0, 4.0)
META_NAME = "meta.json"
DATA_NAME = "data.raw"


class VolumeError(ValueError):
    pass


@dataclass(frozen=True)
class Roi:
    """Axis-aligned box in world nanometres, (z, y, x) order."""

    begin: tuple
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "begin", tuple(float(b) for b in self.begin))
        object.__setattr__(self, "shape", tuple(float(s) for s in self.shape))
        if len(self.begin) != 3 or len(self.shape) != 3:
            raise VolumeError("roi must be three-dimensional")
        if any(s <= 0 for s in self.shape):
            raise VolumeError(f"roi shape must be positive, got {self.shape}")

    @property
    def end(self):
        return tuple(b + s for b, s in zip(self.begin, self.shape))

    def contains_point(self, p):
        """Half-open containment: begin <= p < end on every axis."""
        return all(b <= c < e for b, c, e in zip(self.begin, p, self.end))

    def contains_roi(self, other):
        return all(
            b <= ob and oe <= e
            for b, e, ob, oe in zip(self.begin, self.end, other.begin, other.end)
        )

    def intersects(self, other):
        return all(
            b < oe and ob < e
            for b, e, ob, oe in zip(self.begin, self.end, other.begin, other.end)
        )

    def intersect(self, other):
        begin = tuple(max(a, b) for a, b in zip(self.begin, other.begin))
        end = tuple(min(a, b) for a, b in zip(self.end, other.end))
        return Roi(begin, tuple(e - b for b, e in zip(begin, end)))

    def grow(self, margin):
        return Roi(
            tuple(b - m for b, m in zip(self.begin, margin)),
            tuple(s + 2 * m for s, m in zip(self.shape, margin)),
        )


@dataclass(frozen=True, eq=False)
class ScoreVolume:
    """Per-voxel microtubule scores with physical geometry.

    Voxel ``(0, 0, 0)`` sits at ``offset``; voxel ``v`` at
    ``offset + v * voxel_size``. Arrays are (z, y, x), x fastest.
    """

    data: np.ndarray
    voxel_size: tuple = DEFAULT_VOXEL_SIZE
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise VolumeError(f"volume must be 3D with non-empty axes, got {data.shape}")
        voxel_size = tuple(float(v) for v in self.voxel_size)
        if len(voxel_size) != 3 or any(not v > 0 for v in voxel_size):
            raise VolumeError(f"voxel size must be positive, got {voxel_size}")
        offset = tuple(float(o) for o in self.offset)
        if len(offset) != 3:
            raise VolumeError("offset must be three-dimensional")
        if not np.isfinite(data).all():
            raise VolumeError("volume contains non-finite scores")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size", voxel_size)
        object.__setattr__(self, "offset", offset)

    @property
    def shape(self):
        return self.data.shape

    @property
    def roi(self):
        """World extent covered by the voxels (one voxel_size per voxel)."""
        return Roi(self.offset, tuple(s * v for s, v in zip(self.shape, self.voxel_size)))

    def to_world(self, voxels):
        return np.asarray(self.offset) + np.asarray(voxels, dtype=np.float64) * np.asarray(
            self.voxel_size
        )

    def to_voxel(self, positions):
        """Nearest voxel index for world positions (no bounds check)."""
        rel = (np.asarray(positions, dtype=np.float64) - np.asarray(self.offset)) / np.asarray(
            self.voxel_size
        )
        return np.rint(rel).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, ScoreVolume):
            return NotImplemented
        return (
            self.voxel_size == other.voxel_size
            and self.offset == other.offset
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def save_volume(vol, path):
    """Write ``vol`` as a container directory, replacing any existing one atomically."""
    path = os.path.abspath(os.fspath(path))
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    meta = {
        "shape": list(vol.shape),
        "voxel_size_nm": list(vol.voxel_size),
        "offset_nm": list(vol.offset),
        "dtype": "float32",
        "order": "zyx",
    }
    tmp = tempfile.mkdtemp(prefix=".tmp-vol-", dir=parent)
    try:
        with open(os.path.join(tmp, META_NAME), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
        vol.data.astype("<f4", copy=False).tofile(os.path.join(tmp, DATA_NAME))
        if os.path.isdir(path):
            old = path + ".old"
            if os.path.exists(old):
                shutil.rmtree(old)
            os.rename(path, old)
            os.rename(tmp, path)
            shutil.rmtree(old)
        else:
            os.rename(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_volume(path):
    path = os.fspath(path)
    meta_path = os.path.join(path, META_NAME)
    data_path = os.path.join(path, DATA_NAME)
    for p in (meta_path, data_path):
        if not os.path.isfile(p):
            raise VolumeError(f"missing file {p}")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("dtype", "float32") != "float32" or meta.get("order", "zyx") != "zyx":
        raise VolumeError("only float32 zyx containers are supported")
    shape = tuple(int(s) for s in meta["shape"])
    if len(shape) != 3 or min(shape) < 1:
        raise VolumeError(f"invalid shape {shape}")
    raw = np.fromfile(data_path, dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise VolumeError(
            f"length mismatch: meta declares {int(np.prod(shape))} scores, data has {raw.size}"
        )
    if not np.isfinite(raw).all():
        raise VolumeError("volume contains non-finite scores")
    if raw.size and (raw.min() < 0.0 or raw.max() > 1.0):
        logger.warning("scores outside [0, 1] in %s (kept as stored)", path)
    return ScoreVolume(
        raw.astype(np.float32).reshape(shape),
        voxel_size=tuple(meta.get("voxel_size_nm", DEFAULT_VOXEL_SIZE)),
        offset=tuple(meta.get("offset_nm", (0.0, 0.0, 0.0))),
    )


def crop(vol, roi):
    """Copy of the voxels inside ``roi``; the result is offset at ``roi.begin``."""
    rel_begin = (np.asarray(roi.begin) - np.asarray(vol.offset)) / np.asarray(vol.voxel_size)
    rel_shape = np.asarray(roi.shape) / np.asarray(vol.voxel_size)
    begin = np.rint(rel_begin)
    shape = np.rint(rel_shape)
    if not (np.allclose(begin, rel_begin, atol=1e-6) and np.allclose(shape, rel_shape, atol=1e-6)):
        raise VolumeError(f"roi {roi} is not aligned to the voxel grid")
    begin = begin.astype(np.int64)
    end = begin + shape.astype(np.int64)
    if (begin < 0).any() or (end > np.asarray(vol.shape)).any():
        raise VolumeError(f"roi {roi} is outside the volume extent {vol.roi}")
    sl = tuple(slice(int(b), int(e)) for b, e in zip(begin, end))
    return ScoreVolume(vol.data[sl].copy(), voxel_size=vol.voxel_size, offset=roi.begin)
