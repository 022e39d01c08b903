"""Synthetic ground-truth tracks and score volumes."""
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .evaluation import Track
from .volume_io import ScoreVolume


@dataclass(frozen=True)
class SynthConfig:
    shape: tuple = (30, 1000, 1000)
    voxel_size: tuple = (40.0, 4.0, 4.0)
    n_tracks: int = 20
    max_curvature: float = 0.05  # radians per step
    step_nm: float = 20.0
    tube_sigma_nm: float = 6.0
    noise_sigma: float = 0.05
    salt_density: float = 0.0
    min_length_nm: float = 400.0
    max_attempts: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError("shape must be three positive integers")
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ValueError("voxel_size must be three positive numbers")
        if self.n_tracks < 0:
            raise ValueError("n_tracks must be >= 0")
        if self.max_curvature < 0 or self.step_nm <= 0 or self.tube_sigma_nm <= 0:
            raise ValueError("max_curvature >= 0, step_nm > 0 and tube_sigma_nm > 0 required")
        if self.noise_sigma < 0 or not 0 <= self.salt_density <= 1:
            raise ValueError("noise_sigma >= 0 and salt_density in [0, 1] required")

    @property
    def extent(self):
        """World-space bounding box of voxel centres (offset 0)."""
        return np.zeros(3), (np.asarray(self.shape) - 1) * np.asarray(self.voxel_size)

    def to_dict(self):
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["voxel_size"] = list(self.voxel_size)
        return d


def _rngs(seed):
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def _unit(v):
    return v / np.linalg.norm(v)


def _turn(d, max_angle, rng):
    """Rotate unit vector ``d`` by an angle in [0, max_angle] about a random perpendicular axis."""
    if max_angle == 0:
        return d
    r = rng.normal(size=3)
    perp = r - (r @ d) * d
    n = np.linalg.norm(perp)
    if n < 1e-12:
        return d
    perp /= n
    a = rng.uniform(0.0, max_angle)
    return _unit(math.cos(a) * d + math.sin(a) * perp)


def _walk(start, d, cfg, rng, lo, hi):
    pts = []
    p = start
    while True:
        p = p + cfg.step_nm * d
        if (p < lo).any() or (p > hi).any():
            return pts
        pts.append(p)
        d = _turn(d, cfg.max_curvature, rng)


def _random_walk(cfg, rng):
    lo, hi = cfg.extent
    start = lo + rng.uniform(size=3) * (hi - lo)
    d = _unit(rng.normal(size=3))
    fwd = _walk(start, d, cfg, rng, lo, hi)
    back = _walk(start, -d, cfg, rng, lo, hi)
    pts = back[::-1] + [start] + fwd
    return np.asarray(pts)


def generate_tracks(cfg):
    """Bounded-curvature random walks that run until they leave the volume.

    Each walk starts at a uniform point with a uniform direction and is grown
    both ways. Walks shorter than ``min_length_nm`` or passing within three
    tube sigmas of an accepted track are redrawn.
    """
    rng, _ = _rngs(cfg.seed)
    tracks = []
    trees = []
    sep = 3 * cfg.tube_sigma_nm
    attempts = 0
    while len(tracks) < cfg.n_tracks:
        if attempts >= cfg.max_attempts:
            raise RuntimeError(
                f"placed {len(tracks)} of {cfg.n_tracks} tracks in {cfg.max_attempts} attempts"
            )
        attempts += 1
        pts = _random_walk(cfg, rng)
        if len(pts) < 2 or (len(pts) - 1) * cfg.step_nm < cfg.min_length_nm:
            continue
        dense = _densify(pts, min(cfg.voxel_size) / 2)
        if any(np.isfinite(t.query(dense, distance_upper_bound=sep)[0]).any() for t in trees):
            continue
        tracks.append(Track(len(tracks), pts))
        trees.append(cKDTree(dense))
    return tracks


def _densify(pts, spacing):
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        s = np.arange(1, n + 1)[:, None] / n
        out.append(a + s * (b - a))
    return np.concatenate(out)


def rasterize_scores(tracks, cfg):
    """Gaussian tube around each centreline, 1.0 on the splatted centreline voxels.

    The profile is ``exp(-d^2 / 2 sigma^2)`` with ``d`` the anisotropic
    world-space distance to the nearest splatted voxel, so tracks keep the
    same peak height whatever their orientation.
    """
    vs = np.asarray(cfg.voxel_size)
    shape = np.asarray(cfg.shape)
    mask = np.zeros(cfg.shape, dtype=bool)
    for t in tracks:
        dense = _densify(t.nodes, vs.min() / 2) if len(t.nodes) > 1 else t.nodes
        vox = np.rint(dense / vs).astype(np.int64)
        vox = vox[((vox >= 0) & (vox < shape)).all(axis=1)]
        mask[vox[:, 0], vox[:, 1], vox[:, 2]] = True
    if not mask.any():
        return ScoreVolume(np.zeros(cfg.shape, np.float32), cfg.voxel_size)
    cut = 5 * cfg.tube_sigma_nm
    out = np.zeros(cfg.shape, np.float32)
    # crop to the mask bounding box plus the profile cut-off to keep memory bounded
    nz = np.argwhere(mask)
    pad = np.ceil(cut / vs).astype(np.int64)
    lo = np.maximum(nz.min(axis=0) - pad, 0)
    hi = np.minimum(nz.max(axis=0) + pad + 1, shape)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    d = distance_transform_edt(~mask[sl], sampling=vs).astype(np.float32)
    prof = np.exp(-(d * d) / np.float32(2 * cfg.tube_sigma_nm**2))
    prof[d > cut] = 0
    out[sl] = prof
    return ScoreVolume(out, cfg.voxel_size)


def add_noise(vol, cfg):
    """Additive Gaussian noise plus salt voxels set to 1, clamped to [0, 1.5]."""
    if cfg.noise_sigma == 0 and cfg.salt_density == 0:
        return vol
    _, rng = _rngs(cfg.seed)
    data = vol.data.astype(np.float32, copy=True)
    if cfg.noise_sigma > 0:
        data += rng.normal(0.0, cfg.noise_sigma, size=data.shape).astype(np.float32)
    if cfg.salt_density > 0:
        salt = rng.random(size=data.shape) < cfg.salt_density
        data[salt] = 1.0
    np.clip(data, 0.0, 1.5, out=data)
    return ScoreVolume(data, vol.voxel_size, vol.offset)


def generate(cfg):
    """``(noisy volume, ground-truth tracks)`` for ``cfg``."""
    tracks = generate_tracks(cfg)
    return add_noise(rasterize_scores(tracks, cfg), cfg), tracks
