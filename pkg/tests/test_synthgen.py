import numpy as np
import pytest

from microtrack.evaluation import Track
from microtrack.synthgen import SynthConfig, add_noise, generate, generate_tracks, rasterize_scores


def test_no_tracks():
    assert generate_tracks(SynthConfig(n_tracks=0)) == []


def test_zero_curvature_is_straight():
    for t in generate_tracks(SynthConfig(n_tracks=5, max_curvature=0, seed=1)):
        d = np.diff(t.nodes, axis=0)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        assert np.allclose(d, d[0], atol=1e-9)


def test_curvature_bounded():
    cfg = SynthConfig(n_tracks=5, seed=2)
    for t in generate_tracks(cfg):
        d = np.diff(t.nodes, axis=0)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        ang = np.arccos(np.clip((d[1:] * d[:-1]).sum(axis=1), -1, 1))
        assert ang.max() <= cfg.max_curvature + 1e-9


def test_tracks_inside_long_and_separated():
    cfg = SynthConfig(seed=3)
    tracks = generate_tracks(cfg)
    assert len(tracks) == 20
    lo, hi = cfg.extent
    for t in tracks:
        assert (t.nodes >= lo).all() and (t.nodes <= hi).all()
        assert t.length >= cfg.min_length_nm
        assert np.allclose(np.linalg.norm(np.diff(t.nodes, axis=0), axis=1), cfg.step_nm)
    for a in range(len(tracks)):
        for b in range(a):
            d = np.linalg.norm(tracks[a].nodes[:, None] - tracks[b].nodes[None], axis=2).min()
            assert d >= 3 * cfg.tube_sigma_nm


def test_empty_rasterization():
    vol = rasterize_scores([], SynthConfig(shape=(2, 10, 10)))
    assert not vol.data.any()


def test_straight_track_ridge():
    cfg = SynthConfig(shape=(3, 60, 60), n_tracks=0)
    y = 123.0
    vol = rasterize_scores([Track(0, [[40, y, 8], [40, y, 228]])], cfg)
    section = vol.data[1]
    ridge = section[:, 5:55].argmax(axis=0)
    assert np.abs(ridge - y / 4).max() <= 1
    assert section.max() == pytest.approx(1.0)
    assert vol.data[0].max() < 1e-3  # 40 nm away in z is far outside the tube


def test_noise_identity_when_disabled():
    cfg = SynthConfig(shape=(2, 20, 20), n_tracks=0, noise_sigma=0, salt_density=0)
    vol = rasterize_scores([], cfg)
    assert add_noise(vol, cfg) is vol


def test_noise_clamped_and_salted():
    cfg = SynthConfig(shape=(2, 50, 50), n_tracks=0, noise_sigma=2.0, salt_density=0.01, seed=4)
    out = add_noise(rasterize_scores([], cfg), cfg).data
    assert out.min() >= 0 and out.max() <= 1.5


def test_same_seed_identical():
    cfg = SynthConfig(shape=(6, 120, 120), n_tracks=3, min_length_nm=100, seed=9)
    v1, t1 = generate(cfg)
    v2, t2 = generate(cfg)
    assert v1 == v2
    assert all(np.array_equal(a.nodes, b.nodes) for a, b in zip(t1, t2))
    v3, _ = generate(SynthConfig(shape=(6, 120, 120), n_tracks=3, min_length_nm=100, seed=10))
    assert v3 != v1


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(shape=(0, 1, 1))
    with pytest.raises(ValueError):
        SynthConfig(salt_density=2)


def test_impossible_request():
    with pytest.raises(RuntimeError):
        generate_tracks(SynthConfig(shape=(2, 20, 20), n_tracks=3, max_attempts=50))
