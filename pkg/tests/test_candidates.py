import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microtrack.candidates import (
    Candidates,
    NmsParams,
    extract_candidates,
    nms_pass1,
    nms_pass2,
    read_candidates,
    write_candidates,
)
from microtrack.evaluation import Track
from microtrack.synthgen import SynthConfig, generate, rasterize_scores
from microtrack.volume_io import ScoreVolume


def naive_pass1(data, window, threshold):
    out = []
    for z0 in range(0, data.shape[0], window[0]):
        for y0 in range(0, data.shape[1], window[1]):
            for x0 in range(0, data.shape[2], window[2]):
                best, arg = -np.inf, None
                for z in range(z0, min(z0 + window[0], data.shape[0])):
                    for y in range(y0, min(y0 + window[1], data.shape[1])):
                        for x in range(x0, min(x0 + window[2], data.shape[2])):
                            if data[z, y, x] > best:
                                best, arg = data[z, y, x], (z, y, x)
                if best > threshold:
                    out.append(arg)
    return sorted(out)


def greedy_oracle(voxels, scores, window):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], tuple(voxels[i])))
    kept = []
    for i in order:
        if all(any(abs(int(voxels[i][a]) - int(voxels[k][a])) >= window[a] for a in range(3)) for k in kept):
            kept.append(i)
    return sorted(tuple(int(v) for v in voxels[i]) for i in kept)


def test_zero_volume():
    vol = ScoreVolume(np.zeros((1, 10, 10), np.float32))
    assert len(extract_candidates(vol, NmsParams((1, 10, 10), (1, 3, 3)))) == 0


def test_single_peak():
    data = np.zeros((1, 10, 10), np.float32)
    data[0, 3, 7] = 0.9
    c = extract_candidates(ScoreVolume(data), NmsParams((1, 10, 10), (1, 3, 3)))
    assert c.voxels.tolist() == [[0, 3, 7]]


def test_ramp_matches_naive_scan():
    z, y, x = np.meshgrid(np.arange(1), np.arange(20), np.arange(20), indexing="ij")
    data = ((y * 20 + x) / 400.0).astype(np.float32)
    v, _ = nms_pass1(ScoreVolume(data), (1, 10, 10), 0.0)
    assert len(v) == 4
    assert sorted(map(tuple, v.tolist())) == naive_pass1(data, (1, 10, 10), 0.0)


def test_pass2_far_apart_kept():
    v, _ = nms_pass2([[0, 0, 0], [0, 20, 0]], [0.9, 0.8], (1, 3, 3))
    assert len(v) == 2


def test_pass2_adjacent_double_detection():
    v, s = nms_pass2([[0, 9, 9], [0, 10, 10]], [0.8, 0.9], (1, 3, 3))
    assert v.tolist() == [[0, 10, 10]]


def test_pass2_matches_greedy_oracle():
    rng = np.random.default_rng(5)
    vox = rng.integers(0, [3, 15, 15], size=(50, 3))
    vox = np.unique(vox, axis=0)
    scores = rng.random(len(vox)).astype(np.float32)
    v, _ = nms_pass2(vox, scores, (1, 3, 3))
    assert sorted(map(tuple, v.tolist())) == greedy_oracle(vox.tolist(), scores.tolist(), (1, 3, 3))


def test_partial_tiles_scanned():
    data = np.zeros((1, 15, 15), np.float32)
    data[0, 14, 14] = 0.7
    v, _ = nms_pass1(ScoreVolume(data), (1, 10, 10), 0.5)
    assert v.tolist() == [[0, 14, 14]]


def test_straight_tube_candidates_on_axis():
    cfg = SynthConfig(shape=(1, 60, 200), n_tracks=0, noise_sigma=0, tube_sigma_nm=6)
    y = 30 * 4.0
    nodes = np.array([[0.0, y, 20.0], [0.0, y, 760.0]])
    vol = rasterize_scores([Track(0, nodes)], cfg)
    c = extract_candidates(vol, NmsParams((1, 10, 10), (1, 3, 3)))
    assert len(c) >= 15
    assert np.abs(c.voxels[:, 1] - 30).max() <= 1
    xs = np.sort(c.voxels[:, 2])
    assert np.diff(xs).max() <= 2 * 10  # at most one empty window between hits


def test_tube_window_audit():
    # every pass-1 window whose maximum exceeds the threshold yields a candidate
    cfg = SynthConfig(shape=(3, 80, 80), n_tracks=3, noise_sigma=0, min_length_nm=100, seed=4)
    vol, _ = generate(cfg)
    v, _ = nms_pass1(vol, (1, 10, 10), 0.5)
    assert sorted(map(tuple, v.tolist())) == naive_pass1(vol.data, (1, 10, 10), 0.5)


def test_candidates_file_roundtrip(tmp_path):
    c = Candidates([[0, 1, 2], [3, 4, 5]], [0.5, 0.75], (40, 4, 4), (0, 0, 0))
    write_candidates(c, tmp_path / "c.txt", source="x", params=NmsParams())
    back, header = read_candidates(tmp_path / "c.txt")
    assert back.voxels.tolist() == c.voxels.tolist()
    assert np.allclose(back.scores, c.scores)
    assert header["source"] == "x"


def test_params_validation():
    with pytest.raises(ValueError):
        NmsParams((0, 10, 10), (1, 3, 3))


vol_strategy = st.tuples(
    st.integers(1, 3), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31 - 1)
)


@settings(max_examples=60, deadline=None)
@given(vol_strategy, st.sampled_from([(1, 4, 4), (1, 10, 10), (2, 3, 5)]))
def test_pass1_property(case, window):
    *shape, seed = case
    data = np.random.default_rng(seed).random(shape).astype(np.float32)
    v, _ = nms_pass1(ScoreVolume(data), window, 0.5)
    assert sorted(map(tuple, v.tolist())) == naive_pass1(data, window, 0.5)


@settings(max_examples=60, deadline=None)
@given(vol_strategy, st.sampled_from([(1, 3, 3), (2, 2, 2), (1, 1, 1)]))
def test_pass2_exclusion_property(case, window2):
    *shape, seed = case
    data = np.random.default_rng(seed).random(shape).astype(np.float32)
    c = extract_candidates(ScoreVolume(data), NmsParams((1, 2, 2), window2, 0.3))
    for a, b in itertools.combinations(c.voxels.tolist(), 2):
        assert any(abs(p - q) >= w for p, q, w in zip(a, b, window2))
