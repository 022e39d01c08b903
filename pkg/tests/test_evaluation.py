import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microtrack.evaluation import (
    Track,
    evaluate,
    match_nodes,
    read_tracks,
    resample_track,
    score_edges,
    write_report,
    write_tracks,
)
from microtrack.synthgen import SynthConfig, generate_tracks


def exhaustive_matching(a, b, max_dist):
    """(pair count, summed distance) of the best capped matching, by enumeration."""
    allowed = [
        (i, j, float(np.linalg.norm(a[i] - b[j])))
        for i in range(len(a))
        for j in range(len(b))
        if np.linalg.norm(a[i] - b[j]) <= max_dist
    ]
    best = (0, 0.0)
    for k in range(1, min(len(a), len(b)) + 1):
        for combo in itertools.combinations(allowed, k):
            if len({p[0] for p in combo}) < k or len({p[1] for p in combo}) < k:
                continue
            cand = (k, sum(p[2] for p in combo))
            if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                best = cand
    return best


def test_resample_segment():
    t = resample_track(Track(0, [[0, 0, 0], [0, 0, 100]]), 25)
    assert t.nodes[:, 2].tolist() == [0, 25, 50, 75, 100]


def test_resample_keeps_endpoints_only():
    t = resample_track(Track(0, [[0, 0, 0], [0, 0, 30]]), 50)
    assert t.nodes.tolist() == [[0, 0, 0], [0, 0, 30]]


def test_resample_polyline_spacing():
    t = resample_track(Track(0, [[0, 0, 0], [0, 0, 50], [0, 50, 50]]), 20)
    arcs = np.linalg.norm(np.diff(t.nodes, axis=0), axis=1)
    assert np.allclose(arcs[:2], 20) and np.allclose(arcs[3:], 20)
    assert t.nodes[0].tolist() == [0, 0, 0] and t.nodes[-1].tolist() == [0, 50, 50]
    assert len(t.nodes) == 6  # arc lengths 0, 20, 40, 60, 80, 100


def test_identical_nodes_match_perfectly():
    tr = [Track(0, [[0, 0, 0], [0, 0, 40], [0, 0, 80]])]
    pairs = match_nodes(tr, tr, 10)
    assert [(i, j) for i, j, _ in pairs] == [(0, 0), (1, 1), (2, 2)]
    assert sum(d for *_, d in pairs) == 0


def test_forced_nearest():
    rec = [Track(0, [[0, 0, 0]])]
    gt = [Track(0, [[0, 0, 10], [0, 0, 20]])]
    assert match_nodes(rec, gt, 15) == [(0, 0, 10.0)]


def test_gt_vs_gt():
    gt = [Track(0, [[0, 0, 0], [0, 0, 400]]), Track(1, [[200, 0, 0], [200, 300, 0]])]
    r = evaluate(gt, gt)
    assert r.precision == r.recall == r.f1 == 1


def test_empty_reconstruction():
    gt = [Track(0, [[0, 0, 0], [0, 0, 400]])]
    r = evaluate([], gt)
    assert r.recall == 0 and r.f1 == 0
    assert any("precision undefined" in f for f in r.flags)


def test_merged_track_false_positives():
    # one rec track follows gt 0, jumps 1000 nm sideways, then follows gt 1
    gt = [Track(0, [[0, 0, 0], [0, 0, 120]]), Track(1, [[0, 1000, 120], [0, 1000, 240]])]
    rec = [Track(0, [[0, 0, 0], [0, 0, 120], [0, 1000, 120], [0, 1000, 240]])]
    r = evaluate(rec, gt, spacing_nm=40, max_dist_nm=30)
    # hand count: 3 edges along gt 0, 25 edges across the jump (24 inner nodes,
    # each at least 40 nm from any gt node), 3 edges along gt 1
    assert r.counts["rec_edges"] == 31
    assert r.counts["rec_edges_correct"] == 6
    assert r.counts["gt_edges"] == 6 and r.counts["gt_edges_recovered"] == 6
    assert r.per_track["rec_false_edges"] == {"0": 25}
    assert r.precision == pytest.approx(6 / 31)
    assert r.recall == 1


def test_edge_across_two_gt_tracks_is_false():
    gt = [Track(0, [[0, 0, 0], [0, 0, 40]]), Track(1, [[0, 0, 80], [0, 0, 120]])]
    rec = [Track(0, [[0, 0, 0], [0, 0, 40], [0, 0, 80], [0, 0, 120]])]
    pairs = match_nodes(rec, gt, 5)
    r = score_edges(rec, gt, pairs)
    assert r.counts["rec_edges"] == 3 and r.counts["rec_edges_correct"] == 2
    assert r.per_track["rec_false_edges"] == {"0": 1}


def test_perturbed_copy():
    rng = np.random.default_rng(0)
    gt = generate_tracks(SynthConfig(seed=2, n_tracks=5))
    rec = []
    for t in gt:
        d = rng.normal(size=3)
        rec.append(Track(t.id, t.nodes + 10 * d / np.linalg.norm(d)))
    assert evaluate(rec, gt, 40, 80).f1 == 1


@pytest.mark.parametrize("spacing", [20, 40, 80])
def test_gt_vs_gt_synthetic(spacing):
    gt = generate_tracks(SynthConfig(seed=1))
    r = evaluate(gt, gt, spacing, 80)
    assert (r.precision, r.recall, r.f1) == (1, 1, 1)


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1), st.sampled_from([5.0, 15.0, 40.0])
)
def test_matching_is_optimal(na, nb, seed, cap):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 30, size=(na, 3))
    b = rng.uniform(0, 30, size=(nb, 3))
    pairs = match_nodes([Track(0, a)], [Track(0, b)], cap)
    k, total = exhaustive_matching(a, b, cap)
    assert len(pairs) == k
    assert sum(d for *_, d in pairs) == pytest.approx(total, abs=1e-9)


def test_tracks_file_roundtrip(tmp_path):
    tr = [Track(0, [[0.1, 2, 3], [4, 5, 6.25]]), Track(3, [[1, 1, 1], [2, 2, 2]])]
    write_tracks(tr, tmp_path / "t.txt", header={"a": 1})
    back, header = read_tracks(tmp_path / "t.txt")
    assert header["a"] == 1
    assert [t.id for t in back] == [0, 3]
    assert all(np.array_equal(x.nodes, y.nodes) for x, y in zip(back, tr))


def test_report_file(tmp_path):
    gt = [Track(0, [[0, 0, 0], [0, 0, 100]])]
    write_report(evaluate(gt, gt), tmp_path / "r.json", extra={"note": "x"})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["f1"] == 1 and doc["note"] == "x"
    assert doc["params"] == {"spacing_nm": 40.0, "max_dist_nm": 80.0}
