import math

import numpy as np
import pytest

from microtrack import kernels
from microtrack.candidates import Candidates
from microtrack.costs import (
    GraphCosts,
    SolveParams,
    curv,
    dist,
    edge_cost,
    evid,
    load_presets,
    node_cost,
    preset,
    triplet_cost,
)
from microtrack.graph import S, build_graph, enumerate_triplets
from microtrack.volume_io import ScoreVolume


def test_preset_node_costs():
    assert node_cost(S, preset("NMS_GRAD")) == 180
    assert node_cost(0, preset("NMS_GRAD")) == -80
    assert node_cost(0, preset("Baseline")) == -100


def test_presets_complete():
    rows = load_presets()
    assert sorted(rows) == sorted(["NMS_GRAD", "CC_GRAD", "NMS_SM", "NMS_RFC", "Baseline"])
    for row in rows.values():
        assert row["block_size"] == [30, 250, 250]
        assert row["context_size"] == [50, 450, 450]


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("nope")


def test_dist():
    assert dist((0, 0, 0), (0, 3, 4)) == 5
    assert dist((1, 2, 3), (1, 2, 3)) == 0
    vol = ScoreVolume(np.zeros((2, 2, 2), np.float32), voxel_size=(40, 4, 4))
    a, b = vol.to_world([0, 0, 0]), vol.to_world([1, 0, 0])
    assert dist(a, b) == 40


def test_evid_single_voxel():
    data = np.zeros((2, 3, 3), np.float32)
    data[1, 2, 1] = 0.7
    vol = ScoreVolume(data)
    p = vol.to_world([1, 2, 1])
    assert evid(vol, p, p) == pytest.approx(0.7)


def test_evid_axis_line():
    vol = ScoreVolume(np.full((1, 1, 5), 0.5, np.float32))
    assert evid(vol, vol.to_world([0, 0, 0]), vol.to_world([0, 0, 4])) == pytest.approx(2.5)


def test_evid_clamps_inside_sum_only():
    vol = ScoreVolume(np.full((1, 1, 3), 1.5, np.float32))
    assert evid(vol, vol.to_world([0, 0, 0]), vol.to_world([0, 0, 2])) == pytest.approx(3.0)
    assert vol.data.max() == np.float32(1.5)


def test_evid_outside_volume():
    vol = ScoreVolume(np.zeros((1, 2, 2), np.float32))
    with pytest.raises(ValueError):
        evid(vol, vol.to_world([0, 0, 0]), vol.to_world([0, 0, 5]))


def test_curv():
    assert curv((0, 0, 0), (0, 0, 10), (0, 0, 20)) == pytest.approx(0)
    assert curv((0, 0, 0), (0, 0, 10), (0, 10, 10)) == pytest.approx(math.pi / 2)
    assert curv(None, (0, 0, 0), (0, 0, 1)) == 0
    assert curv((0, 0, 0), (0, 0, 10), (0, 0, 0)) == pytest.approx(math.pi)


def test_edge_costs_nms_grad():
    p = preset("NMS_GRAD")
    vol = ScoreVolume(np.full((1, 1, 5), 0.5, np.float32))
    assert edge_cost(vol, None, (0, 0, 0), p) == 100
    a, b = vol.to_world([0, 0, 0]), vol.to_world([0, 0, 4])
    assert edge_cost(vol, a, b, p) == pytest.approx(12 * 2.5 - 160)


def test_edge_cost_distance_term():
    p = SolveParams(theta_S=0, theta_P=-1, theta_D=1, theta_E=0, theta_C=0, theta_d=90)
    vol = ScoreVolume(np.zeros((1, 4, 5), np.float32), voxel_size=(1, 1, 1))
    assert edge_cost(vol, (0, 0, 0), (0, 3, 4), p) == pytest.approx(5 - 2)


def test_triplet_costs():
    p = preset("NMS_GRAD")
    vol = ScoreVolume(np.zeros((1, 10, 10), np.float32), voxel_size=(1, 1, 1))
    a, j, b = (0, 0, 0), (0, 0, 5), (0, 0, 9)
    assert triplet_cost(vol, a, j, b, p) == pytest.approx(edge_cost(vol, a, j, p) + edge_cost(vol, j, b, p))
    c = (0, 5, 5)
    expect = edge_cost(vol, a, j, p) + edge_cost(vol, j, c, p) + 14 * math.pi / 2
    assert triplet_cost(vol, a, j, c, p) == pytest.approx(expect)
    assert 14 * math.pi / 2 == pytest.approx(21.99, abs=0.01)


def test_graph_costs_match_scalar_functions():
    rng = np.random.default_rng(0)
    vol = ScoreVolume(rng.random((4, 30, 30)).astype(np.float32))
    vox = np.unique(rng.integers(0, [4, 30, 30], size=(25, 3)), axis=0)
    c = Candidates(vox, np.ones(len(vox)), vol.voxel_size, vol.offset)
    p = SolveParams(theta_S=50, theta_P=-30, theta_D=0.3, theta_E=5, theta_C=9, theta_d=90)
    g = build_graph(c, p.theta_d)
    t = enumerate_triplets(g)
    gc = GraphCosts(g, t, p, vol=vol)
    pos = c.positions
    for r, (i, j, k) in enumerate(t.tolist()):
        pi = None if i == S else pos[i]
        pk = None if k == S else pos[k]
        assert gc.triplet[r] == pytest.approx(triplet_cost(vol, pi, pos[j], pk, p), rel=1e-9, abs=1e-9)


def test_params_validation(caplog):
    with pytest.raises(ValueError):
        SolveParams(theta_d=0)
    with pytest.raises(ValueError):
        SolveParams(theta_S=float("nan"))
    with caplog.at_level("WARNING"):
        SolveParams(theta_P=5)
    assert "not negative" in caplog.text


def test_evid_kernel_backends_agree():
    rng = np.random.default_rng(4)
    data = rng.random((5, 20, 20)).astype(np.float32)
    a = rng.integers(0, [5, 20, 20], size=(50, 3))
    b = rng.integers(0, [5, 20, 20], size=(50, 3))
    outs = [m.evid_sum(data, a, b) for m in kernels.backends().values()]
    for o in outs[1:]:
        assert np.allclose(o, outs[0], rtol=0, atol=1e-9)
