import numpy as np
import pytest

from microtrack import kernels
from microtrack.candidates import Candidates
from microtrack.costs import GraphCosts, SolveParams
from microtrack.graph import build_graph, enumerate_triplets
from microtrack.volume_io import ScoreVolume


@pytest.fixture(params=sorted(kernels.backends()))
def kmod(request):
    """Each available kernel implementation in turn."""
    return kernels.backends()[request.param]


def small_instance(seed, max_candidates=12, max_triplets=20):
    """Seeded random graph with few enough triplets for exhaustive search.

    Candidates sit at random voxels of a random score volume; theta_d and the
    cost parameters are drawn too, so selections range from empty to full.
    """
    rng = np.random.default_rng(seed)
    while True:
        n = int(rng.integers(2, max_candidates + 1))
        shape = (4, 24, 24)
        data = rng.random(shape).astype(np.float32)
        vol = ScoreVolume(data)
        vox = np.stack([rng.integers(0, s, n) for s in shape], axis=1)
        vox = np.unique(vox, axis=0)
        cands = Candidates(vox, np.ones(len(vox)), vol.voxel_size, vol.offset)
        params = SolveParams(
            theta_S=float(rng.uniform(0, 200)),
            theta_P=float(rng.uniform(-120, -1)),
            theta_D=float(rng.uniform(0, 1)),
            theta_E=float(rng.uniform(-5, 15)),
            theta_C=float(rng.uniform(0, 40)),
            theta_d=float(rng.uniform(45, 110)),
        )
        graph = build_graph(cands, params.theta_d)
        triplets = enumerate_triplets(graph)
        if 1 <= len(triplets) <= max_triplets:
            return graph, GraphCosts(graph, triplets, params, vol=vol)


def chain_instance(params):
    """Two candidates one section apart on an all-zero volume (evid = 0)."""
    vol = ScoreVolume(np.zeros((3, 4, 4), np.float32))
    vox = np.array([[0, 1, 1], [1, 1, 1]])
    cands = Candidates(vox, np.ones(2), vol.voxel_size, vol.offset)
    graph = build_graph(cands, params.theta_d)
    triplets = enumerate_triplets(graph)
    return graph, GraphCosts(graph, triplets, params, vol=vol)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
