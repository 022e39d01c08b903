"""Selection costs for nodes, edges, and triplets of the candidate graph.

Node costs are ``theta_S`` for S and ``theta_P`` otherwise; an edge adds
``theta_D * dist + theta_E * evid`` to both node costs; a triplet adds
``theta_C * curv`` to its two edge costs. Any term involving S has zero
distance, evidence, and curvature.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from . import kernels
from .graph import S

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveParams:
    theta_S: float = 180.0
    theta_P: float = -80.0
    theta_D: float = 0.0
    theta_E: float = 12.0
    theta_C: float = 14.0
    theta_d: float = 90.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(float(v)):
                raise ValueError(f"{k} must be finite")
            object.__setattr__(self, k, float(v))
        if self.theta_d <= 0:
            raise ValueError("theta_d must be positive")
        if self.theta_P >= 0:
            logger.warning("theta_P = %g is not negative; nothing rewards selecting nodes", self.theta_P)

    def to_dict(self):
        return asdict(self)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SolveParams(**d)


def load_presets():
    """Validation-best parameter rows keyed by model name, with block/context sizes (voxels)."""
    text = resources.files(__package__).joinpath("presets.json").read_text()
    return json.loads(text)


def preset(name):
    presets = load_presets()
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    row = presets[name]
    return SolveParams(**{k: row[k] for k in ("theta_S", "theta_P", "theta_D", "theta_E", "theta_C", "theta_d")})


def node_cost(i, params):
    return params.theta_S if i == S else params.theta_P


def dist(p_i, p_j):
    if p_i is None or p_j is None:
        return 0.0
    return float(np.linalg.norm(np.asarray(p_i, float) - np.asarray(p_j, float)))


def _check_inside(vol, vox):
    vox = np.asarray(vox, dtype=np.int64).reshape(-1, 3)
    if len(vox) and ((vox < 0).any() or (vox >= np.asarray(vol.shape)).any()):
        raise ValueError("evidence endpoints lie outside the volume")
    return vox


def evid(vol, p_i, p_j):
    """Clamped score sum over the voxel line between two world positions (ends included)."""
    if p_i is None or p_j is None:
        return 0.0
    a = _check_inside(vol, vol.to_voxel(p_i))
    b = _check_inside(vol, vol.to_voxel(p_j))
    return float(kernels.evid_sum(vol.data, a, b)[0])


def curv(p_i, p_j, p_k):
    """``pi`` minus the angle at ``p_j``; zero when an outer node is S."""
    if p_i is None or p_k is None:
        return 0.0
    return float(_curv_batch(np.asarray([p_i], float), np.asarray([p_j], float), np.asarray([p_k], float))[0])


def _curv_batch(pi, pj, pk):
    u = pi - pj
    w = pk - pj
    nu = np.linalg.norm(u, axis=1)
    nw = np.linalg.norm(w, axis=1)
    degenerate = (nu == 0) | (nw == 0)
    if degenerate.any():
        logger.warning("%d triplets with coincident positions; curvature set to 0", int(degenerate.sum()))
    denom = np.where(degenerate, 1.0, nu * nw)
    cos = np.clip((u * w).sum(axis=1) / denom, -1.0, 1.0)
    out = np.pi - np.arccos(cos)
    out[degenerate] = 0.0
    return out


def edge_cost(vol, p_i, p_j, params):
    """Cost of edge {i, j}; a None position stands for S."""
    if p_i is None or p_j is None:
        return params.theta_S + params.theta_P
    return (
        params.theta_D * dist(p_i, p_j)
        + params.theta_E * evid(vol, p_i, p_j)
        + 2 * params.theta_P
    )


def triplet_cost(vol, p_i, p_j, p_k, params):
    """Cost of triplet (i, j, k); outer positions are None for S."""
    return (
        params.theta_C * curv(p_i, p_j, p_k)
        + edge_cost(vol, p_i, p_j, params)
        + edge_cost(vol, p_j, p_k, params)
    )


class GraphCosts:
    """Vectorised costs for every edge and triplet of a graph.

    Attributes
    ----------
    edge_dist, edge_evid, edge : arrays aligned with ``graph.edges``
    s_edge : float, cost of any S edge
    triplets : the (T, 3) triplet rows the costs refer to
    triplet, curv : arrays aligned with ``triplets``
    node : array of candidate node costs
    """

    def __init__(self, graph, triplets, params, vol=None, evidence=None):
        self.params = params
        c = graph.candidates
        e = graph.edges
        pos = c.positions
        if len(e):
            self.edge_dist = np.sqrt(((pos[e[:, 0]] - pos[e[:, 1]]) ** 2).sum(axis=1))
        else:
            self.edge_dist = np.zeros(0)
        if evidence is not None:
            self.edge_evid = np.asarray(evidence, dtype=np.float64)
        elif vol is None or not len(e):
            self.edge_evid = np.zeros(len(e))
        else:
            self.edge_evid = edge_evidence(vol, c, e)
        self.edge = (
            params.theta_D * self.edge_dist + params.theta_E * self.edge_evid + 2 * params.theta_P
        )
        self.s_edge = params.theta_S + params.theta_P
        self.node = np.full(len(c), params.theta_P)

        t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        self.triplets = t
        self.curv = np.zeros(len(t))
        inner = (t[:, 0] != S) & (t[:, 2] != S)
        if inner.any():
            ti = t[inner]
            self.curv[inner] = _curv_batch(pos[ti[:, 0]], pos[ti[:, 1]], pos[ti[:, 2]])
        self.edge_index = _edge_lookup(e, len(c))
        self.triplet = (
            params.theta_C * self.curv
            + self.cost_of(t[:, 0], t[:, 1])
            + self.cost_of(t[:, 1], t[:, 2])
        )

    def cost_of(self, a, b):
        """Edge costs for node-id arrays ``a``, ``b`` (S allowed)."""
        a = np.asarray(a, np.int64)
        b = np.asarray(b, np.int64)
        out = np.full(a.shape, self.s_edge, dtype=np.float64)
        cc = (a != S) & (b != S)
        if cc.any():
            out[cc] = self.edge[self.edge_index(a[cc], b[cc])]
        return out


def _edge_lookup(edges, n):
    keys = edges[:, 0] * max(n, 1) + edges[:, 1] if len(edges) else np.zeros(0, np.int64)

    def index(a, b):
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        k = lo * max(n, 1) + hi
        pos = np.searchsorted(keys, k)
        if len(keys) == 0 or (pos >= len(keys)).any() or (keys[np.minimum(pos, len(keys) - 1)] != k).any():
            raise KeyError("pair is not an edge of the graph")
        return pos

    return index


def edge_evidence(vol, cands, edges):
    """Evidence for each C-C edge, computed on ``vol`` at the candidates' world positions."""
    vox = _check_inside(vol, vol.to_voxel(cands.positions))
    a = np.ascontiguousarray(vox[edges[:, 0]])
    b = np.ascontiguousarray(vox[edges[:, 1]])
    return kernels.evid_sum(vol.data, a, b)
