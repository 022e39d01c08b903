"""Glue from candidates to tracks for a whole volume."""
from dataclasses import dataclass

from .costs import GraphCosts
from .graph import build_graph, enumerate_triplets
from .ilp import build_legacy_ilp, build_triplet_ilp
from .solver import OPTIMAL, solve_exact
from .tracks import check_tracks, decode_tracks


@dataclass
class Model:
    graph: object
    triplets: object
    costs: GraphCosts


def build_model(vol, cands, params):
    """Candidate graph, triplets, and costs (evidence read from ``vol``)."""
    graph = build_graph(cands, params.theta_d)
    triplets = enumerate_triplets(graph)
    return Model(graph, triplets, GraphCosts(graph, triplets, params, vol=vol))


def build_problem(model, formulation="triplet", triplet_only=False):
    if formulation == "triplet":
        return build_triplet_ilp(model.graph, model.costs)
    if formulation == "legacy":
        return build_legacy_ilp(model.graph, model.costs, triplet_only=triplet_only)
    raise ValueError(f"unknown formulation {formulation!r}")


def solve_global(vol, cands, params, formulation="triplet", backend="auto", time_limit=0.0,
                 triplet_only=False, model=None):
    """Returns ``(tracks, solution, problem, model)``; tracks is None unless optimal."""
    model = model or build_model(vol, cands, params)
    problem = build_problem(model, formulation, triplet_only)
    sol = solve_exact(problem, time_limit=time_limit, backend=backend)
    tracks = None
    if sol.status == OPTIMAL:
        tracks = decode_tracks(model.triplets, sol.selected_triplets, cands.positions)
        check_tracks(tracks)
    return tracks, sol, problem, model
