import numpy as np

from microtrack.bench import random_instance
from microtrack.ilp import build_legacy_ilp


def hard_problem(n=100, seed=0):
    """Legacy program of a ~100-candidate random graph; slow for the built-in search."""
    graph, costs = random_instance(n, np.random.default_rng(seed))
    return build_legacy_ilp(graph, costs, triplet_only=True)
