"""Benchmarks: triplet vs legacy formulation, and compiled vs Python kernels."""
import statistics
import time

import numpy as np

from . import kernels
from .candidates import Candidates
from .costs import GraphCosts, SolveParams
from .graph import build_graph, enumerate_triplets
from .ilp import build_legacy_ilp, build_triplet_ilp
from .solver import OPTIMAL, _packing_groups, solve_exact
from .volume_io import ScoreVolume

BENCH_PARAMS = SolveParams(theta_S=180, theta_P=-80, theta_D=0, theta_E=12, theta_C=14, theta_d=90)


def random_instance(n, rng, sections=5, side_factor=16.0, params=BENCH_PARAMS):
    """About ``n`` candidates at random voxels of a random score volume.

    The in-plane side grows with ``sqrt(n)`` so the expected degree stays
    roughly constant across sizes.
    """
    side = max(2, int(np.sqrt(n) * side_factor))
    vol = ScoreVolume(rng.random((sections, side, side)).astype(np.float32))
    vox = np.stack(
        [rng.integers(0, sections, n), rng.integers(0, side, n), rng.integers(0, side, n)], axis=1
    )
    vox = np.unique(vox, axis=0)
    cands = Candidates(vox, np.ones(len(vox)), vol.voxel_size, vol.offset)
    graph = build_graph(cands, params.theta_d)
    triplets = enumerate_triplets(graph)
    return graph, GraphCosts(graph, triplets, params, vol=vol)


def compare_formulations(sizes=(25, 50, 100), reps=5, seed=0, time_limit=10.0, backend="bnb",
                         side_factor=16.0):
    """Solve each random instance with both formulations (legacy with triplet-only costs).

    Returns one record per instance. When the legacy solve runs out of time
    its time is the limit and ``ratio`` is a lower bound (``legacy_timeout``).
    """
    rng = np.random.default_rng(seed)
    out = []
    for n in sizes:
        for rep in range(reps):
            graph, costs = random_instance(n, rng, side_factor=side_factor)
            tp = build_triplet_ilp(graph, costs)
            lp = build_legacy_ilp(graph, costs, triplet_only=True)
            t0 = time.perf_counter()
            a = solve_exact(tp, time_limit=time_limit, backend=backend)
            t1 = time.perf_counter()
            b = solve_exact(lp, time_limit=time_limit, backend=backend)
            t2 = time.perf_counter()
            rec = {
                "size": n,
                "rep": rep,
                "candidates": graph.n_candidates,
                "edges": graph.n_edges,
                "triplets": len(costs.triplets),
                "triplet_constraints": len(tp.constraints),
                "legacy_constraints": len(lp.constraints),
                "triplet_variables": tp.n_vars,
                "legacy_variables": lp.n_vars,
                "triplet_status": a.status,
                "legacy_status": b.status,
                "triplet_time_s": t1 - t0,
                "legacy_time_s": t2 - t1,
                "legacy_timeout": b.status != OPTIMAL,
                "triplet_timeout": a.status != OPTIMAL,
            }
            if a.status == OPTIMAL and b.status == OPTIMAL:
                rec["objective_gap"] = abs(a.objective_value - b.objective_value)
            rec["ratio"] = rec["legacy_time_s"] / max(rec["triplet_time_s"], 1e-9)
            out.append(rec)
    return out


def summarize_formulations(records):
    """Per size: median solve times and ratio, timeout counts."""
    rows = []
    for n in sorted({r["size"] for r in records}):
        rs = [r for r in records if r["size"] == n]
        rows.append({
            "size": n,
            "instances": len(rs),
            "median_triplet_time_s": statistics.median(r["triplet_time_s"] for r in rs),
            "median_legacy_time_s": statistics.median(r["legacy_time_s"] for r in rs),
            "median_ratio": statistics.median(r["ratio"] for r in rs),
            "legacy_timeouts": sum(r["legacy_timeout"] for r in rs),
            "triplet_timeouts": sum(r["triplet_timeout"] for r in rs),
            "median_triplet_constraints": statistics.median(r["triplet_constraints"] for r in rs),
            "median_legacy_constraints": statistics.median(r["legacy_constraints"] for r in rs),
        })
    return rows


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_benchmark(seed=0, n_lines=2000, n_points=4000, bnb_size=60, bnb_nodes=20000, repeat=3):
    """Best-of-``repeat`` wall time of each kernel under every available backend.

    The search kernel runs on a random triplet program with its packing
    groups and a fixed node budget, so every backend does identical work.
    """
    rng = np.random.default_rng(seed)
    data = rng.random((20, 200, 200)).astype(np.float32)
    a = np.stack([rng.integers(0, s, n_lines) for s in data.shape], axis=1).astype(np.int64)
    b = np.clip(a + rng.integers(-3, 4, (n_lines, 3)) * np.array([1, 8, 8]), 0,
                np.array(data.shape) - 1).astype(np.int64)
    vox = np.stack([rng.integers(0, s, n_points) for s in data.shape], axis=1).astype(np.int64)
    vox = vox[np.lexsort(vox.T[::-1])]
    window = np.array([1, 3, 3], dtype=np.int64)

    graph, costs = random_instance(bnb_size, rng)
    problem = build_triplet_ilp(graph, costs)
    csr = problem.to_csr()
    group, ngroups = _packing_groups(problem)
    order = np.argsort(problem.objective, kind="stable").astype(np.int64)

    rows = []
    for name, mod in sorted(kernels.backends().items()):
        t_evid = _best_of(lambda: mod.evid_sum(data, a, b), repeat)
        t_nms = _best_of(lambda: mod.nms_suppress(vox, window), repeat)
        t_bnb = _best_of(
            lambda: mod.bnb_search(problem.objective, *csr, group, ngroups, order, 0.0, bnb_nodes), repeat
        )
        rows.append({"backend": name, "evid_sum_s": t_evid, "nms_suppress_s": t_nms, "bnb_search_s": t_bnb})
    return {
        "inputs": {"lines": n_lines, "points": n_points, "bnb_variables": problem.n_vars,
                   "bnb_nodes": bnb_nodes},
        "results": rows,
    }
