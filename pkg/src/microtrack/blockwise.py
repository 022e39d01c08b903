"""Block-wise solving with context regions and conflict-free phases.

The volume is tiled into blocks ``b``; each block is solved on the
candidates of its grown context ``b̄`` and keeps only the triplets centred
inside ``b``. Blocks whose inner region does not meet each other's context
run in the same phase. Decisions of finished blocks are frozen and enter
later blocks as equality constraints.
"""
import hashlib
import json
import logging
import math
import os
import statistics
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .graph import S
from .ilp import build_triplet_ilp
from .solver import OPTIMAL, solve_exact
from .tracks import check_tracks, decode_tracks
from .volume_io import Roi

logger = logging.getLogger(__name__)


class BlockError(RuntimeError):
    def __init__(self, index, message):
        super().__init__(f"block {tuple(index)}: {message}")
        self.index = tuple(index)


@dataclass(frozen=True)
class Block:
    index: tuple
    roi: Roi
    context: Roi
    margin: tuple = (0.0, 0.0, 0.0)


@dataclass
class BlockSchedule:
    blocks: list
    phases: list  # lists of positions into ``blocks``

    @staticmethod
    def conflict(a, b):
        return a.roi.intersects(b.context) or b.roi.intersects(a.context)

    def phase_of(self):
        out = {}
        for k, ph in enumerate(self.phases):
            for p in ph:
                out[p] = k
        return out


def voxels_to_nm(size, voxel_size):
    return tuple(float(s) * float(v) for s, v in zip(size, voxel_size))


def partition(volume_roi, block_size, context_size):
    """Regular grid of blocks over ``volume_roi``; sizes in world nm.

    The context margin is ``(context - block) / 2`` per axis. Blocks at the
    far boundary are clipped, and every context is clipped to the volume.
    """
    block_size = tuple(float(b) for b in block_size)
    context_size = tuple(float(c) for c in context_size)
    if any(b <= 0 for b in block_size):
        raise ValueError("block size must be positive")
    if any(c < b for b, c in zip(block_size, context_size)):
        raise ValueError(f"context {context_size} is smaller than block {block_size}")
    margin = tuple((c - b) / 2 for b, c in zip(block_size, context_size))
    counts = [max(1, math.ceil(s / b - 1e-9)) for s, b in zip(volume_roi.shape, block_size)]
    blocks = []
    for index in np.ndindex(*counts):
        begin = tuple(o + i * b for o, i, b in zip(volume_roi.begin, index, block_size))
        end = tuple(min(bg + b, e) for bg, b, e in zip(begin, block_size, volume_roi.end))
        roi = Roi(begin, tuple(e - bg for bg, e in zip(begin, end)))
        blocks.append(
            Block(tuple(int(i) for i in index), roi, roi.grow(margin).intersect(volume_roi), margin)
        )
    return blocks


def schedule_phases(blocks):
    """Greedy colouring of the conflict graph in block-index order."""
    order = sorted(range(len(blocks)), key=lambda p: blocks[p].index)
    colour = {}
    for p in order:
        used = {colour[q] for q in colour if BlockSchedule.conflict(blocks[p], blocks[q])}
        c = 0
        while c in used:
            c += 1
        colour[p] = c
    n = max(colour.values()) + 1 if colour else 0
    phases = [[p for p in order if colour[p] == k] for k in range(n)]
    return BlockSchedule(list(blocks), phases)


def _inside(positions, roi):
    b = np.asarray(roi.begin)
    e = np.asarray(roi.end)
    return ((positions >= b) & (positions < e)).all(axis=1)


# worker-side data, set once per process
_WORK = None


def _init_worker(graph, table, backend, time_limit):
    global _WORK
    _WORK = SimpleNamespace(graph=graph, table=table, backend=backend, time_limit=time_limit)


def _solve_block(task):
    pos, active, owned, fixed = task
    w = _WORK
    mask = np.zeros(w.graph.n_candidates, dtype=bool)
    mask[active] = True
    problem = build_triplet_ilp(w.graph, w.table, active=mask, fixed=fixed)
    if w.table.open_end:
        # a track leaving the context may continue outside it: do not charge its end
        e = w.graph.edges
        cut = np.zeros(w.graph.n_candidates, dtype=bool)
        half = mask[e[:, 0]] != mask[e[:, 1]]
        cut[e[half].ravel()] = True
        cut &= mask
        t = w.table.triplets[problem.triplet_ids]
        ends = (t[:, 0] == S).astype(int) + (t[:, 2] == S)
        problem.objective = problem.objective - w.table.open_end * ends * cut[t[:, 1]]
    sol = solve_exact(problem, time_limit=w.time_limit, backend=w.backend)
    chosen = problem.triplet_ids[sol.selected_triplets]
    own = np.zeros(w.graph.n_candidates, dtype=bool)
    own[owned] = True
    chosen = chosen[own[w.table.triplets[chosen, 1]]] if len(chosen) else chosen
    return {
        "pos": pos,
        "status": sol.status,
        "objective": sol.objective_value,
        "selected": sorted(int(t) for t in chosen),
        "solve_time_s": sol.stats["wall_time_s"],
        "variables": problem.n_vars,
        "constraints": len(problem.constraints),
    }


class BlockState:
    """Stored decisions per solved block, optionally mirrored to a directory.

    Each solved block writes ``block_<z>_<y>_<x>.json`` holding its owned
    centres, the selected triplets among them, and the objective; a
    ``manifest.json`` fingerprints the inputs so a resumed run cannot mix
    states from different problems.
    """

    def __init__(self, directory=None, fingerprint=None):
        self.directory = directory
        self.fingerprint = fingerprint
        self.records = {}
        if directory:
            os.makedirs(directory, exist_ok=True)
            man = os.path.join(directory, "manifest.json")
            if os.path.exists(man):
                with open(man) as f:
                    old = json.load(f).get("fingerprint")
                if old != fingerprint:
                    raise ValueError(f"state directory {directory} belongs to a different problem")
            else:
                _atomic_json(man, {"fingerprint": fingerprint})

    def _path(self, index):
        return os.path.join(self.directory, "block_" + "_".join(map(str, index)) + ".json")

    def load(self, index):
        if not self.directory or not os.path.exists(self._path(index)):
            return None
        with open(self._path(index)) as f:
            rec = json.load(f)
        self.records[tuple(index)] = rec
        return rec

    def store(self, index, rec):
        index = tuple(index)
        if index in self.records:
            raise RuntimeError(f"block {index} is already solved")
        self.records[index] = rec
        if self.directory:
            _atomic_json(self._path(index), rec)

    def solved(self, index):
        return tuple(index) in self.records


def _atomic_json(path, doc):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def fingerprint(model, schedule, backend, open_ends=True):
    cands = model.graph.candidates
    params = model.costs.params
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(cands.voxels, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(model.costs.triplet, dtype=np.float64).tobytes())
    h.update(json.dumps(
        {
            "params": params.to_dict(),
            "voxel_size": list(cands.voxel_size),
            "offset": list(cands.offset),
            "blocks": [[b.index, b.roi.begin, b.roi.shape, b.context.begin, b.context.shape]
                       for b in schedule.blocks],
            "backend": backend,
            "open_ends": bool(open_ends),
        },
        sort_keys=True,
    ).encode())
    return h.hexdigest()


def solve_blockwise(model, schedule, workers=1, state_dir=None, time_limit=0.0, backend="auto",
                    max_retries=2, open_ends=True):
    """Solve ``model`` (see ``pipeline.build_model``) block by block.

    Returns ``(TrackSet, report)``; the report lists per-block solve times,
    sizes, and phases. A block that does not reach optimality raises
    ``BlockError`` after all completed blocks have been stored.

    With ``open_ends``, a block does not charge ``theta_S`` for a track end
    at a candidate with an edge leaving its context, since the track may go
    on outside. Without it, tracks clipped by the context tend to be dropped.
    """
    graph = model.graph
    cands = graph.candidates
    table = SimpleNamespace(triplets=model.triplets, triplet=model.costs.triplet,
                            open_end=model.costs.params.theta_S if open_ends else 0.0)
    trip_row = {tuple(r): k for k, r in enumerate(model.triplets.tolist())}
    pos = cands.positions
    n = graph.n_candidates
    if len(schedule.blocks) > 1:
        m = min(min(b.margin) for b in schedule.blocks)
        if m < 2 * graph.theta_d:
            logger.warning("context margin %.1f nm is below 2 theta_d; blocks may disagree", m)

    state = BlockState(state_dir, fingerprint(model, schedule, backend, open_ends))
    decided = np.zeros(n, dtype=bool)
    choice = np.full(n, -1, dtype=np.int64)

    def absorb(rec):
        owned = np.asarray(rec["owned"], dtype=np.int64)
        decided[owned] = True
        for i, j, k in rec["selected"]:
            choice[j] = trip_row[(i, j, k)]

    phase_of = schedule.phase_of()
    for b in schedule.blocks:
        rec = state.load(b.index)
        if rec is not None:
            absorb(rec)

    timings = []
    pool = None
    try:
        for k, phase in enumerate(schedule.phases):
            todo = [p for p in phase if not state.solved(schedule.blocks[p].index)]
            tasks = {}
            owned_of = {}
            for p in todo:
                b = schedule.blocks[p]
                active = np.flatnonzero(_inside(pos, b.context))
                owned = np.flatnonzero(_inside(pos, b.roi))
                fixed = {int(j): int(choice[j]) for j in active if decided[j]}
                tasks[p] = (p, active, owned, fixed)
                owned_of[p] = owned
            results = {}
            attempt = 0
            while len(results) < len(tasks):
                pending = [tasks[p] for p in todo if p not in results]
                if workers <= 1:
                    _init_worker(graph, table, backend, time_limit)
                    for t in pending:
                        results[t[0]] = _solve_block(t)
                    continue
                if pool is None:
                    pool = ProcessPoolExecutor(
                        workers, initializer=_init_worker, initargs=(graph, table, backend, time_limit)
                    )
                try:
                    for r in pool.map(_solve_block, pending):
                        results[r["pos"]] = r
                except BrokenProcessPool:
                    attempt += 1
                    pool = None
                    if attempt > max_retries:
                        raise
                    logger.warning("worker pool broke in phase %d; retrying %d blocks",
                                   k, len(tasks) - len(results))
            failed = None
            for p in todo:
                r = results[p]
                b = schedule.blocks[p]
                timings.append({
                    "index": list(b.index),
                    "phase": k,
                    "status": r["status"],
                    "solve_time_s": r["solve_time_s"],
                    "variables": r["variables"],
                    "constraints": r["constraints"],
                    "candidates": int(_inside(pos, b.context).sum()),
                })
                if r["status"] != OPTIMAL:
                    failed = failed or (b.index, r["status"])
                    continue
                rec = {
                    "index": list(b.index),
                    "phase": k,
                    "objective": r["objective"],
                    "owned": [int(j) for j in owned_of[p]],
                    "selected": [[int(v) for v in model.triplets[t]] for t in r["selected"]],
                }
                state.store(b.index, rec)
                absorb(rec)
            if failed:
                raise BlockError(failed[0], f"solver stopped with status {failed[1]}")
    finally:
        if pool is not None:
            pool.shutdown()

    if not decided.all():
        raise RuntimeError("some candidates are not owned by any solved block")
    selected = np.flatnonzero(choice >= 0)
    tracks = decode_tracks(model.triplets, np.sort(choice[selected]), pos)
    check_tracks(tracks)
    report = {
        "blocks": len(schedule.blocks),
        "phases": len(schedule.phases),
        "block_stats": timings,
        "phase_of": {",".join(map(str, schedule.blocks[p].index)): k for p, k in sorted(phase_of.items())},
    }
    return tracks, report


def block_benchmark(model, volume_roi, voxel_size, block_sizes, margin, gt=None, reference=None,
                    workers=1, time_limit=0.0, backend="auto", evaluate_kw=None):
    """Solve with each block size (voxels) and a fixed context margin (voxels).

    Returns a report with per-size block solve times and, when ``gt`` is
    given, F1 for the global solve and each block size.
    """
    from .evaluation import evaluate, tracks_from_trackset

    evaluate_kw = evaluate_kw or {}
    t0 = time.perf_counter()
    sol = solve_exact(build_triplet_ilp(model.graph, model.costs), time_limit=time_limit, backend=backend)
    global_time = time.perf_counter() - t0
    out = {"global": {"status": sol.status, "solve_time_s": global_time}, "sizes": []}
    global_f1 = None
    if gt is not None and sol.status == OPTIMAL:
        ts = decode_tracks(model.triplets, sol.selected_triplets, model.graph.candidates.positions)
        global_f1 = evaluate(tracks_from_trackset(ts), gt, **evaluate_kw).f1
        out["global"]["f1"] = global_f1
    for size in block_sizes:
        size = tuple(int(s) for s in size)
        ctx = tuple(s + 2 * m for s, m in zip(size, margin))
        blocks = partition(volume_roi, voxels_to_nm(size, voxel_size), voxels_to_nm(ctx, voxel_size))
        sched = schedule_phases(blocks)
        row = {"block_size": list(size), "context_size": list(ctx), "blocks": len(blocks),
               "phases": len(sched.phases), "reference": reference is not None and size == tuple(reference)}
        try:
            ts, rep = solve_blockwise(model, sched, workers=workers, time_limit=time_limit, backend=backend)
        except BlockError as e:
            row["error"] = str(e)
            out["sizes"].append(row)
            continue
        times = [b["solve_time_s"] for b in rep["block_stats"]]
        row["block_solve_times_s"] = times
        row["median_block_solve_time_s"] = statistics.median(times)
        if gt is not None:
            row["f1"] = evaluate(tracks_from_trackset(ts), gt, **evaluate_kw).f1
            if global_f1 is not None:
                row["f1_minus_global"] = row["f1"] - global_f1
        out["sizes"].append(row)
    return out
