"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed in the terminal summary. Slow: the whole module takes tens
of minutes on one core.
"""
import copy
import itertools
import json
import os
import statistics
import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import small_instance
from microtrack import cli
from microtrack.blockwise import partition, schedule_phases, solve_blockwise, voxels_to_nm
from microtrack.bench import compare_formulations, random_instance, summarize_formulations
from microtrack.candidates import NmsParams, extract_candidates, nms_pass1, nms_pass2
from microtrack.costs import preset
from microtrack.evaluation import Track, evaluate, match_nodes, tracks_from_trackset, write_tracks
from microtrack.ilp import build_legacy_ilp, build_triplet_ilp
from microtrack.pipeline import build_model, solve_global
from microtrack.solver import OPTIMAL, brute_force_solve, solve_exact
from microtrack.synthgen import SynthConfig, generate
from microtrack.tracks import decode_tracks
from microtrack.volume_io import ScoreVolume, save_volume
from test_candidates import naive_pass1
from test_evaluation import exhaustive_matching

pytestmark = pytest.mark.slow

# every TrackSet decoded below, checked as a whole by the path criterion
DECODED = []

BLOCK_SIZES = [(30, 125, 125), (30, 250, 250), (30, 500, 500)]
MARGIN = (10, 100, 100)  # (50, 450, 450) context around (30, 250, 250)


def _decode(triplets, positions, sol):
    ts = decode_tracks(triplets, sol.selected_triplets, positions)
    DECODED.append(ts)
    return ts


def test_c1_objectives_agree(criterion):
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for seed in range(1000, 1200):
        g, gc = small_instance(seed, max_candidates=12, max_triplets=20)
        bf = brute_force_solve(g, gc)
        tp = solve_exact(build_triplet_ilp(g, gc), backend="bnb")
        lg = solve_exact(build_legacy_ilp(g, gc, triplet_only=True), backend="bnb")
        assert tp.status == lg.status == OPTIMAL
        worst = max(worst, abs(tp.objective_value - bf.objective_value),
                    abs(lg.objective_value - bf.objective_value))
        _decode(gc.triplets, g.candidates.positions, tp)
        n += 1
    elapsed = time.perf_counter() - t0
    ok = criterion(1, worst <= 1e-9 and elapsed < 300,
                   f"{n} graphs, max |gap| {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_c2_constraint_counts(criterion):
    checked, bad = 0, []
    instances = [small_instance(s) for s in range(300)]
    instances += [random_instance(n, np.random.default_rng(s)) for n in (25, 50, 100) for s in range(3)]
    for g, gc in instances:
        t = len(gc.triplets)
        if t < 1:
            continue
        tp = build_triplet_ilp(g, gc)
        lp = build_legacy_ilp(g, gc)
        n_tp = g.n_candidates + len(g.edges)
        n_lg = g.n_candidates + g.n_edges + 2 * t
        if not (len(tp.constraints) == n_tp < n_lg == len(lp.constraints)):
            bad.append((g.n_candidates, t))
        checked += 1
    assert criterion(2, not bad, f"{checked} graphs, violations {bad[:3]}")


def test_c3_formulation_speed(criterion):
    recs = compare_formulations(sizes=(25, 50, 100), reps=5, seed=0, time_limit=10.0, backend="bnb")
    rows = summarize_formulations(recs)
    ratios = [r["median_ratio"] for r in rows]
    gaps = [r["objective_gap"] for r in recs if "objective_gap" in r]
    mono = all(a <= b for a, b in zip(ratios, ratios[1:]))
    ok = ratios[-1] >= 10 and mono and max(gaps, default=0) <= 1e-6
    detail = ", ".join(f"n={r['size']}: {r['median_ratio']:.1f}x ({r['legacy_timeouts']} legacy timeouts)"
                       for r in rows)
    assert criterion(3, ok, detail)


@pytest.fixture(scope="module")
def held_out():
    return generate(SynthConfig(seed=0))


@pytest.fixture(scope="module")
def block_runs(held_out):
    vol, gt = held_out
    params = preset("NMS_GRAD")
    cands = extract_candidates(vol, NmsParams((1, 10, 10), (1, 3, 3)))
    model = build_model(vol, cands, params)
    t0 = time.perf_counter()
    ts_g, sol, _, _ = solve_global(vol, cands, params, backend="auto", model=model)
    assert sol.status == OPTIMAL
    DECODED.append(ts_g)
    runs = {"global": (ts_g, None)}
    for size in BLOCK_SIZES + [vol.shape]:
        ctx = tuple(s + 2 * m for s, m in zip(size, MARGIN))
        sched = schedule_phases(partition(vol.roi, voxels_to_nm(size, vol.voxel_size),
                                          voxels_to_nm(ctx, vol.voxel_size)))
        ts, rep = solve_blockwise(model, sched, backend="auto")
        DECODED.append(ts)
        runs[tuple(size)] = (ts, rep)
    return vol, gt, runs, time.perf_counter() - t0


def test_c4_blockwise_matches_global(block_runs, tmp_path, criterion):
    vol, gt, runs, elapsed = block_runs
    f1_g = evaluate(tracks_from_trackset(runs["global"][0]), gt, 40, 80).f1
    f1_b = evaluate(tracks_from_trackset(runs[(30, 250, 250)][0]), gt, 40, 80).f1
    one, rep = runs[tuple(vol.shape)]
    for name, ts in (("g.txt", runs["global"][0]), ("b.txt", one)):
        write_tracks(tracks_from_trackset(ts), tmp_path / name, header={"opened": ts.opened})
    same = (tmp_path / "g.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    ok = abs(f1_b - f1_g) <= 0.02 and rep["blocks"] == 1 and same and elapsed < 1800
    assert criterion(4, ok, f"F1 global {f1_g:.4f}, blockwise {f1_b:.4f}, "
                            f"single block identical {same}, {elapsed:.0f}s")


def test_c5_block_time_grows(block_runs, criterion):
    _, _, runs, _ = block_runs
    med = [statistics.median(b["solve_time_s"] for b in runs[s][1]["block_stats"]) for s in BLOCK_SIZES]
    ok = all(a < b for a, b in zip(med, med[1:]))
    assert criterion(5, ok, "median block solve " + ", ".join(f"{m:.3f}s" for m in med))


# validation volumes for parameter selection; the test volume is seed 0
VALIDATION_SEEDS = (11, 12, 13)
GRID = {
    "theta_S": [300],
    "theta_P": [-30, -40],
    "theta_D": [0.5, 0.75],
    "theta_E": [0],
    "theta_C": [100, 200],
    "theta_d": [90],
}


def _save_synth(seed, d):
    vol, gt = generate(SynthConfig(seed=seed))
    save_volume(vol, d / "volume")
    write_tracks(gt, d / "gt.txt")
    return str(d / "volume"), str(d / "gt.txt")


def test_c6_clean_synthetic_f1(tmp_path, criterion):
    cfg = copy.deepcopy(cli.DEFAULTS)
    cfg["nms"].update(window1=[1, 10, 10], window2=[1, 3, 3])
    cfg["backend"] = "highs"
    per_combo = {}
    for seed in VALIDATION_SEEDS:
        d = tmp_path / f"val{seed}"
        d.mkdir()
        rows = cli.grid_search(*_save_synth(seed, d), cfg, GRID)
        for r in rows:
            assert "error" not in r, r
            per_combo.setdefault(r["combo"], (r["params"], []))[1].append(r["f1"])
    best = min(per_combo, key=lambda k: (-statistics.fmean(per_combo[k][1]), k))
    params, val = per_combo[best]
    d = tmp_path / "test"
    d.mkdir()
    rows = cli.grid_search(*_save_synth(0, d), cfg, {k: [v] for k, v in params.items()})
    f1 = rows[0]["f1"]
    assert criterion(6, f1 >= 0.90, f"selected {params} (validation mean {statistics.fmean(val):.3f}), "
                                    f"test F1 {f1:.4f}")


def test_c7_nms_properties(criterion):
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers([1, 5, 5], [4, 30, 30]))
        w1 = tuple(int(v) for v in rng.integers([1, 2, 2], [3, 11, 11]))
        w2 = tuple(int(v) for v in rng.integers([1, 1, 1], [3, 5, 5]))
        thr = float(rng.uniform(0, 0.9))
        data = rng.random(shape).astype(np.float32)
        v1, s1 = nms_pass1(ScoreVolume(data), w1, thr)
        covered = sorted(map(tuple, v1.tolist())) == naive_pass1(data, w1, thr)
        v2, _ = nms_pass2(v1, s1, w2)
        excl = all(any(abs(p - q) >= w for p, q, w in zip(a, b, w2))
                   for a, b in itertools.combinations(v2.tolist(), 2))
        bad += not (covered and excl)
    assert criterion(7, bad == 0, f"100 volumes, {bad} violations")


def test_c8_evaluation_oracles(criterion):
    perfect = True
    for seed in (0, 1, 2):
        _, gt = generate(SynthConfig(shape=(20, 400, 400), n_tracks=8, min_length_nm=300, seed=seed))
        for spacing in (20, 40, 80):
            r = evaluate(gt, gt, spacing, 80)
            perfect &= r.precision == r.recall == r.f1 == 1
    rng = np.random.default_rng(8)
    mismatches, n = 0, 0
    for _ in range(300):
        na = int(rng.integers(1, 8))
        nb = int(rng.integers(1, 9 - na))
        a = rng.uniform(0, 100, (na, 3))
        b = rng.uniform(0, 100, (nb, 3))
        cap = float(rng.uniform(20, 120))
        pairs = match_nodes([Track(0, a)], [Track(0, b)], cap)
        k, total = exhaustive_matching(a, b, cap)
        mismatches += not (len(pairs) == k and abs(sum(p[2] for p in pairs) - total) <= 1e-9)
        n += 1
    ok = perfect and mismatches == 0
    assert criterion(8, ok, f"gt vs gt perfect {perfect}; matching {n - mismatches}/{n} equal exhaustive")


def _timing_key(k):
    return "time" in k or "ratio" in k or k.endswith("_s")


def _strip_times(doc):
    if isinstance(doc, dict):
        return {k: _strip_times(v) for k, v in doc.items() if not _timing_key(k)}
    if isinstance(doc, list):
        return [_strip_times(v) for v in doc]
    return doc


def _cli_round(d, cfg_path):
    def run(*args):
        res = CliRunner().invoke(cli.main, ["--config", str(cfg_path), "--seed", "3", *map(str, args)],
                                 catch_exceptions=False)
        assert res.exit_code == 0, res.output

    thetas = ["--theta-S", "150", "--theta-P", "-30", "--theta-D", "0.5", "--theta-E", "0",
              "--theta-C", "200"]
    run("synth", "--out", d / "s")
    run("extract", "--volume", d / "s" / "volume", "--out", d / "c.txt")
    run("solve", "--volume", d / "s" / "volume", "--candidates", d / "c.txt", "--out", d / "t.txt",
        "--stats", d / "t.stats.json", *thetas)
    run("solve", "--volume", d / "s" / "volume", "--candidates", d / "c.txt", "--out", d / "tb.txt",
        "--blockwise", "--block-size", "10,100,100", "--context-size", "10,200,200",
        "--state-dir", d / "state", *thetas)
    run("evaluate", "--tracks", d / "t.txt", "--gt", d / "s" / "gt_tracks.txt", "--out", d / "e.json")
    (d / "grid.json").write_text(json.dumps({"theta_S": [150, 200], "theta_P": [-30]}))
    run("grid-search", "--volume", d / "s" / "volume", "--gt", d / "s" / "gt_tracks.txt",
        "--grid", d / "grid.json", "--out", d / "grid.out.json")
    run("bench", "--out", d / "bench", "--sizes", "10,15", "--reps", "2", "--volume", d / "s" / "volume",
        "--gt", d / "s" / "gt_tracks.txt", "--block-sizes", "10,100,100;10,200,200",
        "--kernel-scale", "0.05", *thetas)
    files = {}
    for root, _, names in os.walk(d):
        for name in names:
            p = os.path.join(root, name)
            rel = os.path.relpath(p, d)
            if rel.endswith(".timing.json"):
                continue
            if rel.startswith("bench"):
                files[rel] = json.dumps(_strip_times(json.loads(open(p).read())), sort_keys=True).encode()
            else:
                files[rel] = open(p, "rb").read()
    return files


def test_c10_reruns_identical(tmp_path, criterion):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"shape": [10, 200, 200], "n_tracks": 4, "min_length_nm": 200},
                               "block_size": [10, 100, 100], "context_size": [10, 200, 200]}))
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _cli_round(tmp_path / "a", cfg)
    b = _cli_round(tmp_path / "b", cfg)
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    assert criterion(10, not differ, f"{len(a)} artifacts compared, differing: {differ}")


def test_c9_decoded_tracks_are_paths(criterion):
    # runs last in this module: aggregates the TrackSets decoded above
    bad, tracks, opened = 0, 0, 0
    for ts in DECODED:
        seen = set()
        for t in ts.tracks:
            tracks += 1
            if len(t) < 2 or len(set(t)) != len(t) or seen & set(t):
                bad += 1
            seen |= set(t)
        opened += sum(ts.opened)
    ok = len(DECODED) > 0 and bad == 0
    assert criterion(9, ok, f"{len(DECODED)} solutions, {tracks} tracks, {bad} violations "
                            f"({opened} selected cycles opened)")
