"""Command-line entry point: ``microtrack <command>``."""
import copy
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click

from . import bench as bench_mod
from .blockwise import BlockError, block_benchmark, partition, schedule_phases, solve_blockwise, voxels_to_nm
from .candidates import NmsParams, extract_candidates, read_candidates, write_candidates
from .costs import SolveParams, load_presets
from .evaluation import evaluate as evaluate_tracks
from .evaluation import read_tracks, tracks_from_trackset, write_report, write_tracks
from .pipeline import build_model, build_problem
from .solver import OPTIMAL, solve_exact
from .synthgen import SynthConfig, generate
from .tracks import check_tracks, decode_tracks
from .volume_io import load_volume, save_volume

logger = logging.getLogger("microtrack")

PRESETS = ("NMS_GRAD", "CC_GRAD", "NMS_SM", "NMS_RFC", "Baseline")
THETAS = ("theta_S", "theta_P", "theta_D", "theta_E", "theta_C", "theta_d")
EXIT_SOLVER = 3

DEFAULTS = {
    "nms": NmsParams().to_dict(),
    "solve": SolveParams().to_dict(),
    "block_size": [30, 250, 250],
    "context_size": [50, 450, 450],
    "spacing_nm": 40.0,
    "max_dist_nm": 80.0,
    "workers": 1,
    "time_limit": 0.0,
    "seed": 0,
    "backend": "auto",
    "formulation": "triplet",
    "synth": {k: v for k, v in SynthConfig().to_dict().items() if k != "seed"},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _unknown_keys(doc, ref, prefix=""):
    bad = []
    for k, v in doc.items():
        if k not in ref:
            bad.append(prefix + k)
        elif isinstance(v, dict) and isinstance(ref[k], dict):
            bad += _unknown_keys(v, ref[k], prefix + k + ".")
    return bad


def resolve(ctx, **flags):
    """Defaults < preset < config file < flags. ``None`` flags are unset."""
    g = ctx.obj
    cfg = copy.deepcopy(DEFAULTS)
    if g["preset"]:
        row = load_presets()[g["preset"]]
        cfg["solve"] = {k: float(row[k]) for k in THETAS}
        cfg["block_size"] = list(row["block_size"])
        cfg["context_size"] = list(row["context_size"])
        cfg["preset"] = g["preset"]
    if g["config"]:
        with open(g["config"]) as f:
            doc = json.load(f)
        bad = _unknown_keys(doc, {**DEFAULTS, "preset": None})
        if bad:
            raise click.UsageError(f"unknown config keys: {', '.join(bad)}")
        if "preset" in doc and not g["preset"]:
            row = load_presets()[doc["preset"]]
            cfg["solve"] = {k: float(row[k]) for k in THETAS}
            cfg["block_size"] = list(row["block_size"])
            cfg["context_size"] = list(row["context_size"])
        cfg = _merge(cfg, doc)
    for k in ("workers", "seed", "time_limit"):
        if g[k] is not None:
            cfg[k] = g[k]
    for k, v in flags.items():
        if v is None:
            continue
        if k in THETAS:
            cfg["solve"][k] = float(v)
        elif k in ("window1", "window2", "threshold"):
            cfg["nms"][k] = list(v) if isinstance(v, tuple) else v
        else:
            cfg[k] = list(v) if isinstance(v, tuple) else v
    # validate once, at parse time
    try:
        NmsParams(**cfg["nms"])
        SolveParams(**cfg["solve"])
        if any(int(b) < 1 for b in cfg["block_size"]) or any(
            c < b for b, c in zip(cfg["block_size"], cfg["context_size"])
        ):
            raise ValueError("block sizes must be >= 1 and context >= block")
        if cfg["spacing_nm"] <= 0 or cfg["max_dist_nm"] <= 0:
            raise ValueError("spacing and max_dist must be positive")
        if int(cfg["workers"]) < 1:
            raise ValueError("workers must be >= 1")
    except (TypeError, ValueError) as e:
        raise click.UsageError(str(e)) from e
    return cfg


def _nms(cfg):
    return NmsParams(**cfg["nms"])


def _params(cfg):
    return SolveParams(**cfg["solve"])


def _dump(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _triple(ctx, param, value):
    if value is None:
        return None
    try:
        parts = [int(v) for v in str(value).replace(",", " ").split()]
    except ValueError:
        raise click.BadParameter("expected three integers, e.g. 30,250,250")
    if len(parts) != 3:
        raise click.BadParameter("expected three integers, e.g. 30,250,250")
    return tuple(parts)


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="JSON run configuration.")
@click.option("--preset", type=click.Choice(PRESETS), help="Named parameter row.")
@click.option("--workers", type=int, help="Worker processes for block-wise solving and grid search.")
@click.option("--seed", type=int, help="Seed for all randomness of a command.")
@click.option("--time-limit", type=float, help="Solver time limit in seconds (0 = none).")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config, preset, workers, seed, time_limit, verbose):
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    ctx.obj = {"config": config, "preset": preset, "workers": workers, "seed": seed,
               "time_limit": time_limit}


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--shape", callback=_triple)
@click.option("--n-tracks", type=int)
@click.option("--noise-sigma", type=float)
@click.option("--salt-density", type=float)
@click.option("--tube-sigma", type=float)
@click.option("--max-curvature", type=float)
@click.pass_context
def synth(ctx, out, shape, n_tracks, noise_sigma, salt_density, tube_sigma, max_curvature):
    """Generate a synthetic score volume and its ground-truth tracks."""
    cfg = resolve(ctx)
    s = dict(cfg["synth"])
    for k, v in (("shape", shape), ("n_tracks", n_tracks), ("noise_sigma", noise_sigma),
                 ("salt_density", salt_density), ("tube_sigma_nm", tube_sigma),
                 ("max_curvature", max_curvature)):
        if v is not None:
            s[k] = list(v) if isinstance(v, tuple) else v
    try:
        sc = SynthConfig(**s, seed=int(cfg["seed"]))
    except (TypeError, ValueError) as e:
        raise click.UsageError(str(e)) from e
    vol, tracks = generate(sc)
    os.makedirs(out, exist_ok=True)
    save_volume(vol, os.path.join(out, "volume"))
    write_tracks(tracks, os.path.join(out, "gt_tracks.txt"), header={"synth": sc.to_dict()})
    _dump(os.path.join(out, "synth.json"), {"config": cfg, "synth": sc.to_dict(), "tracks": len(tracks)})
    click.echo(f"wrote {len(tracks)} tracks and a {vol.shape} volume to {out}")


@main.command()
@click.option("--volume", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--window1", callback=_triple)
@click.option("--window2", callback=_triple)
@click.option("--threshold", type=float)
@click.pass_context
def extract(ctx, volume, out, window1, window2, threshold):
    """Extract candidates by two NMS passes."""
    cfg = resolve(ctx, window1=window1, window2=window2, threshold=threshold)
    vol = load_volume(volume)
    nms = _nms(cfg)
    cands = extract_candidates(vol, nms)
    write_candidates(cands, out, source=os.path.basename(os.path.normpath(volume)), params=nms)
    click.echo(f"{len(cands)} candidates -> {out}")


def _theta_options(f):
    for name in reversed(THETAS):
        f = click.option("--" + name.replace("_", "-"), name, type=float)(f)
    return f


@main.command()
@click.option("--volume", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--candidates", "cand_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--stats", "stats_path", type=click.Path(dir_okay=False),
              help="Solver statistics (default: <out>.stats.json).")
@click.option("--blockwise", is_flag=True)
@click.option("--block-size", callback=_triple)
@click.option("--context-size", callback=_triple)
@click.option("--state-dir", type=click.Path(file_okay=False))
@click.option("--formulation", type=click.Choice(["triplet", "legacy"]))
@click.option("--triplet-only", is_flag=True, help="Legacy formulation with zero node and edge costs.")
@click.option("--backend", type=click.Choice(["auto", "bnb", "highs"]))
@click.option("--lp", "lp_path", type=click.Path(dir_okay=False), help="Also write the program in LP format.")
@_theta_options
@click.pass_context
def solve(ctx, volume, cand_path, out, stats_path, blockwise, block_size, context_size, state_dir,
          formulation, triplet_only, backend, lp_path, **thetas):
    """Build the candidate graph, solve, and write tracks."""
    cfg = resolve(ctx, block_size=block_size, context_size=context_size, formulation=formulation,
                  backend=backend, **thetas)
    vol = load_volume(volume)
    cands, header = read_candidates(cand_path)
    params = _params(cfg)
    stats_path = stats_path or out + ".stats.json"
    timing_path = out + ".timing.json"
    model = build_model(vol, cands, params)
    provenance = {"solve": params.to_dict(), "candidates": header}
    stats = {"config": cfg, "candidates": len(cands), "edges": int(model.graph.n_edges),
             "triplets": int(len(model.triplets)), "blockwise": bool(blockwise)}
    timing = {}
    if blockwise:
        if cfg["formulation"] != "triplet":
            raise click.UsageError("block-wise solving uses the triplet formulation")
        blocks = partition(vol.roi, voxels_to_nm(cfg["block_size"], vol.voxel_size),
                           voxels_to_nm(cfg["context_size"], vol.voxel_size))
        sched = schedule_phases(blocks)
        try:
            ts, rep = solve_blockwise(model, sched, workers=int(cfg["workers"]),
                                      state_dir=state_dir or out + ".state",
                                      time_limit=float(cfg["time_limit"]), backend=cfg["backend"])
        except BlockError as e:
            click.echo(f"error: {e}; solved blocks kept in {state_dir or out + '.state'}", err=True)
            sys.exit(EXIT_SOLVER)
        stats.update({"status": OPTIMAL, "blocks": rep["blocks"], "phases": rep["phases"],
                      "variables": sum(b["variables"] for b in rep["block_stats"]),
                      "constraints": sum(b["constraints"] for b in rep["block_stats"])})
        timing["blocks"] = [{"index": b["index"], "solve_time_s": b["solve_time_s"]} for b in rep["block_stats"]]
    else:
        problem = build_problem(model, cfg["formulation"], triplet_only)
        if lp_path:
            problem.write_lp(lp_path)
        sol = solve_exact(problem, time_limit=float(cfg["time_limit"]), backend=cfg["backend"])
        stats.update({"status": sol.status, "objective": sol.objective_value,
                      "variables": problem.n_vars, "constraints": len(problem.constraints),
                      "formulation": cfg["formulation"], "triplet_only": bool(triplet_only),
                      "bnb_nodes": sol.stats["bnb_nodes"], "highs_fallbacks": sol.stats["highs_fallbacks"]})
        timing["wall_time_s"] = sol.stats["wall_time_s"]
        if sol.status != OPTIMAL:
            _dump(stats_path, stats)
            _dump(timing_path, timing)
            click.echo(f"error: solver finished with status {sol.status}", err=True)
            sys.exit(EXIT_SOLVER)
        ts = decode_tracks(model.triplets, sol.selected_triplets, cands.positions)
        check_tracks(ts)
    tracks = tracks_from_trackset(ts)
    provenance["opened"] = [bool(c) for c in ts.opened]
    provenance["candidate_ids"] = [list(map(int, t)) for t in ts.tracks]
    write_tracks(tracks, out, header=provenance)
    stats["tracks"] = len(tracks)
    _dump(stats_path, stats)
    _dump(timing_path, timing)
    click.echo(f"{len(tracks)} tracks -> {out}")


@main.command()
@click.option("--tracks", "tracks_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--spacing", type=float, help="Resampling spacing in nm (default 40).")
@click.option("--max-dist", type=float, help="Matching distance cap in nm (default 80).")
@click.pass_context
def evaluate(ctx, tracks_path, gt_path, out, spacing, max_dist):
    """Edge precision, recall and F1 against ground truth."""
    cfg = resolve(ctx, spacing_nm=spacing, max_dist_nm=max_dist)
    rec, _ = read_tracks(tracks_path)
    gt, _ = read_tracks(gt_path)
    res = evaluate_tracks(rec, gt, cfg["spacing_nm"], cfg["max_dist_nm"])
    write_report(res, out, extra={"config": cfg, "tracks": os.path.basename(tracks_path),
                                  "gt": os.path.basename(gt_path)})
    click.echo(f"P={res.precision:.4f} R={res.recall:.4f} F1={res.f1:.4f}")


GRID_KEYS = THETAS + ("threshold",)


def _grid_rows(grid):
    keys = [k for k in GRID_KEYS if k in grid]
    bad = set(grid) - set(GRID_KEYS)
    if bad:
        raise click.UsageError(f"unsupported grid keys: {sorted(bad)}")
    values = [list(grid[k]) for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _run_combo(args):
    vol_path, gt_path, cfg, combo = args
    try:
        vol = load_volume(vol_path)
        gt, _ = read_tracks(gt_path)
        nms = dict(cfg["nms"])
        if "threshold" in combo:
            nms["threshold"] = combo["threshold"]
        solve_cfg = {**cfg["solve"], **{k: v for k, v in combo.items() if k in THETAS}}
        params = SolveParams(**solve_cfg)
        cands = extract_candidates(vol, NmsParams(**nms))
        model = build_model(vol, cands, params)
        sol = solve_exact(build_problem(model), time_limit=float(cfg["time_limit"]), backend=cfg["backend"])
        if sol.status != OPTIMAL:
            return {"error": f"solver status {sol.status}"}
        ts = decode_tracks(model.triplets, sol.selected_triplets, cands.positions)
        check_tracks(ts)
        r = evaluate_tracks(tracks_from_trackset(ts), gt, cfg["spacing_nm"], cfg["max_dist_nm"])
        return {"precision": r.precision, "recall": r.recall, "f1": r.f1, "tracks": len(ts),
                "candidates": len(cands)}
    except Exception as e:  # recorded per combination; the search continues
        return {"error": f"{type(e).__name__}: {e}"}


def grid_search(vol_path, gt_path, cfg, grid, workers=1):
    """Rank every combination of ``grid`` by F1 (ties keep grid order)."""
    combos = _grid_rows(grid)
    tasks = [(vol_path, gt_path, cfg, c) for c in combos]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_combo, tasks))
    else:
        results = [_run_combo(t) for t in tasks]
    rows = [{"combo": k, "params": c, **r} for k, (c, r) in enumerate(zip(combos, results))]
    ranked = sorted(rows, key=lambda r: (-(r.get("f1", -1.0)), r["combo"]))
    for rank, r in enumerate(ranked):
        r["rank"] = rank + 1
        r["best"] = rank == 0 and "f1" in r
    return ranked


@main.command("grid-search")
@click.option("--volume", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help='JSON object mapping parameter names to value lists, e.g. {"theta_S": [60, 180]}.')
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def grid_search_cmd(ctx, volume, gt_path, grid_path, out):
    """Evaluate a parameter grid end to end and rank it by F1."""
    cfg = resolve(ctx)
    with open(grid_path) as f:
        grid = json.load(f)
    ranked = grid_search(volume, gt_path, cfg, grid, workers=int(cfg["workers"]))
    _dump(out, {"config": cfg, "grid": grid, "rows": ranked})
    with open(os.path.splitext(out)[0] + ".tsv", "w") as f:
        keys = [k for k in GRID_KEYS if k in grid]
        f.write("\t".join(["rank", "best"] + keys + ["precision", "recall", "f1", "error"]) + "\n")
        for r in ranked:
            vals = [str(r["rank"]), "*" if r["best"] else ""] + [repr(r["params"][k]) for k in keys]
            vals += [f"{r[k]:.6f}" if k in r else "" for k in ("precision", "recall", "f1")]
            vals.append(r.get("error", ""))
            f.write("\t".join(vals) + "\n")
    best = ranked[0]
    click.echo(f"best F1={best.get('f1', float('nan')):.4f} with {best['params']}")


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--sizes", default="25,50,100", show_default=True)
@click.option("--reps", default=5, show_default=True)
@click.option("--volume", type=click.Path(exists=True, file_okay=False),
              help="Volume for the block benchmark (default: synthesize one).")
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--block-sizes", default="30,125,125;30,250,250;30,500,500", show_default=True)
@click.option("--skip-formulations", is_flag=True)
@click.option("--skip-blocks", is_flag=True)
@click.option("--skip-kernels", is_flag=True)
@click.option("--kernel-scale", default=1.0, show_default=True, help="Scale factor for kernel inputs.")
@_theta_options
@click.pass_context
def bench(ctx, out, sizes, reps, volume, gt_path, block_sizes, skip_formulations, skip_blocks,
          skip_kernels, kernel_scale, **thetas):
    """Formulation, block-size, and kernel benchmarks (plot-ready JSON)."""
    cfg = resolve(ctx, **thetas)
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seed"])
    limit = float(cfg["time_limit"]) or 10.0
    if not skip_formulations:
        recs = bench_mod.compare_formulations(
            [int(s) for s in sizes.split(",")], reps=reps, seed=seed, time_limit=limit
        )
        summary = bench_mod.summarize_formulations(recs)
        _dump(os.path.join(out, "formulations.json"), {"config": cfg, "records": recs, "summary": summary})
        for row in summary:
            click.echo(
                f"n={row['size']}: median triplet {row['median_triplet_time_s']:.4f}s, legacy "
                f"{row['median_legacy_time_s']:.4f}s, ratio {row['median_ratio']:.1f} "
                f"(legacy timeouts {row['legacy_timeouts']})"
            )
    if not skip_blocks:
        if volume:
            vol = load_volume(volume)
            gt = read_tracks(gt_path)[0] if gt_path else None
        else:
            vol, gt = generate(SynthConfig(**cfg["synth"], seed=seed))
        cands = extract_candidates(vol, _nms(cfg))
        model = build_model(vol, cands, _params(cfg))
        sizes_b = [tuple(int(v) for v in s.split(",")) for s in block_sizes.split(";")]
        margin = [(c - b) // 2 for b, c in zip(cfg["block_size"], cfg["context_size"])]
        rep = block_benchmark(model, vol.roi, vol.voxel_size, sizes_b, margin, gt=gt,
                              reference=cfg["block_size"], workers=int(cfg["workers"]),
                              time_limit=float(cfg["time_limit"]), backend=cfg["backend"],
                              evaluate_kw={"spacing_nm": cfg["spacing_nm"], "max_dist_nm": cfg["max_dist_nm"]})
        _dump(os.path.join(out, "blocks.json"), {"config": cfg, **rep})
        for row in rep["sizes"]:
            click.echo(f"block {row['block_size']}: median solve "
                       f"{row.get('median_block_solve_time_s', float('nan')):.4f}s, F1 {row.get('f1', float('nan')):.4f}")
    if not skip_kernels:
        kr = bench_mod.kernel_benchmark(
            seed=seed, n_lines=max(1, int(2000 * kernel_scale)), n_points=max(1, int(4000 * kernel_scale)),
            bnb_nodes=max(1, int(20000 * kernel_scale)),
        )
        _dump(os.path.join(out, "kernels.json"), kr)
        for row in kr["results"]:
            click.echo(f"kernels[{row['backend']}]: evid {row['evid_sum_s']:.4f}s, "
                       f"nms {row['nms_suppress_s']:.4f}s, bnb {row['bnb_search_s']:.4f}s")


if __name__ == "__main__":  # pragma: no cover
    main()
