"""Batch runner and artifact emission.

Subcommands: `run` executes a batch of episodes and writes per-episode
JSON/CSV artifacts plus an aggregate summary and report figures; `compare`
builds a paired-seed comparison table across run directories; `heatmap`
renders the image-plane feature histogram of a single episode.

All numeric CSV output uses 9 significant digits; JSON is emitted with
sorted keys so identical runs produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import report
from .config import SCHEMA_VERSION, ConfigError, config_from_dict, config_to_dict, parse_config
from .frontier import MODES
from .sim import EpisodeConfig, EpisodeMetrics, FrameRecord, feature_heatmap, run_episode
from .worldgen import TEXTURE_LEVELS

PROGRESS_BINS = 20


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


# ---------------------------------------------------------------------------
# episode serialization


def metrics_to_dict(metrics: EpisodeMetrics, config: EpisodeConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(config),
        "seed": metrics.seed,
        "mode": metrics.mode,
        "texture_level": metrics.texture_level,
        "final_rate": metrics.final_rate,
        "sim_time": metrics.sim_time,
        "max_drift": metrics.max_drift,
        "stalled": metrics.stalled,
        "target_rate": metrics.target_rate,
        "success": {f"{th:g}": bool(v) for th, v in sorted(metrics.success.items())},
        "coverage_at_threshold": {f"{th:g}": v for th, v
                                  in sorted(metrics.coverage_at_threshold.items())},
        "feature_positions": {str(fid): [float(c) for c in p]
                              for fid, p in sorted(metrics.feature_positions.items())},
        "frames": [
            {
                "time": f.time,
                "position": [float(c) for c in f.position],
                "yaw": f.yaw,
                "tracked": {str(k): v for k, v in sorted(f.tracked.items())},
                "drift_norm": f.drift_norm,
                "exploration_rate": f.exploration_rate,
            }
            for f in metrics.frames
        ],
    }


def metrics_from_dict(doc: dict) -> tuple:
    """Rebuild (EpisodeMetrics, EpisodeConfig) from an episode JSON document."""
    config = config_from_dict(doc["config"])
    frames = [
        FrameRecord(
            f["time"], np.array(f["position"]), f["yaw"],
            {int(k): v for k, v in f["tracked"].items()},
            f["drift_norm"], f["exploration_rate"],
        )
        for f in doc["frames"]
    ]
    metrics = EpisodeMetrics(
        frames,
        {int(k): np.array(v) for k, v in doc["feature_positions"].items()},
        doc["final_rate"], doc["sim_time"], doc["max_drift"],
        {float(k): v for k, v in doc["coverage_at_threshold"].items()},
        {float(k): v for k, v in doc["success"].items()},
        doc["stalled"], doc["mode"], doc["texture_level"], doc["seed"],
        doc["target_rate"],
    )
    return metrics, config


def write_frames_csv(metrics: EpisodeMetrics, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("time,x,y,z,yaw,tracked_count,tracked_quality,drift_norm,exploration_rate\n")
        for f in metrics.frames:
            row = [f.time, *f.position, f.yaw, f.tracked_count, f.tracked_quality,
                   f.drift_norm, f.exploration_rate]
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_heatmap_csv(hist: np.ndarray, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(f"bin{j}" for j in range(hist.shape[1])) + "\n")
        for row in hist:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _dump_json(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# batch execution


def tracked_progress_curve(metrics: EpisodeMetrics, bins: int = PROGRESS_BINS) -> np.ndarray:
    """Mean tracked count per normalized-progress bin (NaN for empty bins)."""
    rates = np.array([f.exploration_rate for f in metrics.frames])
    counts = np.array([f.tracked_count for f in metrics.frames], dtype=float)
    top = rates[-1] if rates[-1] > 0 else 1.0
    progress = np.clip(rates / top, 0.0, 1.0)
    idx = np.minimum((progress * bins).astype(int), bins - 1)
    out = np.full(bins, np.nan)
    for b in range(bins):
        sel = idx == b
        if np.any(sel):
            out[b] = counts[sel].mean()
    return out


def run_one(config: EpisodeConfig) -> dict:
    metrics = run_episode(config)
    return metrics_to_dict(metrics, config)


def run_batch(config: EpisodeConfig, mode: str, texture: str, seeds: list,
              out_dir: str, jobs: int = 1, render: bool = True) -> dict:
    """Run all seeds, write per-episode artifacts and summary.json; returns
    the summary document (which never contains wall-clock values)."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = sorted(set(int(s) for s in seeds))
    configs = [dataclasses.replace(
        config, seed=s, texture_level=texture,
        params=dataclasses.replace(config.params, mode=mode)) for s in seeds]

    episode_docs = {}
    errors = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cfg, result in zip(configs, pool.map(_run_one_safe, configs)):
                if isinstance(result, str):
                    errors.append({"seed": cfg.seed, "error": result})
                else:
                    episode_docs[cfg.seed] = result
    else:
        for cfg in configs:
            result = _run_one_safe(cfg)
            if isinstance(result, str):
                errors.append({"seed": cfg.seed, "error": result})
            else:
                episode_docs[cfg.seed] = result

    curves = []
    tracked_rows = []
    for seed in seeds:
        if seed not in episode_docs:
            continue
        doc = episode_docs[seed]
        metrics, cfg = metrics_from_dict(doc)
        stem = f"{seed}_{mode}"
        _dump_json(doc, os.path.join(out_dir, f"episode_{stem}.json"))
        write_frames_csv(metrics, os.path.join(out_dir, f"frames_{stem}.csv"))
        hist = feature_heatmap(metrics, cfg.camera)
        write_heatmap_csv(hist, os.path.join(out_dir, f"heatmap_{stem}.csv"))
        curves.append({"seed": seed,
                       "curve": [[f.time, f.exploration_rate] for f in metrics.frames]})
        tracked_rows.append(tracked_progress_curve(metrics))

    summary = _summarize(episode_docs, errors, config, mode, texture, seeds, tracked_rows)
    _dump_json(summary, os.path.join(out_dir, "summary.json"))

    if render and curves:
        report.render_exploration_curves(
            curves, os.path.join(out_dir, "exploration_curves.png"))
        agg = summary["aggregate"]["tracked_curve"]
        report.render_tracked_band(
            np.array(agg["progress"]), np.array(agg["mean"]), np.array(agg["std"]),
            os.path.join(out_dir, "tracked_band.png"), label=mode)
    return summary


def _run_one_safe(config: EpisodeConfig):
    try:
        return run_one(config)
    except Exception as err:  # noqa: BLE001 - per-episode isolation
        return f"{type(err).__name__}: {err}"


def _summarize(episode_docs: dict, errors: list, config: EpisodeConfig, mode: str,
               texture: str, seeds: list, tracked_rows: list) -> dict:
    thresholds = config.thresholds
    eps = [episode_docs[s] for s in seeds if s in episode_docs]
    agg_success = {}
    agg_cov = {}
    for th in thresholds:
        key = f"{th:g}"
        flags = [1.0 if d["success"][key] else 0.0 for d in eps]
        covs = [d["coverage_at_threshold"].get(key, d["final_rate"]) for d in eps]
        agg_success[key] = _mean_std(flags)
        agg_cov[key] = _mean_std(covs)
    if tracked_rows:
        stack = np.ma.masked_invalid(np.vstack(tracked_rows))
        mean = np.asarray(stack.mean(axis=0).filled(0.0))
        std = np.asarray(stack.std(axis=0).filled(0.0))
    else:
        mean = np.zeros(PROGRESS_BINS)
        std = np.zeros(PROGRESS_BINS)
    progress = (np.arange(PROGRESS_BINS) + 0.5) / PROGRESS_BINS
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "texture_level": texture,
        "seeds": seeds,
        "config": config_to_dict(config),
        "episodes": [
            {k: episode_docs[s][k] for k in
             ("seed", "final_rate", "sim_time", "max_drift", "stalled",
              "success", "coverage_at_threshold")}
            for s in seeds if s in episode_docs
        ],
        "errors": errors,
        "aggregate": {
            "success_rate": agg_success,
            "coverage_at_threshold": agg_cov,
            "final_rate": _mean_std([d["final_rate"] for d in eps]),
            "tracked_curve": {
                "progress": progress.tolist(),
                "mean": mean.tolist(),
                "std": std.tolist(),
            },
        },
    }


def _mean_std(vals: list) -> dict:
    if not vals:
        return {"mean": 0.0, "std": 0.0}
    arr = np.asarray(vals, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


# ---------------------------------------------------------------------------
# comparison


def compare_modes(summaries: list) -> list:
    """Paired-seed comparison rows, one per mode, in canonical mode order;
    appends the relative coverage gain of full over greedy when both exist."""
    if not summaries:
        raise ValueError("no summaries to compare")
    seed_sets = {tuple(s["seeds"]) for s in summaries}
    if len(seed_sets) != 1:
        raise ValueError(f"summaries cover different seed sets: {sorted(seed_sets)}")
    by_mode = {}
    for s in summaries:
        if s["mode"] in by_mode:
            raise ValueError(f"duplicate summaries for mode {s['mode']!r}")
        by_mode[s["mode"]] = s
    thresholds = sorted(float(k) for k in
                        next(iter(by_mode.values()))["aggregate"]["success_rate"])
    rows = []
    for mode in MODES:
        if mode not in by_mode:
            continue
        agg = by_mode[mode]["aggregate"]
        row = {"mode": mode, "texture_level": by_mode[mode]["texture_level"]}
        for th in thresholds:
            key = f"{th:g}"
            row[f"success@{th:g}"] = agg["success_rate"][key]["mean"]
            row[f"coverage@{th:g}"] = agg["coverage_at_threshold"][key]["mean"]
        row["final_rate"] = agg["final_rate"]["mean"]
        rows.append(row)
    if "full" in by_mode and "greedy" in by_mode:
        th0 = f"{thresholds[0]:g}"
        full_cov = by_mode["full"]["aggregate"]["coverage_at_threshold"][th0]["mean"]
        greedy_cov = by_mode["greedy"]["aggregate"]["coverage_at_threshold"][th0]["mean"]
        gain = (full_cov - greedy_cov) / greedy_cov if greedy_cov > 0 else 0.0
        for row in rows:
            row[f"rel_coverage_gain_full_vs_greedy@{th0}"] = gain
    return rows


def write_comparison_csv(rows: list, path: str) -> None:
    if not rows:
        raise ValueError("empty comparison")
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(
                str(row[c]) if isinstance(row[c], str) else _fmt(row[c])
                for c in cols) + "\n")


# ---------------------------------------------------------------------------
# click surface


@click.group()
def main():
    """Perception-aware exploration batch runner."""


def _parse_seeds(spec: str) -> list:
    if ".." in spec:
        a, b = spec.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(tok) for tok in spec.split(",") if tok]


@main.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON episode config; defaults apply when omitted.")
@click.option("--mode", type=click.Choice(MODES), default="full")
@click.option("--texture", type=click.Choice(TEXTURE_LEVELS), default="low")
@click.option("--seeds", default="1..5", help="Range a..b or comma list.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--jobs", type=int, default=1, help="Parallel episode workers.")
@click.option("--report/--no-report", "render", default=True,
              help="Render figures alongside the delimited output.")
def cmd_run(config_path, mode, texture, seeds, out_dir, jobs, render):
    """Run a batch of episodes and write artifacts to --out."""
    try:
        config = parse_config(config_path) if config_path else EpisodeConfig()
    except ConfigError as err:
        raise click.ClickException(str(err))
    summary = run_batch(config, mode, texture, _parse_seeds(seeds), out_dir,
                        jobs=jobs, render=render)
    for th, stats in summary["aggregate"]["success_rate"].items():
        click.echo(f"success@{th} m: {stats['mean']:.2f} +/- {stats['std']:.2f}")
    if summary["errors"]:
        for e in summary["errors"]:
            click.echo(f"episode seed {e['seed']} failed: {e['error']}", err=True)
        sys.exit(1)


@main.command("compare")
@click.option("--in", "in_dirs", type=click.Path(exists=True), multiple=True,
              required=True, help="Run directories containing summary.json.")
@click.option("--out", "out_path", type=click.Path(), default="comparison.csv")
@click.option("--report/--no-report", "render", default=True)
def cmd_compare(in_dirs, out_path, render):
    """Build a paired-seed mode comparison table."""
    summaries = []
    for d in in_dirs:
        with open(os.path.join(d, "summary.json")) as fh:
            summaries.append(json.load(fh))
    try:
        rows = compare_modes(summaries)
    except ValueError as err:
        raise click.ClickException(str(err))
    write_comparison_csv(rows, out_path)
    if render and rows:
        thresholds = sorted(float(k.split("@")[1]) for k in rows[0]
                            if k.startswith("success@"))
        report.render_mode_comparison(
            rows, thresholds, os.path.splitext(out_path)[0] + ".png")
    click.echo(f"wrote {out_path}")


@main.command("heatmap")
@click.option("--episode", "episode_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_heatmap(episode_path, out_path):
    """Render the tracked-feature image-plane histogram of one episode."""
    with open(episode_path) as fh:
        doc = json.load(fh)
    metrics, config = metrics_from_dict(doc)
    hist = feature_heatmap(metrics, config.camera)
    if out_path is None:
        out_path = os.path.splitext(episode_path)[0] + "_heatmap.png"
    report.render_heatmap(hist, out_path,
                          title=f"seed {metrics.seed}, mode {metrics.mode}")
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
