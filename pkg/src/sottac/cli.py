"""Command-line entry point: multi-seed benchmark runs, wall-clock cost
benchmarking, and the numerical check suite.

Outputs are plain files: one CSV per (method, env, seed) with stable schema
``episode,return,critic_loss,grad_norm,screening,wall_ns``, a manifest JSON
with the effective config and cross-seed aggregates, and ``bench_<env>.csv``
for timing runs. Floats are written with ``repr`` so they round-trip
exactly; manifest aggregates are recomputable from the CSVs bit for bit.
Parallelism is one worker process per seed, capped by the core count and the
``SOTTAC_WORKERS`` environment variable; workers share nothing.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime
import io
import json
import math
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__
from .checks import CHECKS, run_checks
from .envs import _ENV_NAMES
from .trainer import METHODS, RunResult, TrainConfig, resolve_config, train

CSV_HEADER = ("episode", "return", "critic_loss", "grad_norm", "screening", "wall_ns")
DEFAULT_SEEDS = (42, 100, 2026, 777, 1234)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def result_rows(result: RunResult):
    """Per-episode CSV rows; batch-level values repeat across the batch's
    episodes, and warmup batches (critic only, no actor step) carry zeros."""
    cfg = result.config
    rows = []
    for i, ret in enumerate(result.returns):
        b = int(result.batch_of_episode[i])
        critic_loss = result.critic_losses[b] if b < len(result.critic_losses) else 0.0
        actor_idx = b - cfg.warmup_batches
        if 0 <= actor_idx < len(result.reports):
            rep = result.reports[actor_idx]
            grad_norm = rep.grad_norm
            screening = int(rep.screening_triggered)
            wall_ns = int(rep.wall_clock_ns)
        else:
            grad_norm, screening, wall_ns = 0.0, 0, 0
        rows.append((i, float(ret), float(critic_loss), float(grad_norm), screening, wall_ns))
    return rows


def write_run_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def csv_body_without_timing(path) -> str:
    """CSV body with the wall_ns column dropped: the determinism contract
    covers everything except timing measurements."""
    out = io.StringIO()
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            out.write(",".join(row[:-1]))
            out.write("\n")
    return out.getvalue()


def _worker_train(cfg_dict: dict):
    cfg = TrainConfig(**cfg_dict)
    result = train(cfg)
    rows = result_rows(result)
    screening_count = sum(1 for r in result.reports if r.screening_triggered)
    mean_step = (
        float(np.mean([r.wall_clock_ns for r in result.reports])) if result.reports else math.nan
    )
    return {
        "seed": cfg.seed,
        "rows": rows,
        "summary": result.summary,
        "total_wall_ns": result.total_wall_ns,
        "mean_step_ns": mean_step,
        "screening_count": screening_count,
    }


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("SOTTAC_WORKERS")
    limit = int(cap) if cap else n_jobs
    return max(1, min(n_jobs, os.cpu_count() or 1, limit))


def _run_many(cfg_dicts):
    """Run train() once per config, in parallel workers when allowed.
    Returns (results, failures) with results in input order."""
    workers = _worker_count(len(cfg_dicts))
    results = [None] * len(cfg_dicts)
    failures = []
    if workers == 1:
        for i, cd in enumerate(cfg_dicts):
            try:
                results[i] = _worker_train(cd)
            except Exception as exc:  # noqa: BLE001 - worker failures are reported
                failures.append((cd["seed"], repr(exc)))
        return results, failures
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_worker_train, cd): i for i, cd in enumerate(cfg_dicts)}
        for fut in concurrent.futures.as_completed(futures):
            i = futures[fut]
            try:
                results[i] = fut.result()
            except Exception as exc:  # noqa: BLE001
                failures.append((cfg_dicts[i]["seed"], repr(exc)))
    return results, failures


def build_config(args) -> TrainConfig:
    """Effective config: built-in presets, overridden by the JSON config
    file, overridden by CLI flags."""
    data = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            data.update(json.load(fh))
    flag_values = {
        "env": args.env,
        "method": getattr(args, "method", None),
        "total_episodes": args.episodes,
        "alpha": args.alpha,
        "lam": args.lam,
        "gamma": args.gamma,
        "weighting": args.weighting,
    }
    for key, value in flag_values.items():
        if value is not None:
            data[key] = value
    if getattr(args, "normalize_adv", False):
        data["normalize_adv"] = True
    if getattr(args, "enforce_step_bound", False):
        data["step_bound_enforce"] = True
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**data)


def _parse_seeds(text: str):
    return [int(s) for s in text.split(",") if s.strip() != ""]


def _aggregate(per_seed_rows):
    """Cross-seed per-episode mean/std of the return column."""
    lengths = [len(rows) for rows in per_seed_rows]
    n = min(lengths) if lengths else 0
    if n == 0:
        return [], []
    returns = np.array([[rows[i][1] for rows in per_seed_rows] for i in range(n)])
    return returns.mean(axis=1).tolist(), returns.std(axis=1).tolist()


_CONFIG_ERRORS = (ValueError, TypeError, OSError, json.JSONDecodeError)


def cmd_run(args) -> int:
    try:
        base = build_config(args)
        resolved = resolve_config(base)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seeds = _parse_seeds(args.seeds)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()

    cfg_dicts = [asdict(replace(resolved, seed=s)) for s in seeds]
    results, failures = _run_many(cfg_dicts)

    run_files = {}
    per_seed_rows = []
    wall_seconds = []
    for seed, res in zip(seeds, results):
        if res is None:
            continue
        name = f"returns_{resolved.method}_{resolved.env}_{seed}.csv"
        write_run_csv(os.path.join(out_dir, name), res["rows"])
        run_files[str(seed)] = name
        per_seed_rows.append(res["rows"])
        wall_seconds.append(res["total_wall_ns"] / 1e9)

    mean_ret, std_ret = _aggregate(per_seed_rows)
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    manifest = {
        "artifact_version": __version__,
        "config": {k: v for k, v in asdict(resolved).items() if k != "seed"},
        "seeds": [s for s in seeds if str(s) in run_files],
        "runs": run_files,
        "failures": [{"seed": s, "error": e} for s, e in failures],
        "aggregate": {
            "return_mean": mean_ret,
            "return_std": std_ret,
            "wall_clock_mean_s": float(np.mean(wall_seconds)) if wall_seconds else None,
            "wall_clock_std_s": float(np.std(wall_seconds)) if wall_seconds else None,
        },
        "started_at": started,
        "finished_at": finished,
    }
    manifest_path = os.path.join(out_dir, f"manifest_{resolved.method}_{resolved.env}.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for seed, err in failures:
        print(f"seed {seed} failed: {err}", file=sys.stderr)
    print(f"wrote {len(run_files)} run files and {os.path.basename(manifest_path)} to {out_dir}")
    return 1 if failures else 0


def cmd_bench(args) -> int:
    try:
        base = build_config(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.episodes is None:
        base = replace(base, total_episodes=200)
    methods = [base.method] if args.method else list(METHODS)
    seeds = _parse_seeds(args.seeds)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    medians = {}
    for method in methods:
        try:
            resolved = resolve_config(replace(base, method=method))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        cfg_dicts = [asdict(replace(resolved, seed=s)) for s in seeds]
        results, failures = _run_many(cfg_dicts)
        if failures:
            for seed, err in failures:
                print(f"{method} seed {seed} failed: {err}", file=sys.stderr)
            return 1
        per_method = []
        for seed, res in zip(seeds, results):
            rows.append((method, seed, res["total_wall_ns"] / 1e9, res["mean_step_ns"]))
            per_method.append(res["mean_step_ns"])
        medians[method] = float(np.median(per_method))

    path = os.path.join(out_dir, f"bench_{base.env}.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("method", "seed", "total_seconds", "mean_step_ns"))
        for method, seed, total_s, step_ns in rows:
            writer.writerow((method, seed, _fmt(float(total_s)), _fmt(float(step_ns))))
    ordering = sorted(medians, key=medians.get)
    print("per-update cost ordering (median mean_step_ns): " + " < ".join(ordering))
    for method in ordering:
        print(f"  {method}: {medians[method]:.0f} ns/update")
    print(f"wrote {os.path.basename(path)} to {out_dir}")
    return 0


def cmd_check(args) -> int:
    try:
        results = run_checks(only=args.only, d=args.d, trials=args.trials, seed=args.seed)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    all_ok = True
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"check {name}: {status} -- {detail}")
        all_ok = all_ok and ok
    return 0 if all_ok else 1


def _add_common(parser):
    parser.add_argument("--env", choices=_ENV_NAMES, default=None)
    parser.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS))
    parser.add_argument("--episodes", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default="results")
    parser.add_argument("--weighting", choices=("advantage", "q"), default=None)
    parser.add_argument("--normalize-adv", action="store_true")
    parser.add_argument("--enforce-step-bound", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sottac",
        description="Second-order two-timescale actor-critic benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one method across seeds, write CSVs + manifest")
    _add_common(p_run)
    p_run.add_argument("--method", choices=METHODS, default=None)
    p_run.set_defaults(fn=cmd_run)

    p_bench = sub.add_parser("bench", help="time all methods on one env with matched budgets")
    _add_common(p_bench)
    p_bench.add_argument("--method", choices=METHODS, default=None)
    p_bench.set_defaults(fn=cmd_bench)

    p_check = sub.add_parser("check", help="run the numerical verification suite")
    p_check.add_argument("--only", default=None, help=f"one of: {', '.join(CHECKS)}")
    p_check.add_argument("--d", type=int, default=16)
    p_check.add_argument("--trials", type=int, default=None)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
