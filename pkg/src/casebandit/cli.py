"""Command line interface: ``casebandit run|sweep|report|validate``.

Exit codes: 0 success, 1 usage or configuration error, 2 internal
consistency error.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import __version__
from . import bandit as bd
from . import engine as en
from ._backend import BACKEND
from .config import ExperimentConfig, build_env, build_policy, load_config, parse_config
from .errors import CaseBanditError, ConfigError

log = logging.getLogger("casebandit")

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2
OUT_ENV_VAR = "CASEBANDIT_OUT"
SWEEP_KEYS = ("policy.kind", "policy.alpha", "policy.k", "policy.eta")
MANIFEST_FORMAT = "casebandit-manifest/1"


def run_one(cfg: ExperimentConfig, seed: int) -> en.RunTrace:
    env = build_env(cfg, seed)
    policy = build_policy(cfg, env, seed)
    gate = None
    if cfg.discovery is not None:
        gate = bd.DiscoveryGate(cfg.discovery.metric_kind, cfg.discovery.budget)
    return en.run(env, policy, gate, cfg.run.T, seed, cfg.policy.K, cfg.policy.k, cfg.to_dict())


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _manifest(cfg, seeds, files):
    return {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "backend": BACKEND,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seeds": seeds,
        "files": files,
    }


def _resolve_out(out, cfg):
    out = out or cfg.output.directory or os.environ.get(OUT_ENV_VAR) or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def execute_run(cfg: ExperimentConfig, out: str, seed_offset: int = 0, window: int | None = None):
    """Run every seed and write traces, summary and manifest into ``out``."""
    window = window or cfg.run.window
    seeds = [s + seed_offset for s in cfg.run.seeds]
    files, summaries, curves = {}, [], {}
    for seed in seeds:
        try:
            trace = run_one(cfg, seed)
        except CaseBanditError as exc:
            partial = getattr(exc, "partial_trace", None)
            if partial is not None and partial.records:
                _write_atomic(os.path.join(out, f"trace_seed{seed}.partial.csv"), en.trace_to_csv(partial))
            raise
        name = f"trace_seed{seed}.csv"
        text = en.trace_to_csv(trace)
        if "csv" in cfg.output.formats:
            _write_atomic(os.path.join(out, name), text)
            files[name] = {"seed": seed, "sha256": _sha(text.encode())}
        s = en.summary(trace, window)
        summaries.append(s)
        w = min(window, cfg.run.T)
        curves[str(seed)] = {
            "success": [float(v) for v in en.success_curve(trace, w)],
            "pseudo_regret": [float(v) for v in en.pseudo_regret(trace)],
        }
        log.info("seed %d done in %.2fs: success %.4f", seed, trace.wall_time, s["success_rate"])
    agg = {}
    for key in ("success_rate", "final_window_success", "R_T", "sum_delta", "sum_rho"):
        vals = np.array([s[key] for s in summaries])
        agg[key] = {"mean": float(vals.mean()), "sd": float(vals.std())}
    summary = {"config_hash": cfg.digest(), "window": window, "per_seed": summaries,
               "aggregate": agg, "curves": curves}
    if "json" in cfg.output.formats:
        text = json.dumps(summary, indent=1, sort_keys=True) + "\n"
        _write_atomic(os.path.join(out, "summary.json"), text)
        files["summary.json"] = {"sha256": _sha(text.encode())}
    run_cfg = copy.deepcopy(cfg)
    run_cfg.run.seeds = seeds
    run_cfg.run.window = window
    _write_atomic(os.path.join(out, "manifest.json"),
                  json.dumps(_manifest(run_cfg, seeds, files), indent=1, sort_keys=True) + "\n")
    return summary


def _fail(exc):
    code = EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_INTERNAL
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log per-seed progress to stderr.")
def main(verbose):
    """Case-based deployment-time learning experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Experiment config or run manifest (JSON). Defaults to an all-default config.")
@click.option("--out", type=click.Path(), default=None, help=f"Output directory (or ${OUT_ENV_VAR}).")
@click.option("--seed-offset", type=int, default=0, show_default=True)
@click.option("--window", type=int, default=None, help="Success-curve window (default: config).")
def run(config_path, out, seed_offset, window):
    """Run one experiment per configured seed."""
    try:
        cfg = load_config(config_path) if config_path else parse_config({})
        out = _resolve_out(out, cfg)
        summary = execute_run(cfg, out, seed_offset, window)
    except CaseBanditError as exc:
        _fail(exc)
    agg = summary["aggregate"]
    click.echo(f"wrote {out}: success {agg['success_rate']['mean']:.4f} "
               f"+- {agg['success_rate']['sd']:.4f}, R_T {agg['R_T']['mean']:.2f}")


def _grid_points(grid: dict, max_runs: int, n_seeds: int):
    if not grid:
        raise ConfigError("grid is empty", "grid")
    for key, vals in grid.items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"cannot sweep this key (allowed: {', '.join(SWEEP_KEYS)})", f"grid.{key}")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("expected a nonempty list", f"grid.{key}")
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    total = len(points) * n_seeds
    if total > max_runs:
        raise ConfigError(f"grid expands to {total} runs, above the cap of {max_runs}", "grid")
    return points


def _apply_point(base: dict, point: dict) -> ExperimentConfig:
    data = copy.deepcopy(base)
    for key, val in point.items():
        block, name = key.split(".")
        data[block][name] = val
    return parse_config(data)


def _sweep_job(args):
    data, seed, window = args
    cfg = parse_config(data)
    trace = run_one(cfg, seed)
    s = en.summary(trace, min(window, cfg.run.T))
    return s


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--grid", "grid_spec", required=True,
              help='JSON object or path to one, e.g. \'{"policy.alpha": [0.0, 0.1]}\'.')
@click.option("--out", type=click.Path(), default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--seed-offset", type=int, default=0, show_default=True)
@click.option("--window", type=int, default=None)
@click.option("--max-runs", type=int, default=500, show_default=True)
def sweep(config_path, grid_spec, out, jobs, seed_offset, window, max_runs):
    """Run the cross product of a parameter grid and emit one CSV row per run."""
    try:
        cfg = load_config(config_path) if config_path else parse_config({})
        if os.path.exists(grid_spec):
            with open(grid_spec) as fh:
                grid_spec = fh.read()
        try:
            grid = json.loads(grid_spec)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc})", "grid") from exc
        if not isinstance(grid, dict):
            raise ConfigError("expected an object", "grid")
        seeds = [s + seed_offset for s in cfg.run.seeds]
        window = window or cfg.run.window
        points = _grid_points(grid, max_runs, len(seeds))
        base = cfg.to_dict()
        jobs_args, meta = [], []
        for point in points:
            pcfg = _apply_point(base, point)
            for seed in seeds:
                jobs_args.append((pcfg.to_dict(), seed, window))
                meta.append((pcfg, seed))
        out = _resolve_out(out, cfg)
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_sweep_job, jobs_args))
        else:
            results = [_sweep_job(a) for a in jobs_args]
    except CaseBanditError as exc:
        _fail(exc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(SWEEP_KEYS) + ["seed", "final_success", "success_rate", "R_T", "sum_delta", "sum_rho"])
    for (pcfg, seed), s in zip(meta, results):
        w.writerow([pcfg.policy.kind, repr(pcfg.policy.alpha), pcfg.policy.k, repr(pcfg.policy.eta), seed,
                    repr(s["final_window_success"]), repr(s["success_rate"]), repr(s["R_T"]),
                    repr(s["sum_delta"]), repr(s["sum_rho"])])
    text = buf.getvalue()
    _write_atomic(os.path.join(out, "sweep.csv"), text)
    man = _manifest(cfg, seeds, {"sweep.csv": {"sha256": _sha(text.encode())}})
    man["grid"] = grid
    man["window"] = window
    _write_atomic(os.path.join(out, "manifest.json"), json.dumps(man, indent=1, sort_keys=True) + "\n")
    click.echo(f"wrote {len(results)} rows to {os.path.join(out, 'sweep.csv')}")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            out.update(_flatten(v, key))
        else:
            out[key] = v
    return out


def _trace_config(path):
    man_path = os.path.join(os.path.dirname(os.path.abspath(path)), "manifest.json")
    if not os.path.exists(man_path):
        raise ConfigError("no manifest.json next to the trace", path)
    with open(man_path) as fh:
        man = json.load(fh)
    entry = man.get("files", {}).get(os.path.basename(path), {})
    cfg = _flatten(man["config"])
    for key in ("run.seeds", "output.directory"):
        cfg.pop(key, None)
    return cfg, entry.get("seed", 0), man["config"]["env"]["kind"]


def _curve_rows(series_list):
    n = min(len(s) for s in series_list)
    M = np.vstack([np.asarray(s[:n]) for s in series_list])
    return M.mean(axis=0), M.std(axis=0), M.shape[0]


@main.command()
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
@click.option("--window", type=int, default=None)
def report(traces, out, window):
    """Aggregate traces of one configuration into mean/sd curves."""
    try:
        infos = [_trace_config(p) for p in traces]
        ref = infos[0][0]
        for p, (cfg, _, _) in zip(traces, infos):
            diff = sorted(k for k in set(ref) | set(cfg) if ref.get(k) != cfg.get(k))
            if diff:
                raise ConfigError(f"traces come from different configs; differing keys: {', '.join(diff)}", p)
        window = window or ref.get("run.window", 200)
        succ, regret = [], []
        for p, (_, seed, kind) in zip(traces, infos):
            with open(p) as fh:
                tr = en.trace_from_csv(fh.read(), seed=seed, env_kind=kind)
            window = min(window, len(tr.records))
            succ.append(en.success_curve(tr, window))
            regret.append(en.pseudo_regret(tr))
        out = out or os.environ.get(OUT_ENV_VAR) or "."
        os.makedirs(out, exist_ok=True)
        # a window-w success point covers steps (s-w, s], so label it by its last step
        for name, series, start in (("success_curve.csv", succ, window), ("regret_curve.csv", regret, 1)):
            mean, sd, n = _curve_rows(series)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["step", "mean", "sd", "n"])
            for i, (mu, s) in enumerate(zip(mean, sd)):
                w.writerow([start + i, repr(float(mu)), repr(float(s)), n])
            _write_atomic(os.path.join(out, name), buf.getvalue())
    except CaseBanditError as exc:
        _fail(exc)
    click.echo(f"aggregated {len(traces)} traces into {out}")


@main.command(name="validate")
@click.option("--inject-inverse-fault", is_flag=True, hidden=True)
def validate_cmd(inject_inverse_fault):
    """Run the built-in oracle suites and report pass/fail per suite."""
    from .validate import run_all

    results = run_all(inject_inverse_fault)
    for name, ok, detail in results:
        click.echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    ok = all(r[1] for r in results)
    click.echo(f"backend: {BACKEND}")
    click.echo("all suites passed" if ok else "some suites failed")
    sys.exit(EXIT_OK if ok else EXIT_INTERNAL)


if __name__ == "__main__":
    main()
