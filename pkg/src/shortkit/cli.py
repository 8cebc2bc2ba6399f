"""``shortkit`` command-line interface.

Commands: gen, sweep, analyze, compare, selftest. Exit codes are 0 on
success, 2 for configuration or validation errors, 3 for I/O errors and 4
for numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, build_splits, generate
from .datagen import dataset_stats
from .errors import ConfigError, InputError, ShortkitError
from .fairness import FAIRNESS_METRICS, percent_change_per_delta
from .selftest import run_selftest
from .short import AnalysisSpec, compare_short, point_seed, run_sweep, short_test
from .sweepio import (atomic_write_json, atomic_write_text, encoding_kinds, format_sweep_csv, parse_sweep_csv,
                      read_sweep_csv)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SEED_ENV = "SHORTKIT_SEED"


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Shared plumbing


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def load_config(args) -> ExperimentConfig:
    """Config file (or defaults), then SHORTKIT_SEED, then --seed / --output flags."""
    if getattr(args, "config", None):
        try:
            cfg = ExperimentConfig.load(args.config)
        except FileNotFoundError:
            raise CLIError(f"config file {args.config} does not exist", EXIT_CONFIG) from None
        except OSError as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}", EXIT_IO) from None
    else:
        cfg = ExperimentConfig()
    seed = cfg.seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            seed = _u64(env)
        except argparse.ArgumentTypeError as exc:
            raise CLIError(f"{SEED_ENV}: {exc}", EXIT_CONFIG) from None
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    changes = {"seed": seed}
    if getattr(args, "output", None):
        changes["output"] = args.output
    return cfg.replace(**changes)


def output_dir(path) -> Path:
    """Create the output directory if needed and make sure it is writable."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {out}: {exc}", EXIT_IO) from None
    if not os.access(out, os.W_OK | os.X_OK):
        raise CLIError(f"output directory {out} is not writable", EXIT_IO)
    return out


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    cfg = load_config(args)
    out = output_dir(cfg.output)
    splits, sub = build_splits(cfg.data, cfg.seed)
    raw = generate(cfg.data, cfg.seed)
    files = {}
    for name, ds in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        path = out / f"{name}.csv"
        ds.to_csv(path)
        files[name] = path.name
    lines = ["split,n,n_pos,n_neg,prevalence,mean_a_pos,mean_a_neg,sd_a_pos,sd_a_neg,gap"]
    stats = {}
    for name, ds in (("all", raw), ("train", splits.train), ("val", splits.val), ("test", splits.test)):
        st = dataset_stats(ds)
        stats[name] = st.to_dict()
        d = st.to_dict()
        lines.append(",".join([name] + [repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in
                                        ("n", "n_pos", "n_neg", "prevalence", "mean_a_pos", "mean_a_neg",
                                         "sd_a_pos", "sd_a_neg", "gap")]))
    atomic_write_text(out / "dataset_stats.csv", "\n".join(lines) + "\n")
    sidecar = {
        "tool_version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "data": cfg.to_dict()["data"],
        "attribute_kind": splits.attribute_kind,
        "subsample": None if sub is None else asdict(sub),
        "files": files,
    }
    atomic_write_json(out / "dataset.json", _jsonable(sidecar))
    gap = stats["train"]["gap"]
    print(f"wrote {', '.join(files.values())} to {out}; train n={stats['train']['n']} "
          f"prevalence={stats['train']['prevalence']:.3f} class attribute gap={gap:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _grid_keys(cfg: ExperimentConfig) -> tuple[list[float], list[tuple[int, int]]]:
    grid = cfg.sweep.grid()
    return grid, [(li, ri) for li in range(len(grid)) for ri in range(cfg.sweep.replicates)]


def _load_partial(out: Path, cfg: ExperimentConfig, grid: list[float]) -> dict:
    """Completed points of an interrupted run keyed by (lambda index, replicate)."""
    manifest_path, csv_path = out / "manifest.json", out / "sweep.csv"
    if not manifest_path.exists() and not csv_path.exists():
        return {}
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        points = parse_sweep_csv(csv_path.read_text(encoding="utf-8"), str(csv_path))
    except (OSError, ValueError, InputError) as exc:
        raise CLIError(f"existing output in {out} is unreadable or corrupt ({exc}); rerun with --fresh", EXIT_IO)
    if manifest.get("config_hash") != cfg.hash():
        raise CLIError(f"existing output in {out} was produced by a different config; rerun with --fresh", EXIT_IO)
    index = {lam: i for i, lam in enumerate(grid)}
    done = {}
    for p in points:
        li = index.get(p.lam)
        if li is None or not 0 <= p.replicate < cfg.sweep.replicates or p.seed != point_seed(cfg.seed, li, p.replicate):
            raise CLIError(f"{csv_path} contains a row inconsistent with the manifest; rerun with --fresh", EXIT_IO)
        p.lambda_index = li
        done[(li, p.replicate)] = p
    recorded = {tuple(int(v) for v in k.split(":")) for k in manifest.get("completed", [])}
    if recorded != set(done):
        raise CLIError(f"{csv_path} and the manifest disagree on completed points; rerun with --fresh", EXIT_IO)
    return done


def _sweep_worker(payload):
    cfg_dict, keys = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    splits, _ = build_splits(cfg.data, cfg.seed)
    grid, all_keys = _grid_keys(cfg)
    skip = set(all_keys) - set(keys)
    points, _ = run_sweep(splits, cfg.sweep, _network(cfg, splits), cfg.model.train, cfg.model.probe,
                          cfg.analysis, cfg.seed, skip=skip, allow_degenerate=True)
    return points


def _network(cfg: ExperimentConfig, splits):
    return cfg.model.network(splits.train.n_features, splits.attribute_kind)


def _write_sweep_state(out: Path, cfg: ExperimentConfig, grid, keys, done: dict, started: str, finished: bool):
    ordered = [done[k] for k in keys if k in done]
    csv_text = format_sweep_csv(ordered)
    atomic_write_text(out / "sweep.csv", csv_text)
    manifest = {
        "tool_version": __version__,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "master_seed": cfg.seed,
        "lambda_grid": grid,
        "replicates": cfg.sweep.replicates,
        "point_seeds": {f"{li}:{ri}": point_seed(cfg.seed, li, ri) for li, ri in keys},
        "completed": [f"{li}:{ri}" for li, ri in keys if (li, ri) in done],
        "complete": finished,
        "started_at": started,
        "updated_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "files": {"sweep.csv": hashlib.sha256(csv_text.encode("utf-8")).hexdigest()},
    }
    atomic_write_json(out / "manifest.json", _jsonable(manifest))


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    out = output_dir(cfg.output)
    grid, keys = _grid_keys(cfg)
    if args.fresh:
        for name in ("sweep.csv", "manifest.json"):
            if (out / name).exists():
                (out / name).unlink()
    done = _load_partial(out, cfg, grid)
    if done:
        _log(f"resuming: {len(done)} of {len(keys)} points already complete")
    todo = [k for k in keys if k not in done]
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    chunk = cfg.sweep.chunk_size or max(1, len(todo))

    def record(points):
        for p in points:
            done[(p.lambda_index, p.replicate)] = p
            enc = "nan" if p.encoding is None else f"{p.encoding.value:.4f}"
            status = f"excluded ({p.exclude_reason})" if p.excluded else "ok"
            _log(f"[{len(done)}/{len(keys)}] lambda={p.lam:+.4g} replicate={p.replicate} "
                 f"auc={p.clinical_auc:.4f} encoding={enc} {status}")
        _write_sweep_state(out, cfg, grid, keys, done, started, len(done) == len(keys))

    if todo:
        chunks = [todo[i:i + chunk] for i in range(0, len(todo), chunk)]
        if args.jobs > 1 and len(chunks) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for points in pool.map(_sweep_worker, [(cfg.to_dict(), c) for c in chunks]):
                    record(points)
        else:
            splits, _ = build_splits(cfg.data, cfg.seed)
            skip = set(done)
            run_sweep(splits, cfg.sweep, _network(cfg, splits), cfg.model.train, cfg.model.probe, cfg.analysis,
                      cfg.seed, skip=skip, on_chunk=record, allow_degenerate=True)
    else:
        _write_sweep_state(out, cfg, grid, keys, done, started, True)
    n_excl = sum(p.excluded for p in done.values())
    print(f"wrote {out / 'sweep.csv'} ({len(done)} points, {n_excl} excluded)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _analysis_from(args, cfg: ExperimentConfig, kind: str) -> tuple[str, float, AnalysisSpec]:
    attribute_kind = "binary" if kind == "auroc" else "continuous"
    metric = args.metric or cfg.analysis.metric or cfg.sweep.metric_for(attribute_kind)
    if metric not in FAIRNESS_METRICS:
        raise CLIError(f"unknown metric {metric!r}; choose from {', '.join(FAIRNESS_METRICS)}", EXIT_CONFIG)
    if metric == "equalized_odds" and attribute_kind != "binary":
        raise CLIError("equalized_odds needs a binary attribute but this sweep has a continuous one", EXIT_CONFIG)
    alpha = cfg.analysis.alpha if args.alpha is None else args.alpha
    if not 0 < alpha < 1:
        raise CLIError("alpha must lie in (0, 1)", EXIT_CONFIG)
    return metric, alpha, cfg.analysis


def _sweep_points(path):
    points = read_sweep_csv(path)
    kinds = encoding_kinds(points)
    if len(kinds) > 1:
        raise InputError(f"{path}: mixed encoding kinds {sorted(kinds)}")
    if not kinds:
        raise InputError(f"{path}: no point carries an encoding value")
    return points, kinds.pop()


def _report(points, verdict, metric: str, delta: float) -> tuple[str, str]:
    """Human-readable report plus the encoding-vs-fairness table (CSV)."""
    included = set(verdict.included)
    rows = ["lambda,replicate,encoding,fairness,separation_pct_per_delta,clinical_auc,included"]
    for p in points:
        enc = math.nan if p.encoding is None else p.encoding.value
        pct = percent_change_per_delta(p.fairness.separation, delta) * 100 if math.isfinite(
            p.fairness.separation) else math.nan
        rows.append(f"{p.lam!r},{p.replicate},{enc!r},{p.fairness.value(metric)!r},{pct!r},{p.clinical_auc!r},"
                    f"{'true' if (p.lam, p.replicate) in included else 'false'}")
    table = "\n".join(rows) + "\n"
    sep = np.array([p.fairness.separation for p in points if (p.lam, p.replicate) in included])
    sep = sep[np.isfinite(sep)]
    lines = [
        "ShorT report",
        f"  metric: {metric}; encoding: {verdict.encoding_kind} (expected sign {verdict.expected_sign})",
        f"  points: {verdict.n_included} included, {verdict.n_excluded} excluded",
        f"  Spearman rho = {verdict.rho:+.4f}, two-sided p = {verdict.p_two_sided:.3g} "
        f"(alpha = {verdict.alpha}, n = {verdict.n_included}, metric = {metric})",
        f"  shortcut detected: {'yes' if verdict.shortcut_detected else 'no'}"
        + (" (degenerate: a variable is constant)" if verdict.degenerate else ""),
    ]
    if sep.size:
        q = np.quantile(sep, [0.0, 0.5, 1.0])
        lines.append(f"  separation over included points: min {q[0]:.4f}, median {q[1]:.4f}, max {q[2]:.4f}")
        lines.append("  as percent change in error-rate odds per {:g} attribute units: {}".format(
            delta, ", ".join(f"{percent_change_per_delta(v, delta) * 100:.1f}%" for v in q)))
    lines.append("")
    lines.append(f"  {'lambda':>10} {'rep':>3} {'encoding':>9} {metric:>15} {'included':>8}")
    for p in points:
        enc = math.nan if p.encoding is None else p.encoding.value
        flag = "yes" if (p.lam, p.replicate) in included else "no"
        lines.append(f"  {p.lam:>+10.4g} {p.replicate:>3} {enc:>9.4f} {p.fairness.value(metric):>15.5f} {flag:>8}")
    return "\n".join(lines) + "\n", table


def cmd_analyze(args) -> int:
    cfg = load_config(args)
    points, kind = _sweep_points(args.sweep_csv)
    metric, alpha, analysis = _analysis_from(args, cfg, kind)
    verdict = short_test(points, metric, alpha, analysis.min_points, cfg.sweep.encoding_direction)
    out = output_dir(args.output or Path(args.sweep_csv).parent)
    payload = {k: v for k, v in verdict.to_dict().items() if k != "included"}
    atomic_write_json(out / "verdict.json", _jsonable(payload))
    report, table = _report(points, verdict, metric, analysis.delta_attribute)
    atomic_write_text(out / "report.txt", report)
    atomic_write_text(out / "encoding_vs_fairness.csv", table)
    print(report.split("\n\n")[0])
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    cfg = load_config(args)
    if args.n_perm < 1:
        raise CLIError("--n-perm must be a positive integer", EXIT_CONFIG)
    pa, ka = _sweep_points(args.sweep_a)
    pb, kb = _sweep_points(args.sweep_b)
    if ka != kb:
        raise CLIError(f"sweeps use different encoding kinds ({ka} vs {kb})", EXIT_CONFIG)
    metric, alpha, analysis = _analysis_from(args, cfg, ka)
    cmp = compare_short(pa, pb, metric, args.n_perm, cfg.seed, analysis.min_points)
    payload = {**cmp.to_dict(), "alpha": alpha, "seed": cfg.seed, "significant": cmp.p < alpha}
    out = output_dir(args.output or Path(args.sweep_a).parent)
    atomic_write_json(out / "comparison.json", _jsonable(payload))
    print(f"rho_A = {cmp.rho_a:+.4f} (n = {cmp.n_a}), rho_B = {cmp.rho_b:+.4f} (n = {cmp.n_b}), "
          f"difference {cmp.difference:+.4f}; permutation p = {cmp.p:.4g} "
          f"(alpha = {alpha}, n_perm = {cmp.n_perm}, metric = {metric})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selftest


def cmd_selftest(args) -> int:
    checks = run_selftest()
    for c in checks:
        print(c.line())
    n_fail = sum(not c.passed for c in checks)
    print(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="experiment config (JSON)")
    common.add_argument("--seed", type=_u64, metavar="U64", default=argparse.SUPPRESS,
                        help=f"master seed (overrides ${SEED_ENV} and the config)")
    common.add_argument("--jobs", type=_positive_int, metavar="N", default=argparse.SUPPRESS,
                        help="parallel sweep workers")
    common.add_argument("--output", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--fresh", action="store_true", default=argparse.SUPPRESS,
                        help="discard partial sweep output instead of resuming")

    parser = argparse.ArgumentParser(prog="shortkit", parents=[common],
                                     description="Test whether unfairness is driven by attribute encoding.")
    parser.add_argument("--version", action="version", version=f"shortkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a dataset and its statistics")
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("sweep", parents=[common], help="run the gradient-scaling sweep")
    p.set_defaults(func=cmd_sweep)
    for name, func, helptext in (("analyze", cmd_analyze, "ShorT verdict for one sweep"),
                                 ("compare", cmd_compare, "compare ShorT correlations of two sweeps")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name == "analyze":
            p.add_argument("sweep_csv")
        else:
            p.add_argument("sweep_a")
            p.add_argument("sweep_b")
            p.add_argument("--n-perm", type=int, default=10000, help="permutations (default 10000)")
        p.add_argument("--metric", choices=FAIRNESS_METRICS, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.set_defaults(func=func)
    p = sub.add_parser("selftest", parents=[common], help="gradient checks, oracles, lambda=0 equivalence")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    for name, default in (("config", None), ("seed", None), ("jobs", 1), ("output", None), ("fresh", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except CLIError as exc:
        _log(f"error: {exc}")
        return exc.code
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except ShortkitError as exc:
        _log(f"error: {exc}")
        return exc.exit_code
    except (PermissionError, IsADirectoryError, FileNotFoundError) as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO
    except FloatingPointError as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
