"""Command-line pipeline: prepare | synth | train | evaluate | analyze | grid.

Every command resolves its configuration the same way (defaults, then a JSON
config file, then explicit flags, flags winning), derives a run id from the
resolved config's canonical JSON, and writes all artifacts under
<outdir>/<run-id>/. Reruns with identical config overwrite the same run
directory with byte-identical files, so any report can be re-derived from the
config.json sitting next to it.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bias_analysis, baselines, dataset, evaluation, synthgen, trainer
from .model import MATCHING_ONLY, ConformityIndex, load_checkpoint, parse_mode, save_checkpoint

SCHEMA_VERSION = 1

TRAIN_DEFAULTS = {"data": None, **asdict(trainer.TrainConfig())}

EVALUATE_DEFAULTS = {
    "data": None,
    "checkpoint": None,
    "method": None,
    "modes": None,
    "k_click": 20,
    "k_pref": 3,
    "on": "test",
    "gamma": None,
    "per_user": False,
}

ANALYZE_DEFAULTS = {
    "data": None,
    "checkpoint": None,
    "t_o": bias_analysis.HALF_YEAR_SECONDS,
    "weekly": False,
    "n_buckets": 30,
    "p_threshold": 0.2,
    "min_ratings": 3,
}

PREPARE_DEFAULTS = {
    "data": None,
    "core_n": 5,
    "parts": 10,
    "split_seed": 0,
    "delimiter": "\t",
}


def run_id(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode()).hexdigest()[:12]


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def resolve_config(args: argparse.Namespace, defaults: dict, flag_map: dict) -> dict:
    """defaults <- config file <- explicit flags; unknown file keys rejected."""
    config = dict(defaults)
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config.update(loaded)
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            config[key] = value
    missing = [k for k, v in config.items() if v is None and k in ("data",)]
    if missing:
        raise ValueError(f"missing required option: {missing[0]}")
    return config


def make_run_dir(outdir, config: dict) -> Path:
    rid = run_id(config)
    run_dir = Path(outdir) / rid
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", config)
    return run_dir


def _load_log(path: Path, delimiter: str = "\t") -> dataset.InteractionLog:
    """Accept a raw interaction file, a split directory, or a synth run dir."""
    path = Path(path)
    if path.is_dir():
        if (path / "manifest.json").exists():
            split = dataset.load_split(path)
            return _concat_logs(split.train, split.validation, split.test)
        if (path / "interactions.tsv").exists():
            return dataset.load_interactions(path / "interactions.tsv")
        raise FileNotFoundError(f"{path} holds neither a split manifest nor interactions.tsv")
    return dataset.load_interactions(path, dataset.ColumnFormat(delimiter=delimiter))


def _concat_logs(*logs: dataset.InteractionLog) -> dataset.InteractionLog:
    keep = [lg for lg in logs if len(lg)]
    if not keep:
        raise ValueError("all partitions are empty")
    return dataset.InteractionLog.build(
        np.concatenate([lg.users for lg in keep]),
        np.concatenate([lg.items for lg in keep]),
        np.concatenate([lg.times for lg in keep]),
        np.concatenate([lg.ratings for lg in keep]),
        keep[0].n_users,
        keep[0].n_items,
    )


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    defaults = asdict(synthgen.SynthConfig())
    flag_map = {"seed": "seed", "n_events": "n_events"}
    config = resolve_config(args, defaults, flag_map)
    run_dir = make_run_dir(args.outdir, config)
    log, truth = synthgen.generate(synthgen.SynthConfig(**config))
    synthgen.save_synth(log, truth, synthgen.SynthConfig(**config), run_dir)
    print(f"synth: {len(log)} interactions, {log.n_users} users, {log.n_items} items -> {run_dir}")
    return 0


def cmd_prepare(args) -> int:
    flag_map = {"data": "data", "core_n": "core_n", "parts": "parts", "seed": "split_seed"}
    config = resolve_config(args, PREPARE_DEFAULTS, flag_map)
    config["data"] = str(config["data"])
    run_dir = make_run_dir(args.outdir, config)
    log = dataset.load_interactions(
        config["data"], dataset.ColumnFormat(delimiter=config["delimiter"])
    )
    if config["core_n"] > 1:
        log = dataset.n_core_filter(log, config["core_n"])
    log = dataset.binarize(log)
    split = dataset.chrono_split(log, parts=config["parts"], split_seed=config["split_seed"])
    dataset.save_split(split, run_dir)
    print(
        f"prepare: {len(log)} interactions, {log.n_users} users, {log.n_items} items; "
        f"train/val/test = {len(split.train)}/{len(split.validation)}/{len(split.test)} -> {run_dir}"
    )
    return 0


def _train_flag_map() -> dict:
    keys = (
        "data method variant fixed_q embed_dim lr_emb lr_qb weight_decay_emb init_qb "
        "init_std batch_size epochs seed early_stop_patience tau gamma ips_cap"
    ).split()
    return {k: k for k in keys}


def run_training(config: dict, outdir) -> dict:
    """Shared by cmd_train and each grid point; returns a run summary."""
    run_dir = make_run_dir(outdir, config)
    split = dataset.load_split(Path(config["data"]))
    cfg = trainer.TrainConfig(**{k: v for k, v in config.items() if k != "data"})
    result = trainer.fit(split, cfg)
    trainer.write_history(result.history, run_dir / "history.csv")
    tmp = run_dir / "checkpoint.tmp.npz"
    save_checkpoint(result.model, tmp, anchor=split.train.t_min, meta={"config": config})
    os.replace(tmp, run_dir / "checkpoint.npz")
    summary = {
        "run_id": run_dir.name,
        "best_epoch": result.best_epoch,
        "val_cp_rec": result.best_metric,
        "epochs_run": len(result.history),
    }
    write_json(run_dir / "train_summary.json", summary)
    return {**summary, "run_dir": str(run_dir)}


def cmd_train(args) -> int:
    config = resolve_config(args, TRAIN_DEFAULTS, _train_flag_map())
    config["data"] = str(config["data"])
    summary = run_training(config, args.outdir)
    metric = summary["val_cp_rec"]
    shown = "n/a" if metric is None else f"{metric:.6f}"
    print(f"train: best val CP-Rec = {shown} at epoch {summary['best_epoch']} -> {summary['run_dir']}")
    return 0


def _default_modes(method: str, variant: str) -> list[str]:
    if method != "tide":
        return ["native"]
    return {"full": ["full", "int", "e"], "noq": ["noq"], "noc": ["noc"], "fixq": ["full", "int"]}[variant]


def _scorer_for_mode(model, method, mode_text, split, gamma, anchor, index_cache):
    t_eval = split.train.t_max
    if method != "tide":
        if mode_text not in ("native", "e"):
            raise ValueError(f"mode {mode_text!r} requires method tide")
        table = baselines.PopularityTable.from_split(split) if method == "pda" else None
        return trainer.make_scorer(model, method, MATCHING_ONLY, table=table, gamma=gamma)
    mode = parse_mode(mode_text)
    index = None
    if mode.needs_history():
        if "index" not in index_cache:
            index_cache["index"] = ConformityIndex.from_log(split.train, model.tau, anchor=anchor)
        index = index_cache["index"]
    return trainer.make_scorer(model, "tide", mode, t_eval=t_eval, index=index)


def cmd_evaluate(args) -> int:
    flag_map = {
        "data": "data", "checkpoint": "checkpoint", "method": "method",
        "modes": "modes", "k_click": "k_click", "k_pref": "k_pref", "on": "on",
        "per_user": "per_user",
    }
    config = resolve_config(args, EVALUATE_DEFAULTS, flag_map)
    if not config["checkpoint"]:
        raise ValueError("missing required option: checkpoint")
    ckpt_path = Path(config["checkpoint"])
    if ckpt_path.is_dir():
        ckpt_path = ckpt_path / "checkpoint.npz"
    model, anchor, meta = load_checkpoint(ckpt_path)
    meta_config = meta.get("config", {})
    method = config["method"] or meta_config.get("method", "tide")
    gamma = config["gamma"] if config["gamma"] is not None else meta_config.get("gamma", 0.0)
    variant = meta_config.get("variant", "full")
    config.update({"checkpoint": str(ckpt_path), "data": str(config["data"]),
                   "method": method, "gamma": gamma})
    modes = config["modes"]
    if isinstance(modes, str):
        modes = [m.strip() for m in modes.split(",") if m.strip()]
    if not modes:
        modes = _default_modes(method, variant)
    config["modes"] = modes
    run_dir = make_run_dir(args.outdir, config)

    split = dataset.load_split(Path(config["data"]))
    if model.n_items != split.train.n_items or model.n_users != split.train.n_users:
        raise ValueError("checkpoint and split disagree on user/item counts")
    eval_log = split.test if config["on"] == "test" else split.validation
    reports = []
    index_cache: dict = {}
    for mode_text in modes:
        scorer = _scorer_for_mode(model, method, mode_text, split, gamma, anchor, index_cache)
        click = evaluation.click_prediction_eval(
            scorer, split.train, eval_log, k=config["k_click"], collect_per_user=config["per_user"]
        )
        pref = evaluation.preference_prediction_eval(
            scorer, eval_log, k=config["k_pref"], collect_per_user=config["per_user"]
        )
        reports.append(evaluation.combine_report(
            method, mode_text, click, pref, k_click=config["k_click"], k_pref=config["k_pref"]
        ))

    payload = {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "on": config["on"],
        "reports": [r.to_dict() for r in reports],
    }
    write_json(run_dir / "eval.json", payload)
    _write_eval_csv(run_dir / "eval.csv", reports)
    for r in reports:
        fmt = lambda v: "n/a" if v is None else f"{v:.6f}"
        print(
            f"evaluate[{r.mode}]: CP-Rec@{r.k_click}={fmt(r.cp_rec)} "
            f"CP-Pre@{r.k_click}={fmt(r.cp_pre)} CP-NDCG@{r.k_click}={fmt(r.cp_ndcg)} "
            f"PP-Rec@{r.k_pref}={fmt(r.pp_rec)} PP-Pre@{r.k_pref}={fmt(r.pp_pre)}"
        )
    print(f"evaluate: wrote {run_dir / 'eval.json'}")
    return 0


def _write_eval_csv(path: Path, reports) -> None:
    rows = []
    for r in reports:
        rows.append([
            r.method, r.mode, r.k_click, r.k_pref,
            *("" if v is None else f"{v:.10g}" for v in (r.cp_rec, r.cp_pre, r.cp_ndcg, r.pp_rec, r.pp_pre)),
            r.n_users_click, r.n_users_pref,
        ])
    out = ["method,mode,k_click,k_pref,cp_rec,cp_pre,cp_ndcg,pp_rec,pp_pre,n_users_click,n_users_pref"]
    out += [",".join(str(c) for c in row) for row in rows]
    atomic_write_text(path, "\n".join(out) + "\n")


def cmd_analyze(args) -> int:
    flag_map = {
        "data": "data", "checkpoint": "checkpoint", "t_o": "t_o", "weekly": "weekly",
        "n_buckets": "n_buckets", "p_threshold": "p_threshold", "min_ratings": "min_ratings",
    }
    config = resolve_config(args, ANALYZE_DEFAULTS, flag_map)
    config["data"] = str(config["data"])
    if config["checkpoint"]:
        config["checkpoint"] = str(config["checkpoint"])
    run_dir = make_run_dir(args.outdir, config)
    analysis_dir = run_dir / "analysis"
    analysis_dir.mkdir(exist_ok=True)

    log = _load_log(Path(config["data"]))
    summary: dict = {"schema_version": SCHEMA_VERSION}

    buckets = bias_analysis.popularity_buckets(log, n_buckets=config["n_buckets"])
    _write_bucket_csv(analysis_dir / "popularity_buckets.csv", buckets)
    centers, means = buckets.occupied()
    summary["bucket_ar_pop_pearson"] = (
        bias_analysis.pearson(centers, means) if centers.size >= 2 else None
    )

    corr = bias_analysis.per_item_rating_instant_pop_corr(
        log,
        t_o=config["t_o"],
        p_threshold=config["p_threshold"],
        min_ratings=config["min_ratings"],
        weekly_aggregate=config["weekly"],
    )
    corr_lines = ["item,n,r,p,retained"]
    corr_lines += [
        f"{int(corr.items[k])},{int(corr.n[k])},{corr.r[k]:.10g},{corr.p[k]:.10g},{int(corr.retained[k])}"
        for k in range(corr.items.size)
    ]
    atomic_write_text(analysis_dir / "instant_corr.csv", "\n".join(corr_lines) + "\n")
    counts, edges = corr.histogram()
    hist_lines = ["bin_lo,bin_hi,count"]
    hist_lines += [
        f"{edges[k]:.10g},{edges[k + 1]:.10g},{int(counts[k])}" for k in range(counts.size)
    ]
    atomic_write_text(analysis_dir / "r_histogram.csv", "\n".join(hist_lines) + "\n")
    summary["n_corr_items"] = int(corr.items.size)
    summary["n_retained"] = int(corr.retained.sum())
    summary["negative_fraction"] = corr.negative_fraction()

    if config["checkpoint"]:
        ckpt_path = Path(config["checkpoint"])
        if ckpt_path.is_dir():
            ckpt_path = ckpt_path / "checkpoint.npz"
        model, _, _ = load_checkpoint(ckpt_path)
        qbuckets = bias_analysis.quality_buckets(model, log, n_buckets=config["n_buckets"])
        _write_bucket_csv(analysis_dir / "quality_buckets.csv", qbuckets)
        rcc_q, rcc_p = bias_analysis.quality_rating_rcc(model, log)
        summary["rcc_quality_ar"] = rcc_q
        summary["rcc_popularity_ar"] = rcc_p

    write_json(analysis_dir / "summary.json", summary)
    print(f"analyze: {summary.get('n_retained', 0)} items retained -> {analysis_dir}")
    return 0


def _write_bucket_csv(path: Path, report: bias_analysis.BucketReport) -> None:
    lines = ["bucket,lo,hi,item_count,avg_rating"]
    for k in range(report.n_buckets):
        avg = report.avg_rating[k]
        lines.append(",".join([
            str(k),
            f"{report.bucket_bounds[k]:.10g}",
            f"{report.bucket_bounds[k + 1]:.10g}",
            str(report.item_counts[k]),
            "" if avg is None else f"{avg:.10g}",
        ]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _grid_points(grid: dict) -> list[dict]:
    keys = sorted(grid)
    values = [grid[k] if isinstance(grid[k], list) else [grid[k]] for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _grid_worker(job: tuple) -> dict:
    config, outdir = job
    summary = run_training(config, outdir)
    return {**summary, "config": config}


def cmd_grid(args) -> int:
    config = resolve_config(args, {**TRAIN_DEFAULTS, "grid": {}}, _train_flag_map())
    config["data"] = str(config["data"])
    if args.grid:
        config["grid"] = json.loads(Path(args.grid).read_text())
    unknown = set(config["grid"]) - set(TRAIN_DEFAULTS)
    if unknown:
        raise ValueError(f"grid varies unknown parameters: {sorted(unknown)}")
    points = _grid_points(config["grid"])
    if not points:
        raise ValueError("empty grid")
    run_dir = make_run_dir(args.outdir, config)
    base = {k: v for k, v in config.items() if k != "grid"}
    jobs = [({**base, **point}, str(run_dir)) for point in points]
    threads = args.threads or 1
    if threads <= 1 or len(jobs) == 1:
        results = [_grid_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_grid_worker, jobs))
    ranked = sorted(
        results,
        key=lambda s: (-(s["val_cp_rec"] if s["val_cp_rec"] is not None else -np.inf), s["run_id"]),
    )
    leaderboard = [
        {"rank": k + 1, "run_id": s["run_id"], "val_cp_rec": s["val_cp_rec"],
         "best_epoch": s["best_epoch"], "config": s["config"]}
        for k, s in enumerate(ranked)
    ]
    write_json(run_dir / "leaderboard.json", leaderboard)
    write_json(run_dir / "best.json", leaderboard[0])
    top = leaderboard[0]
    shown = "n/a" if top["val_cp_rec"] is None else f"{top['val_cp_rec']:.6f}"
    print(f"grid: {len(points)} points, best val CP-Rec = {shown} ({top['run_id']}) -> {run_dir}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tide",
        description="Disentangled popularity-bias pipeline: data prep, training, evaluation, analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON config file; explicit flags override it")
        p.add_argument("--outdir", type=Path, default=Path("runs"), help="artifact root directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic log with planted parameters")
    common(p)
    p.add_argument("--n-events", dest="n_events", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="filter, binarize, and chronologically split a raw log")
    common(p)
    p.add_argument("--data", type=Path, default=None, help="raw interaction file")
    p.add_argument("--core-n", dest="core_n", type=int, default=None)
    p.add_argument("--parts", type=int, default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fit a method on a prepared split")
    common(p)
    p.add_argument("--data", type=Path, default=None, help="prepared split directory")
    p.add_argument("--method", choices=trainer.METHODS, default=None)
    p.add_argument("--ablation", dest="variant", choices=("noq", "noc", "fixq"), default=None)
    p.add_argument("--fixed-q", dest="fixed_q", type=float, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--lr-emb", dest="lr_emb", type=float, default=None)
    p.add_argument("--lr-qb", dest="lr_qb", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay_emb", type=float, default=None)
    p.add_argument("--init-qb", dest="init_qb", type=float, default=None)
    p.add_argument("--init-std", dest="init_std", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", dest="early_stop_patience", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--ips-cap", dest="ips_cap", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run both ranking tasks on a checkpoint")
    common(p)
    p.add_argument("--data", type=Path, default=None, help="prepared split directory")
    p.add_argument("--checkpoint", type=Path, default=None, help="checkpoint.npz or its run directory")
    p.add_argument("--method", choices=trainer.METHODS, default=None)
    p.add_argument("--modes", type=str, default=None, help="comma list: full,int,e,noq,noc,fixq:<v>")
    p.add_argument("--k", dest="k_click", type=int, default=None, help="click-task cutoff")
    p.add_argument("--k-pref", dest="k_pref", type=int, default=None, help="preference-task cutoff")
    p.add_argument("--on", choices=("test", "validation"), default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--per-user", dest="per_user", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="popularity/rating diagnostics over a log")
    common(p)
    p.add_argument("--data", type=Path, default=None, help="raw file, split dir, or synth run dir")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--t-o", dest="t_o", type=int, default=None, help="instant-popularity window seconds")
    p.add_argument("--weekly", action="store_const", const=True, default=None)
    p.add_argument("--n-buckets", dest="n_buckets", type=int, default=None)
    p.add_argument("--p-threshold", dest="p_threshold", type=float, default=None)
    p.add_argument("--min-ratings", dest="min_ratings", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("grid", help="cartesian hyperparameter search, parallel across processes")
    common(p)
    p.add_argument("--data", type=Path, default=None, help="prepared split directory")
    p.add_argument("--method", choices=trainer.METHODS, default=None)
    p.add_argument("--grid", type=Path, default=None, help="JSON file of {param: [values]}")
    p.add_argument("--threads", type=int, default=1, help="parallel training processes")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--patience", dest="early_stop_patience", type=int, default=None)
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # CLI boundary: report, don't traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
