"""Command line interface: ``stepforecast <command> ... --out DIR``.

Every command writes its artifacts under ``--out`` with fixed file names and a
``manifest.json`` recording argv, config hashes, input and output digests.
``stepforecast replay --manifest M --out DIR`` re-runs a command and checks
that every output is byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

from ._util import sha256_file
from .app import GoalConfig, RunManifest, _now, adaptive_goal, predict_next_day, preprocessing_document
from .dataset import (FeatureConfig, Scaler, WindowConfig, apply_scaler, build_windows, chronological_split,
                      fit_scaler, load_datasets, save_datasets)
from .eval import SweepSpec, benchmark, config_sweep, grid_search
from .ingest import SynthConfig, generate_synthetic_corpus, read_records, write_records
from .models import (DEFAULT_GRIDS, DISPLAY_NAMES, FAMILIES, load_model_document, make_model,
                     model_from_document, model_to_document, save_model_document)
from .pipeline import PipelineConfig, grids_from_ndjson, grids_to_ndjson, run_pipeline

logger = logging.getLogger("stepforecast")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _ratios(text: str):
    parts = tuple(float(p) for p in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated ratios")
    return parts


# ---------------------------------------------------------------------------
# commands; each returns {output file name: path} and fills the manifest

def cmd_synth(args, out: Path, manifest: RunManifest):
    config = SynthConfig(args.users, args.days, args.seed, args.duplicate_rate, args.outlier_day_rate,
                         args.nowear_day_rate, args.coarse_record_rate, date.fromisoformat(args.start_date),
                         user_level_sigma=args.user_level_sigma, day_noise_sigma=args.day_noise_sigma)
    manifest.add_config("synth", config.to_dict())
    manifest.seeds["synth"] = args.seed
    records = generate_synthetic_corpus(config)
    write_records(records, out / "records.ndjson")
    print(f"wrote {len(records)} records for {args.users} users")
    return ["records.ndjson"]


def cmd_ingest(args, out: Path, manifest: RunManifest):
    manifest.inputs[str(args.input)] = sha256_file(args.input)
    records, report = read_records(args.input, args.format, args.mode)
    write_records(records, out / "records.ndjson")
    _write_json(out / "parse_report.json", report.to_dict())
    print(f"accepted {report.rows_accepted} of {report.rows_read} rows")
    return ["records.ndjson", "parse_report.json"]


def cmd_process(args, out: Path, manifest: RunManifest):
    manifest.inputs[str(args.input)] = sha256_file(args.input)
    if args.config:
        manifest.inputs[str(args.config)] = sha256_file(args.config)
        config = PipelineConfig.from_dict(_read_json(args.config))
    else:
        config = PipelineConfig()
    manifest.add_config("pipeline", config.to_dict())
    records, _ = read_records(args.input, "ndjson", "strict")
    result = run_pipeline(records, config)
    (out / "grids.ndjson").write_text(grids_to_ndjson(result.grids, config, result.outlier_bounds), encoding="utf-8")
    _write_json(out / "stats.json", result.stats.to_dict())
    print(f"{len(result.grids)} users, {sum(len(g) for g in result.grids)} user-days after cleaning")
    return ["grids.ndjson", "stats.json"]


def cmd_build(args, out: Path, manifest: RunManifest):
    manifest.inputs[str(args.input)] = sha256_file(args.input)
    grids, header = grids_from_ndjson(Path(args.input).read_text(encoding="utf-8"))
    holidays = ()
    if args.holidays:
        manifest.inputs[str(args.holidays)] = sha256_file(args.holidays)
        holidays = [date.fromisoformat(s) for s in _read_json(args.holidays)]
    wconf = WindowConfig(args.window_days, args.granularity, args.stride_days)
    fconf = FeatureConfig.preset(args.features, holidays)
    manifest.add_config("window", wconf.to_dict())
    manifest.add_config("features", fconf.to_dict())
    data = build_windows(grids, wconf, fconf)
    train, val, test = chronological_split(data, args.split)
    if len(train) == 0:
        raise ValueError("no training examples; check window size and cleaning settings")
    scaler = fit_scaler(train)
    pconf = PipelineConfig.from_dict(header["pipeline_config"]) if header.get("pipeline_config") else PipelineConfig()
    sidecar = save_datasets(out / "dataset.bin", {"train": train, "val": val, "test": test}, scaler,
                            {"split_ratios": list(args.split), "pipeline_config": pconf.to_dict(),
                             "outlier_bounds": header.get("outlier_bounds")})
    _write_json(out / "dataset.json", sidecar)
    print(f"examples: train {len(train)}, val {len(val)}, test {len(test)}; {data.X.shape[1]} features")
    return ["dataset.bin", "dataset.json"]


def _load_dataset_dir(path):
    path = Path(path)
    splits = load_datasets(path / "dataset.bin")
    sidecar = _read_json(path / "dataset.json")
    return splits, sidecar, Scaler.from_dict(sidecar["scaler"])


def cmd_train(args, out: Path, manifest: RunManifest):
    d = Path(args.dataset)
    for name in ("dataset.bin", "dataset.json"):
        manifest.inputs[str(d / name)] = sha256_file(d / name)
    splits, sidecar, scaler = _load_dataset_dir(d)
    train, val = apply_scaler(scaler, splits["train"]), apply_scaler(scaler, splits["val"])
    params = json.loads(args.params) if args.params else {}
    if args.model in ("mlp", "cnn", "lstm"):
        params.setdefault("n_channels", sidecar["n_channels"])
    if args.seed is not None and args.model in ("gb", "mlp", "cnn", "lstm"):
        params["seed"] = args.seed
        manifest.seeds["model"] = args.seed
    log: dict = {}
    if args.grid or args.grid_file:
        grid = _read_json(args.grid_file) if args.grid_file else DEFAULT_GRIDS[args.model]
        result = grid_search(args.model, grid, train.X, train.y, args.folds, base_params=params)
        params = result.best_params
        log["grid_search"] = result.to_dict()
        print(f"grid search picked {result.best_params} (mean validation MAE {result.best_score:.4f}, scaled)")
    manifest.add_config("model", {"family": args.model, "params": params})
    model = make_model(args.model, **params).fit(train.X, train.y, val.X, val.y)
    if getattr(model, "log_", None) is not None:
        log["train_log"] = model.log_.to_dict()
    prep = preprocessing_document(PipelineConfig.from_dict(sidecar["pipeline_config"]), sidecar.get("outlier_bounds"),
                                  WindowConfig.from_dict(sidecar["window_config"]),
                                  FeatureConfig.from_dict(sidecar["feature_config"]), scaler)
    save_model_document(model_to_document(model, prep), out / "model.json")
    _write_json(out / "trainlog.json", log)
    print(f"trained {DISPLAY_NAMES[args.model]}")
    return ["model.json", "trainlog.json"]


def cmd_evaluate(args, out: Path, manifest: RunManifest):
    d = Path(args.dataset)
    for p in [d / "dataset.bin", d / "dataset.json", *args.models]:
        manifest.inputs[str(p)] = sha256_file(p)
    splits, sidecar, scaler = _load_dataset_dir(d)
    models = {}
    for path in args.models:
        model = model_from_document(load_model_document(path))
        name = DISPLAY_NAMES.get(model.family, model.family)
        models[name if name not in models else f"{name} ({Path(path).stem})"] = model
    report = benchmark(models, splits["train"], splits["test"], scaler,
                       configs={"window_config": sidecar["window_config"],
                                "feature_config": sidecar["feature_config"],
                                "pipeline_config": sidecar["pipeline_config"]})
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    table = report.render_table()
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return ["report.json", "report.txt"]


def cmd_sweep(args, out: Path, manifest: RunManifest):
    manifest.inputs[str(args.input)] = sha256_file(args.input)
    spec = SweepSpec.from_dict(_read_json(args.spec)) if args.spec else SweepSpec()
    base = PipelineConfig.from_dict(_read_json(args.config)) if args.config else PipelineConfig()
    for p in (args.spec, args.config):
        if p:
            manifest.inputs[str(p)] = sha256_file(p)
    manifest.add_config("sweep", spec.to_dict())
    manifest.add_config("pipeline", base.to_dict())
    records, _ = read_records(args.input, "ndjson", "strict")
    probe_params = json.loads(args.probe_params) if args.probe_params else {}
    report = config_sweep(records, spec, base, args.probe, probe_params)
    (out / "sweep.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "sweep_matrix.csv").write_text(report.to_matrix_csv(), encoding="utf-8")
    _write_json(out / "sweep.json", report.to_dict())
    print(report.to_matrix_csv(), end="")
    return ["sweep.csv", "sweep_matrix.csv", "sweep.json"]


def cmd_goal(args, out: Path, manifest: RunManifest):
    manifest.inputs[str(args.model)] = sha256_file(args.model)
    manifest.inputs[str(args.history)] = sha256_file(args.history)
    doc = load_model_document(args.model)
    records, _ = read_records(args.history, None, "strict")
    config = GoalConfig(args.uplift, args.floor, args.ceiling)
    manifest.add_config("goal", {"uplift": config.uplift, "floor": config.floor, "ceiling": config.ceiling})
    predicted = predict_next_day(doc, records, args.user)
    goal = adaptive_goal(predicted, config)
    _write_json(out / "goal.json", {"predicted_steps": predicted, "goal": goal, "user_id": args.user})
    print(goal)
    return ["goal.json"]


def cmd_replay(args, out: Path, manifest: RunManifest):
    src = _read_json(args.manifest)
    original = RunManifest.from_dict(src)
    argv = list(original.argv)
    target = str(out.resolve())
    for i, arg in enumerate(argv):
        if arg == "--out":
            argv[i + 1] = target
        elif arg.startswith("--out="):
            argv[i] = "--out=" + target
    here = os.getcwd()
    os.chdir(original.cwd)
    try:
        status = main(argv)
    finally:
        os.chdir(here)
    if status != 0:
        raise RuntimeError(f"replayed command exited with status {status}")
    mismatched = [name for name, digest in original.outputs.items()
                  if sha256_file(out / name) != digest]
    if mismatched:
        raise RuntimeError(f"outputs differ from the manifest: {', '.join(mismatched)}")
    print(f"replayed {original.command}: {len(original.outputs)} outputs identical")
    return None


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepforecast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic record corpus")
    p.add_argument("--users", type=int, default=10)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duplicate-rate", type=float, default=0.02)
    p.add_argument("--outlier-day-rate", type=float, default=0.02)
    p.add_argument("--nowear-day-rate", type=float, default=0.05)
    p.add_argument("--coarse-record-rate", type=float, default=0.05)
    p.add_argument("--start-date", default="2015-03-01")
    p.add_argument("--user-level-sigma", type=float, default=0.35, help="log-sd of per-user activity level")
    p.add_argument("--day-noise-sigma", type=float, default=0.10, help="log-sd of day-to-day variation")

    p = command("ingest", cmd_ingest, "validate raw records into canonical NDJSON")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--format", choices=["csv", "ndjson"])
    p.add_argument("--mode", choices=["strict", "lenient"], default="strict")

    p = command("process", cmd_process, "run the cleaning pipeline")
    p.add_argument("--input", required=True, type=Path, help="canonical records.ndjson")
    p.add_argument("--config", type=Path, help="pipeline config JSON")

    p = command("build", cmd_build, "window, split and scale a dataset")
    p.add_argument("--input", required=True, type=Path, help="grids.ndjson")
    p.add_argument("--window-days", type=int, default=3)
    p.add_argument("--granularity", choices=["hourly", "daily"], default="hourly")
    p.add_argument("--stride-days", type=int)
    p.add_argument("--features", choices=["steps", "date", "cyclic", "all"], default="steps")
    p.add_argument("--holidays", type=Path, help="JSON list of ISO dates")
    p.add_argument("--split", type=_ratios, default=(0.70, 0.15, 0.15))

    p = command("train", cmd_train, "fit one model family")
    p.add_argument("--dataset", required=True, type=Path, help="directory written by build")
    p.add_argument("--model", required=True, choices=[f for f in FAMILIES if f != "mean"])
    p.add_argument("--params", help="JSON object of model parameters")
    p.add_argument("--grid", action="store_true", help="grid-search the default grid first")
    p.add_argument("--grid-file", type=Path, help="JSON grid (dict of lists) to search")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int)

    p = command("evaluate", cmd_evaluate, "benchmark trained models")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--models", required=True, nargs="+", type=Path)

    p = command("sweep", cmd_sweep, "granularity x window x feature x outlier sweep")
    p.add_argument("--input", required=True, type=Path, help="canonical records.ndjson")
    p.add_argument("--spec", type=Path)
    p.add_argument("--config", type=Path, help="base pipeline config JSON")
    p.add_argument("--probe", default="ridge", choices=[f for f in FAMILIES if f != "mean"])
    p.add_argument("--probe-params")

    p = command("goal", cmd_goal, "print tomorrow's adaptive step goal")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--history", required=True, type=Path, help="one user's recent records")
    p.add_argument("--user")
    p.add_argument("--uplift", type=float, default=0.10)
    p.add_argument("--floor", type=int)
    p.add_argument("--ceiling", type=int)

    p = command("replay", cmd_replay, "re-run a command from its manifest and verify outputs")
    p.add_argument("--manifest", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, argv, os.getcwd())
        outputs = args.func(args, out, manifest)
    except Exception as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if outputs is not None:
        manifest.outputs = {name: sha256_file(out / name) for name in outputs}
        manifest.finished_at = _now()
        _write_json(out / "manifest.json", manifest.to_dict())
    return 0


if __name__ == "__main__":
    sys.exit(main())
