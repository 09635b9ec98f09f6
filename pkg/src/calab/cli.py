"""Batch experiment runner, evaluation reports, and plot-data emission.

Subcommands: run, eval, viz, verify, datagen, serve. Experiment configs
are JSON; results are one JSONL run record per (dataset, method, fold,
seed) plus a hashed manifest. Exit codes: 0 ok, 1 config error, 2 partial
failure or verification mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset, save_dataset, stratified_kfold, zscore_fit_apply
from .datagen import GENERATORS
from .evaluation import (
    aulc,
    cd_plot_data,
    cdm,
    dur,
    evaluate_ranks,
    render_metric_table,
    render_rank_table,
)
from .learner import LearnerConfig, RunRecord, run
from .mixture import MixtureModel
from .oracle import OracleSpec
from .svm import SvmModel
from .cmm import CmmClassifier


class ConfigError(ValueError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key in ("datasets", "methods"):
        if not cfg.get(key):
            raise ConfigError(f"config needs a non-empty {key!r} list")
    return cfg


def _materialize_dataset(entry: dict) -> Dataset:
    if "generate" in entry:
        gen = dict(entry["generate"])
        name = gen.pop("name")
        if name not in GENERATORS:
            raise ConfigError(f"unknown generator {name!r}")
        return GENERATORS[name](**gen)
    if "csv" in entry:
        csv_path, schema_path = entry["csv"], entry["schema"]
        if not Path(csv_path).exists() or not Path(schema_path).exists():
            raise ConfigError(f"dataset files missing for {entry.get('id')}")
        return load_dataset(csv_path, schema_path)
    raise ConfigError(f"dataset entry {entry.get('id')!r} needs 'csv' or 'generate'")


def _parse_oracles(cfg: dict) -> list[OracleSpec]:
    if "roster" in cfg:
        from .oracle import load_roster

        return load_roster(cfg["roster"])
    entries = cfg.get("oracles") or [{"id": "truth", "kind": "truth"}]
    return [OracleSpec.from_json(o) for o in entries]


def _execute_run(payload: dict) -> tuple[str, list[str] | None, str | None]:
    """Worker: returns (filename, jsonl lines, error)."""
    try:
        dataset = _materialize_dataset(payload["dataset"])
        folds = stratified_kfold(dataset, payload["folds"], seed=payload["fold_seed"])
        fold = payload["fold"]
        train = dataset.subset(folds.train_indices(fold))
        test = dataset.subset(folds.test_indices(fold))
        if payload.get("normalize", True):
            (train, test), _ = zscore_fit_apply(train, [test])
        method = payload["method"]
        learner_cfg = dict(payload.get("learner", {}))
        learner_cfg.update(
            model=method["model"], strategy=method["strategy"], seed=payload["seed"]
        )
        config = LearnerConfig.from_json(learner_cfg)
        oracles = [OracleSpec.from_json(o) for o in payload["oracles"]]
        record = run(
            train,
            test,
            config,
            oracles,
            dataset_id=payload["dataset"]["id"],
            method_id=method["id"],
            fold=fold,
        )
        record.footer["train_indices"] = [int(i) for i in folds.train_indices(fold)]
        return payload["filename"], record.to_jsonl_lines(), None
    except Exception as exc:  # propagate into the manifest
        return payload["filename"], None, f"{type(exc).__name__}: {exc}"


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(os.environ.get("CAL_LAB_OUT") or args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        oracles = [o.to_json() for o in _parse_oracles(cfg)]
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    folds = int(cfg.get("folds", 5))
    run_folds = cfg.get("run_folds", list(range(folds)))
    seeds = cfg.get("seeds", [0])

    jobs = []
    for ds in cfg["datasets"]:
        for method in cfg["methods"]:
            for fold in run_folds:
                for seed in seeds:
                    filename = f"{ds['id']}_{method['id']}_{fold}_{seed}.jsonl"
                    if (out_dir / filename).exists() and not args.force:
                        continue
                    jobs.append(
                        {
                            "dataset": ds,
                            "method": method,
                            "folds": folds,
                            "fold": fold,
                            "fold_seed": int(cfg.get("fold_seed", 0)),
                            "seed": seed,
                            "learner": cfg.get("learner", {}),
                            "oracles": oracles,
                            "normalize": cfg.get("normalize", True),
                            "filename": filename,
                        }
                    )

    results = []
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_execute_run, jobs))
    else:
        results = [_execute_run(j) for j in jobs]

    manifest_path = out_dir / "manifest.json"
    manifest = {"format": "manifest-v1", "runs": []}
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            pass
    known = {r["file"]: r for r in manifest.get("runs", [])}

    failures = 0
    for filename, lines, error in results:
        if error is not None:
            failures += 1
            known[filename] = {"file": filename, "status": "failed", "error": error}
            print(f"FAILED {filename}: {error}", file=sys.stderr)
            continue
        path = out_dir / filename
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        known[filename] = {"file": filename, "status": "ok", "sha256": _sha256(path)}
    manifest["runs"] = [known[k] for k in sorted(known)]
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    done = sum(1 for r in manifest["runs"] if r["status"] == "ok")
    print(f"{len(results)} run(s) executed, {done} total ok, {failures} failed -> {out_dir}")
    return 2 if failures else 0


def cmd_verify(args) -> int:
    out_dir = Path(args.results)
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        print("no manifest.json found", file=sys.stderr)
        return 1
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    bad = 0
    for entry in manifest.get("runs", []):
        if entry["status"] != "ok":
            continue
        path = out_dir / entry["file"]
        if not path.exists():
            print(f"missing: {entry['file']}")
            bad += 1
        elif _sha256(path) != entry["sha256"]:
            print(f"hash mismatch: {entry['file']}")
            bad += 1
    print("manifest verified" if not bad else f"{bad} file(s) failed verification")
    return 2 if bad else 0


def _load_records(results_dir: Path) -> list[RunRecord]:
    records = []
    for path in sorted(results_dir.glob("*.jsonl")):
        records.append(RunRecord.parse_jsonl(path.read_text(encoding="utf-8")))
    if not records:
        raise ConfigError(f"no .jsonl run records in {results_dir}")
    return records


def _mean_curves(records: list[RunRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Average accuracy-vs-n_labeled over runs, truncated to the shared grid."""
    grids = []
    for rec in records:
        pts = [
            (c["n_labeled"], c["test_accuracy"])
            for c in rec.cycles
            if c["test_accuracy"] is not None
        ]
        grids.append(pts)
    length = min(len(p) for p in grids)
    grid = np.array([p[0] for p in grids[0][:length]], dtype=float)
    for pts in grids:
        if not np.array_equal(np.array([p[0] for p in pts[:length]]), grid):
            raise ConfigError("runs do not share the n_labeled grid")
    curves = np.array([[p[1] for p in pts[:length]] for pts in grids])
    return grid, curves.mean(axis=0)


def cmd_eval(args) -> int:
    results_dir = Path(args.results)
    try:
        records = _load_records(results_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    datasets = sorted({r.dataset_id for r in records})
    methods = sorted({r.method_id for r in records})
    baseline = args.baseline or methods[0]
    if baseline not in methods:
        print(f"config error: baseline {baseline!r} not among methods {methods}", file=sys.stderr)
        return 1

    curves: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}
    acc = np.full((len(datasets), len(methods)), np.nan)
    cdms = np.full((len(datasets), len(methods)), np.nan)
    for di, ds in enumerate(datasets):
        for mi, m in enumerate(methods):
            group = [r for r in records if r.dataset_id == ds and r.method_id == m]
            if not group:
                continue
            curves[(ds, m)] = _mean_curves(group)
            finals = [r.footer.get("final_accuracy") for r in group]
            acc[di, mi] = 100.0 * float(np.mean([f for f in finals if f is not None]))
            run_cdms = [r.footer.get("cdm_mean") for r in group]
            run_cdms = [c for c in run_cdms if c is not None]
            cdms[di, mi] = float(np.mean(run_cdms)) if run_cdms else np.nan

    if np.isnan(acc).any():
        print("config error: missing (dataset, method) combinations", file=sys.stderr)
        return 1

    metric_rows = []
    for mi, m in enumerate(methods):
        aulcs, durs = [], []
        for ds in datasets:
            grid_b, curve_b = curves[(ds, baseline)]
            grid_m, curve_m = curves[(ds, m)]
            length = min(grid_b.size, grid_m.size)
            aulcs.append(aulc(grid_m[:length], curve_m[:length], curve_b[:length]))
            durs.append(dur(grid_m[:length], curve_m[:length], curve_b[:length])[0])
        metric_rows.append(
            {
                "method": m,
                "aulc": float(np.mean(aulcs)),
                "dur": float(np.mean(durs)),
                "cdm": float(np.nanmean(cdms[:, mi])),
            }
        )

    out = {
        "format": "report-v1",
        "baseline": baseline,
        "datasets": datasets,
        "methods": methods,
        "accuracy": acc.tolist(),
        "metrics": metric_rows,
    }
    text_blocks = []
    if len(methods) >= 2 and len(datasets) >= 2:
        report = evaluate_ranks(acc, methods, datasets, alpha=args.alpha)
        out.update(report.to_json())
        out["format"] = "report-v1"
        (results_dir / "cd_plot.json").write_text(
            json.dumps(cd_plot_data(report), indent=2), encoding="utf-8"
        )
        text_blocks.append(render_rank_table(report))
    else:
        simple = [f"{'Dataset':<16s}" + "".join(f"{m:>14s}" for m in methods)]
        for di, ds in enumerate(datasets):
            simple.append(f"{ds:<16s}" + "".join(f"{v:>14.2f}" for v in acc[di]))
        text_blocks.append("\n".join(simple))
    text_blocks.append(render_metric_table(metric_rows))
    (results_dir / "report.json").write_text(json.dumps(out, indent=2), encoding="utf-8")
    (results_dir / "report.txt").write_text("\n\n".join(text_blocks) + "\n", encoding="utf-8")
    print("\n\n".join(text_blocks))
    return 0


def _model_from_footer(footer: dict):
    model_json = footer.get("model")
    if model_json is None:
        raise ConfigError("run record stores no final model")
    if model_json.get("format") == "svm-v1":
        return SvmModel.from_json(model_json)
    return CmmClassifier.from_json(model_json)


def _ellipse_params(mixture: MixtureModel, dims: tuple[int, int]) -> list[dict]:
    out = []
    for j in range(mixture.n_components):
        cov = mixture.covariances[j][np.ix_(dims, dims)]
        vals, vecs = np.linalg.eigh(cov)
        angle = float(np.arctan2(vecs[1, -1], vecs[0, -1]))
        out.append(
            {
                "center": [float(mixture.means[j, dims[0]]), float(mixture.means[j, dims[1]])],
                "axes": [float(np.sqrt(max(vals[-1], 0.0))), float(np.sqrt(max(vals[0], 0.0)))],
                "angle": angle,
                "weight": float(mixture.weights[j]),
            }
        )
    return out


def cmd_viz(args) -> int:
    path = Path(args.run)
    if not path.exists():
        print(f"config error: run file {path} not found", file=sys.stderr)
        return 1
    record = RunRecord.parse_jsonl(path.read_text(encoding="utf-8"))
    footer = record.footer
    mixture = MixtureModel.from_json(footer["mixture"])
    n_cont = mixture.n_features
    if n_cont > 2 and not args.dims:
        print(
            f"config error: dataset has {n_cont} continuous dims; "
            "pass --dims i,j to pick a projection",
            file=sys.stderr,
        )
        return 1
    dims = (0, 1)
    if args.dims:
        parts = args.dims.split(",")
        dims = (int(parts[0]), int(parts[1]))
    try:
        model = _model_from_footer(footer)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    pts = [p for c in record.cycles for p in c.get("queried_points", [])]
    pts = np.array(pts) if pts else np.zeros((1, n_cont))
    lo = pts[:, dims].min(axis=0) - 1.0
    hi = pts[:, dims].max(axis=0) + 1.0
    gx = np.linspace(lo[0], hi[0], args.resolution)
    gy = np.linspace(lo[1], hi[1], args.resolution)
    mesh = np.zeros((args.resolution * args.resolution, n_cont))
    xx, yy = np.meshgrid(gx, gy)
    mesh[:, dims[0]] = xx.ravel()
    mesh[:, dims[1]] = yy.ravel()

    predicted = model.predict_matrix(mesh)
    if isinstance(model, SvmModel) and model.n_classes == 2 and model.machines:
        values = model.decision_matrix(mesh)[:, 0]
        values = np.where(predicted == model.machines[0].classes[0], np.abs(values), -np.abs(values))
    elif isinstance(model, CmmClassifier) and model.n_classes == 2:
        post = model.posterior_matrix(mesh)
        values = post[:, 0] - post[:, 1]
    else:
        values = model.margin_norm(mesh) if isinstance(model, SvmModel) else model.margin_matrix(mesh)

    history = []
    for c in record.cycles:
        if not c.get("queried_ids"):
            continue
        history.append(
            {
                "cycle": c["cycle"],
                "initial": bool(c.get("initial")),
                "points": [[p[dims[0]], p[dims[1]]] for p in c["queried_points"]],
                "labels": c.get("queried_labels", []),
            }
        )
    out = {
        "format": "viz-v1",
        "dataset": record.dataset_id,
        "method": record.method_id,
        "class_names": footer.get("class_names", []),
        "grid": {"x": gx.tolist(), "y": gy.tolist(), "values": values.reshape(args.resolution, args.resolution).tolist()},
        "predicted": predicted.reshape(args.resolution, args.resolution).tolist(),
        "ellipses": _ellipse_params(mixture, dims),
        "history": history,
    }
    out_path = Path(args.out) if args.out else path.with_suffix(".viz.json")
    out_path.write_text(json.dumps(out), encoding="utf-8")
    print(f"wrote {out_path}")
    return 0


def cmd_datagen(args) -> int:
    if args.name not in GENERATORS:
        print(f"config error: unknown generator {args.name!r}", file=sys.stderr)
        return 1
    kwargs = {}
    if args.n:
        kwargs["n"] = args.n
    if args.noise is not None and args.name == "two_moons":
        kwargs["noise"] = args.noise
    dataset = GENERATORS[args.name](seed=args.seed, **kwargs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{args.name}.csv"
    schema_path = out_dir / f"{args.name}.schema.json"
    save_dataset(dataset, csv_path)
    schema_path.write_text(json.dumps(dataset.schema.to_json(), indent=2), encoding="utf-8")
    print(f"wrote {csv_path} and {schema_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(data_dir=args.data_dir, journal_dir=args.journal_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--parallel", type=int, default=1)
    p_run.add_argument("--force", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="aggregate run records into a report")
    p_eval.add_argument("--results", required=True)
    p_eval.add_argument("--baseline", default=None)
    p_eval.add_argument("--alpha", type=float, default=0.01)
    p_eval.set_defaults(func=cmd_eval)

    p_viz = sub.add_parser("viz", help="emit plot data for one run")
    p_viz.add_argument("--run", required=True)
    p_viz.add_argument("--out", default=None)
    p_viz.add_argument("--dims", default=None)
    p_viz.add_argument("--resolution", type=int, default=60)
    p_viz.set_defaults(func=cmd_viz)

    p_ver = sub.add_parser("verify", help="check result files against the manifest")
    p_ver.add_argument("--results", required=True)
    p_ver.set_defaults(func=cmd_verify)

    p_gen = sub.add_parser("datagen", help="write a synthetic dataset as CSV + schema")
    p_gen.add_argument("--name", required=True)
    p_gen.add_argument("--out", default="data")
    p_gen.add_argument("--n", type=int, default=None)
    p_gen.add_argument("--noise", type=float, default=None)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(func=cmd_datagen)

    p_srv = sub.add_parser("serve", help="start the labeling session server")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--data-dir", default="data")
    p_srv.add_argument("--journal-dir", default="journals")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
