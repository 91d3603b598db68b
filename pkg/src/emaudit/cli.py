"""Experiment orchestration CLI.

Subcommands wire the modules into the end-to-end chain: ``simulate``
renders the synthetic corpus, ``survey`` runs carrier calibration,
``extract`` builds the feature cache, ``train`` fits the final drift
pipeline and forest, ``evaluate`` runs the fold protocol, ``verify``
compares intended against recovered workflows, and ``report`` aggregates
fold outputs into the metrics files.

Every output embeds the resolved config hash; reruns with the same config
produce byte-identical artifacts.  Timestamps are confined to ``run.log``.
Failures exit nonzero with one machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import detector, drift, evaluate, forest, survey, verify
from .config import ConfigError, ExperimentConfig, PlannedRecord, plan_corpus, render_planned
from .featurestore import FeatureSet, extract_record, load_featureset, save_featureset
from .profiles import calibration_conditions


class CliError(Exception):
    def __init__(self, message: str, kind: str = "error"):
        super().__init__(message)
        self.kind = kind


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_canonical(obj))


def _log(root: Path, message: str) -> None:
    with open(root / "run.log", "a") as f:
        f.write(f"{datetime.now(timezone.utc).isoformat()} {message}\n")


class _Lock:
    """Advisory single-process lock on an experiment directory."""

    def __init__(self, root: Path):
        self.path = root / ".lock"

    def __enter__(self):
        if self.path.exists():
            raise CliError(f"experiment directory locked by pid {self.path.read_text()!r}; "
                           f"remove {self.path} if stale", kind="locked")
        self.path.write_text(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with get_context("fork").Pool(processes=workers) as pool:
        return pool.map(fn, items, chunksize=1)


# -- workers (top level for pickling) ----------------------------------------------


def _simulate_one(args) -> dict:
    cfg_json, item_dict, out_dir = args
    cfg = ExperimentConfig.from_dict(json.loads(cfg_json))
    item = PlannedRecord(**item_dict)
    rec = render_planned(cfg, item)
    return corpus_mod.write_record(rec, out_dir)


def _extract_one(args) -> tuple:
    cfg_json, entry, corpus_dir = args
    cfg = ExperimentConfig.from_dict(json.loads(cfg_json))
    rec = corpus_mod.read_record(corpus_dir, entry, mmap=True)
    w = cfg.raw["windowing"]
    fs = extract_record(rec, cfg.feature_config(), tau_s=w["tau_s"], rho_s=w["rho_s"],
                        envelope_mode=w["envelope_mode"])
    return (fs.values, fs.record_ids, fs.window_index, fs.cycle_index, fs.temperature_c,
            fs.skills, fs.states, fs.labels, fs.layout, fs.config_hash)


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, root: Path, workers: int) -> dict:
    out_dir = root / "corpus"
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = plan_corpus(cfg)
    cfg_json = cfg.to_json()
    entries = _pmap(_simulate_one, [(cfg_json, item.__dict__, str(out_dir)) for item in plan],
                    workers)
    manifest = {"version": 1, "config_hash": cfg.config_hash(), "records": entries}
    (out_dir / "manifest.json").write_text(_canonical(manifest))
    return {"records": len(entries), "directory": str(out_dir)}


def cmd_survey(cfg: ExperimentConfig, root: Path, workers: int) -> dict:
    out_dir = root / "survey"
    out_dir.mkdir(parents=True, exist_ok=True)
    s = cfg.raw["survey"]
    host = cfg.host_emission_model()
    conditions = calibration_conditions(duration_s=s["dwell_s"])
    unpinned = survey.run_synthetic_sweep(host, s["carriers_mhz"], conditions, cfg.seed,
                                          sample_rate=s["sample_rate"], dwell_s=dur,
                                          pinned=False)
    pinned = survey.run_synthetic_sweep(host, s["carriers_mhz"], conditions, cfg.seed,
                                        sample_rate=s["sample_rate"], dwell_s=dur,
                                        pinned=True)
    unpinned.to_csv(out_dir / "sweep_unpinned.csv")
    pinned.to_csv(out_dir / "sweep_pinned.csv")
    deltas = survey.band_deltas(pinned)
    (f_cpu, f_ram), table = survey.select_carriers(deltas, penalty=s["penalty"])
    survey.write_ranking_csv(table, out_dir / "ranking.csv")
    governor = survey.governor_diagnosis(unpinned, pinned, flag_ratio=s["flag_ratio"])
    _write_json(out_dir / "selection.json", {
        "config_hash": cfg.config_hash(),
        "cpu_carrier_mhz": f_cpu,
        "ram_carrier_mhz": f_ram,
        "governor_flags": [g["carrier_mhz"] for g in governor if g["flagged"]],
    })
    _write_json(out_dir / "governor.json", {"config_hash": cfg.config_hash(),
                                            "report": governor})
    return {"cpu_carrier_mhz": f_cpu, "ram_carrier_mhz": f_ram,
            "flagged": [g["carrier_mhz"] for g in governor if g["flagged"]]}


def cmd_extract(cfg: ExperimentConfig, root: Path, workers: int) -> dict:
    corpus_dir = root / "corpus"
    manifest = corpus_mod.read_manifest(corpus_dir)
    if manifest.get("config_hash") not in (None, cfg.config_hash()):
        raise CliError("corpus was produced by a different config hash", kind="config_mismatch")
    cfg_json = cfg.to_json()
    parts = _pmap(_extract_one, [(cfg_json, e, str(corpus_dir)) for e in manifest["records"]],
                  workers)
    sets = [FeatureSet(values=p[0], record_ids=p[1], window_index=p[2], cycle_index=p[3],
                       temperature_c=p[4], skills=p[5], states=p[6], labels=p[7],
                       layout=p[8], config_hash=p[9]) for p in parts]
    fs = FeatureSet.concatenate(sets)
    out = root / "features"
    out.mkdir(parents=True, exist_ok=True)
    save_featureset(fs, out / "windows.emfc")
    return {"rows": len(fs), "dim": fs.dim, "file": str(out / "windows.emfc")}


def _load_features(root: Path) -> FeatureSet:
    path = root / "features" / "windows.emfc"
    if not path.exists():
        raise CliError(f"feature cache missing: {path}; run extract first", kind="missing_input")
    return load_featureset(path)


def cmd_train(cfg: ExperimentConfig, root: Path, stage: int) -> dict:
    fs = _load_features(root)
    target = "skill" if stage == 1 else "state"
    model = drift.fit_pipeline(fs, cfg.drift_config(), holdout_cycles=(), target=target)
    x = drift.transform(model, fs, for_training=True)
    y = fs.skills if stage == 1 else fs.states
    fmodel = forest.train_forest(x, y, cfg.forest_params())
    out = root / "models"
    out.mkdir(parents=True, exist_ok=True)
    drift.save_model(model, out / f"drift_stage{stage}.json")
    forest.save_forest(fmodel, out / f"forest_stage{stage}.bin")
    return {"stage": stage, "classes": fmodel.classes, "rows": len(fs)}


def cmd_evaluate(cfg: ExperimentConfig, root: Path, stage: int) -> dict:
    fs = _load_features(root)
    mode = cfg.raw["evaluation"]["fold_mode"]
    if mode == "loco":
        folds = evaluate.loco_folds(fs)
    elif mode == "random":
        folds = evaluate.random_folds(fs, cfg.raw["evaluation"]["random_folds"], seed=cfg.seed)
    else:
        raise CliError("cross_run evaluation needs two corpora; drive it via the API",
                       kind="unsupported")
    target = "skill" if stage == 1 else "state"
    outputs = evaluate.run_folds(fs, folds, cfg.drift_config(), cfg.forest_params(),
                                 target=target, pool_rule=cfg.raw["detector"]["pool_rule"])
    out_dir = root / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    for o in outputs:
        _write_json(out_dir / f"fold_{o.fold_id}_stage{stage}.json", {
            "config_hash": cfg.config_hash(),
            "fold_id": o.fold_id,
            "classes": o.classes,
            "record_ids": o.record_ids,
            "y_true": o.y_true,
            "y_pred": o.y_pred,
            "scores": [[float(v) for v in row] for row in o.record_scores],
            "window_accuracy": o.window_accuracy,
        })
    agg = evaluate.aggregate_outputs(outputs)
    _write_json(out_dir / f"aggregate_stage{stage}.json", {
        "config_hash": cfg.config_hash(),
        "fold_mode": mode,
        "classes": agg["classes"],
        "per_fold_macro_f1": agg["per_fold_macro_f1"],
        "per_fold_window_acc": agg["per_fold_window_acc"],
        "macro_f1": evaluate.macro_f1(agg["y_true"], agg["y_pred"], agg["classes"]),
        "accuracy": float(np.mean(np.asarray(agg["y_true"]) == np.asarray(agg["y_pred"]))),
    })
    if stage == 2:
        _write_verdicts(cfg, root, agg)
    return {"folds": len(outputs),
            "macro_f1": evaluate.macro_f1(agg["y_true"], agg["y_pred"], agg["classes"])}


def _write_verdicts(cfg: ExperimentConfig, root: Path, agg: dict) -> None:
    det = cfg.raw["detector"]
    attack_col = agg["classes"].index("attack") if "attack" in agg["classes"] else None
    if attack_col is None:
        return
    verdicts = []
    for rid, truth, row in zip(agg["record_ids"], agg["y_true"], agg["scores"]):
        score = float(row[attack_col])
        flagged = score > det["eta"]
        verdicts.append(detector.Verdict(record_id=rid, flagged=flagged, aggregate=score,
                                         threshold=det["eta"], n_windows=-1,
                                         aggregation="mean_score"))
    detector.write_verdict_log(verdicts, root / "verdicts.jsonl")


def cmd_verify(cfg: ExperimentConfig, root: Path, intended_path: str, recovered_path: str,
               ) -> dict:
    intended = json.loads(Path(intended_path).read_text())
    recovered = json.loads(Path(recovered_path).read_text())
    alphabet = intended.get("alphabet") or sorted(set(intended["sequence"])
                                                  | set(recovered["sequence"]))
    v = cfg.raw["verify"]
    cost = None
    confusion_file = root / "eval" / "confusion_stage1.json"
    if confusion_file.exists():
        data = json.loads(confusion_file.read_text())
        if set(alphabet) <= set(data["classes"]):
            try:
                cost = verify.confusability_costs(
                    np.array(data["matrix"]), data["classes"],
                    insertion=v["insertion"], deletion=v["deletion"],
                    transposition=v["transposition"], floor=v["sub_floor"], cap=v["sub_cap"])
            except verify.VerifyError:
                cost = None  # degenerate confusion rows, fall back to unit costs
    if cost is None:
        cost = verify.CostModel.unit(tuple(alphabet), transposition=v["transposition"])
    distance, ops = verify.weighted_edit_distance(intended["sequence"], recovered["sequence"],
                                                  cost)
    delta = v["delta"] if v["delta"] is not None else 0.0
    decision = verify.integrity_decision(distance, delta)
    hijack = verify.classify_deviation(ops)
    result = {
        "config_hash": cfg.config_hash(),
        "distance": distance,
        "delta": delta,
        "decision": decision,
        "ops": [list(o) for o in ops],
        "hijack_types": dict(sorted(hijack.items())),
        "out_of_band_forms": list(verify.OUT_OF_BAND_FORMS),
    }
    _write_json(root / "verify_result.json", result)
    return result


def cmd_report(cfg: ExperimentConfig, root: Path, stage: int) -> dict:
    eval_dir = root / "eval"
    agg_path = eval_dir / f"aggregate_stage{stage}.json"
    if not agg_path.exists():
        raise CliError(f"no evaluation output at {agg_path}; run evaluate first",
                       kind="missing_input")
    agg = json.loads(agg_path.read_text())
    fold_files = sorted(eval_dir.glob(f"fold_*_stage{stage}.json"))
    y_true, y_pred, rec_ids, scores, fold_of = [], [], [], [], []
    for path in fold_files:
        data = json.loads(path.read_text())
        y_true += data["y_true"]
        y_pred += data["y_pred"]
        rec_ids += data["record_ids"]
        scores += data["scores"]
        fold_of += [data["fold_id"]] * len(data["y_true"])
    classes = agg["classes"]
    scores = np.array(scores)
    report_dir = root / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    cm = evaluate.confusion_matrix(y_true, y_pred, classes)
    metrics = {
        "config_hash": cfg.config_hash(),
        "stage": stage,
        "classes": classes,
        "accuracy": float(np.mean(np.asarray(y_true) == np.asarray(y_pred))),
        "macro_f1": evaluate.macro_f1(y_true, y_pred, classes),
        "per_class_f1": {k: (None if np.isnan(v) else v)
                         for k, v in evaluate.per_class_f1(y_true, y_pred, classes).items()},
        "per_fold_macro_f1": agg["per_fold_macro_f1"],
        "confusion": cm.tolist(),
    }
    with open(report_dir / f"confusion_stage{stage}.csv", "w") as f:
        f.write("true\\pred," + ",".join(classes) + "\n")
        for c, row in zip(classes, cm):
            f.write(c + "," + ",".join(str(int(v)) for v in row) + "\n")
    # row-normalized confusion for the verify cost model
    row_sums = cm.sum(axis=1, keepdims=True)
    norm = np.where(row_sums > 0, cm / np.maximum(row_sums, 1), 0.0)
    _write_json(eval_dir / f"confusion_stage{stage}.json",
                {"classes": classes, "matrix": norm.tolist(),
                 "config_hash": cfg.config_hash()})

    if stage == 2 and "attack" in classes:
        ai = classes.index("attack")
        y_bin = [1 if t == "attack" else 0 for t in y_true]
        s = scores[:, ai]
        if len(set(y_bin)) == 2:
            ev = cfg.raw["evaluation"]
            metrics["roc_auc"] = evaluate.roc_auc(s, y_bin)
            metrics["pr_auc"] = evaluate.pr_auc(s, y_bin)
            metrics["tpr_at_fpr"] = evaluate.tpr_at_fpr(s, y_bin,
                                                        targets=ev["tpr_fpr_targets"])
            brier, ece, bins = evaluate.calibration_metrics(s, y_bin, ev["ece_bins"])
            metrics["brier"] = brier
            metrics["ece"] = ece
            pts = evaluate.roc_points(s, y_bin)
            with open(report_dir / "roc_points.csv", "w") as f:
                f.write("fpr,tpr,threshold\n")
                for fpr, tpr, thr in pts:
                    f.write(f"{fpr!r},{tpr!r},{thr!r}\n")
            ppts = evaluate.pr_points(s, y_bin)
            with open(report_dir / "pr_points.csv", "w") as f:
                f.write("recall,precision,threshold\n")
                for r, p, thr in ppts:
                    f.write(f"{r!r},{p!r},{thr!r}\n")
            with open(report_dir / "reliability_bins.csv", "w") as f:
                f.write("bin,lo,hi,confidence,accuracy,count\n")
                for b in bins:
                    f.write(f"{b['bin']},{b['lo']!r},{b['hi']!r},{b['confidence']!r},"
                            f"{b['accuracy']!r},{b['count']}\n")
            recs = list(zip(y_bin, s))
            ev_seed = ev["bootstrap_seed"]
            ci = evaluate.bootstrap_ci(
                lambda rows: evaluate.roc_auc([r[1] for r in rows], [r[0] for r in rows])
                if len({r[0] for r in rows}) == 2 else 0.5,
                recs, n_resamples=ev["bootstrap_resamples"], seed=ev_seed)
            metrics["roc_auc_ci"] = {"lo": ci.lo, "hi": ci.hi, "level": ci.level,
                                     "n_resamples": ci.n_resamples, "seed": ci.seed}

    # per-cycle accuracy from fold ids (loco folds carry the cycle)
    per_fold = {}
    for fid, t, p in zip(fold_of, y_true, y_pred):
        per_fold.setdefault(fid, []).append(t == p)
    with open(report_dir / f"per_fold_accuracy_stage{stage}.csv", "w") as f:
        f.write("fold_id,accuracy,n_records\n")
        for fid in sorted(per_fold):
            accs = per_fold[fid]
            f.write(f"{fid},{float(np.mean(accs))!r},{len(accs)}\n")
    _write_json(report_dir / f"metrics_stage{stage}.json", metrics)
    return {"metrics_file": str(report_dir / f"metrics_stage{stage}.json"),
            "macro_f1": metrics["macro_f1"]}


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emaudit",
                                description="Out-of-band workflow-integrity experiment chain")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--root", default=None,
                   help="experiment directory (default: $EMAUDIT_ROOT or ./experiments/<name>)")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--threads", type=int, default=min(2, os.cpu_count() or 1),
                   help="worker processes for simulate/extract")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="render the synthetic corpus")
    sub.add_parser("survey", help="carrier sweep, selection, governor diagnosis")
    sub.add_parser("extract", help="windows -> feature cache")
    for name in ("train", "evaluate", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--stage", type=int, choices=(1, 2), default=1)
    vp = sub.add_parser("verify", help="compare intended vs recovered sequences")
    vp.add_argument("--intended", required=True)
    vp.add_argument("--recovered", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            data = dict(cfg.raw)
            data["seed"] = args.seed
            cfg = ExperimentConfig.from_dict(data)
        root = Path(args.root or os.environ.get("EMAUDIT_ROOT")
                    or Path("experiments") / cfg.name)
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.json").write_text(cfg.to_json())
        with _Lock(root):
            _log(root, f"start {args.command} config_hash={cfg.config_hash()} "
                       f"seed_override={args.seed} threads={args.threads}")
            t0 = time.time()
            if args.command == "simulate":
                result = cmd_simulate(cfg, root, args.threads)
            elif args.command == "survey":
                result = cmd_survey(cfg, root, args.threads)
            elif args.command == "extract":
                result = cmd_extract(cfg, root, args.threads)
            elif args.command == "train":
                result = cmd_train(cfg, root, args.stage)
            elif args.command == "evaluate":
                result = cmd_evaluate(cfg, root, args.stage)
            elif args.command == "verify":
                result = cmd_verify(cfg, root, args.intended, args.recovered)
            elif args.command == "report":
                result = cmd_report(cfg, root, args.stage)
            else:  # pragma: no cover
                raise CliError(f"unknown command {args.command!r}")
            _log(root, f"done {args.command} in {time.time() - t0:.1f}s")
        print(_canonical({"command": args.command, "config_hash": cfg.config_hash(),
                          "result": result}))
        return 0
    except (CliError, ConfigError, corpus_mod.CorpusFormatError, drift.LeakageError,
            survey.SurveyError, verify.VerifyError, evaluate.EvalError, FileNotFoundError,
            KeyError, ValueError) as exc:
        err = {"error": exc.__class__.__name__, "message": str(exc),
               "kind": getattr(exc, "kind", "error")}
        print(_canonical(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
