"""Leakage-controlled evaluation: folds, metrics, drift diagnostics.

Folds are built over collection cycles (leave-one-cycle-out), random row
splits (the deliberately leaky baseline), or cross-run pairs.  Per fold the
drift pipeline and forest are fit on the training rows only; the drift
module's fold fingerprint guard is exercised on every fold.

All headline metrics have small independent oracles in the test suite:
ROC-AUC against pairwise counting, ANOVA F against the direct
sum-of-squares formula, mutual information against analytic entropy,
Cohen's d and Brier/ECE against direct recomputation.
"""

from __future__ import annotations

import math
import platform
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import detector, drift, forest
from .featurestore import FeatureSet

FOLD_MODES = ("loco", "random", "cross_run")


class EvalError(Exception):
    pass


# -- folds ----------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    fold_id: str
    train_cycles: tuple[int, ...]
    test_cycles: tuple[int, ...]
    mode: str
    # for random mode the split is by explicit row indices, cycles overlap
    train_rows: tuple[int, ...] | None = None
    test_rows: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in FOLD_MODES:
            raise EvalError(f"unknown fold mode {self.mode!r}")
        if self.mode != "random" and set(self.train_cycles) & set(self.test_cycles):
            raise EvalError("train and test cycles overlap")


def loco_folds(fs: FeatureSet) -> list[FoldPlan]:
    """One fold per cycle: train on every other cycle, test on the held-out one."""
    cycles = [int(c) for c in fs.cycles()]
    if len(cycles) < 2:
        raise EvalError("LOCO needs >= 2 distinct cycles")
    return [FoldPlan(fold_id=f"loco_c{c}",
                     train_cycles=tuple(x for x in cycles if x != c),
                     test_cycles=(c,), mode="loco")
            for c in cycles]


def random_folds(fs: FeatureSet, n_folds: int, seed: int = 0) -> list[FoldPlan]:
    """Record-level random split: cycle-blind, whole records stay together.

    This is the deliberately leaky baseline LOCO is contrasted against:
    records from the same cycle land on both sides of the split, so
    cycle-shared conditions leak into training.
    """
    records = list(dict.fromkeys(fs.record_ids))
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(len(records))
    rid_arr = np.asarray(fs.record_ids)
    cycles = tuple(int(c) for c in fs.cycles())
    folds = []
    for k, rec_idx in enumerate(np.array_split(perm, n_folds)):
        test_records = {records[i] for i in rec_idx}
        test_mask = np.isin(rid_arr, sorted(test_records))
        folds.append(FoldPlan(fold_id=f"random_{k}", train_cycles=cycles,
                              test_cycles=cycles, mode="random",
                              train_rows=tuple(np.flatnonzero(~test_mask).tolist()),
                              test_rows=tuple(np.flatnonzero(test_mask).tolist())))
    return folds


def cross_run_fold(train_cycles, test_cycles) -> FoldPlan:
    return FoldPlan(fold_id="cross_run", train_cycles=tuple(int(c) for c in train_cycles),
                    test_cycles=tuple(int(c) for c in test_cycles), mode="cross_run")


def fold_split(fs: FeatureSet, fold: FoldPlan) -> tuple[FeatureSet, FeatureSet]:
    if fold.mode == "random":
        return fs.subset(np.array(fold.train_rows)), fs.subset(np.array(fold.test_rows))
    train_mask = np.isin(fs.cycle_index, fold.train_cycles)
    test_mask = np.isin(fs.cycle_index, fold.test_cycles)
    return fs.subset(train_mask), fs.subset(test_mask)


# -- classification metrics -------------------------------------------------------

def confusion_matrix(y_true, y_pred, classes) -> np.ndarray:
    idx = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[idx[t], idx[p]] += 1
    return cm


def per_class_f1(y_true, y_pred, classes) -> dict[str, float]:
    """F1 per class; classes absent from y_true map to NaN with a warning."""
    cm = confusion_matrix(y_true, y_pred, classes)
    out = {}
    for i, c in enumerate(classes):
        support = cm[i].sum()
        if support == 0:
            warnings.warn(f"class {c!r} absent from y_true; F1 undefined", stacklevel=2)
            out[c] = float("nan")
            continue
        tp = cm[i, i]
        fp = cm[:, i].sum() - tp
        fn = support - tp
        denom = 2 * tp + fp + fn
        out[c] = 2 * tp / denom if denom > 0 else 0.0
    return out


def macro_f1(y_true, y_pred, classes) -> float:
    """Unweighted mean of per-class F1 over classes present in y_true."""
    scores = per_class_f1(y_true, y_pred, classes)
    vals = [v for v in scores.values() if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def roc_auc(scores, y_true) -> float:
    """Rank-statistic AUC; tied scores count half, matching pairwise counting."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_true).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("ROC-AUC needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores, y_true) -> np.ndarray:
    """(fpr, tpr, threshold) staircase, thresholds descending."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_true).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    distinct = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp, fp, thr = tp[distinct], fp[distinct], s_sorted[distinct]
    tpr = tp / max(tp[-1], 1)
    fpr = fp / max(fp[-1], 1)
    return np.column_stack([np.r_[0.0, fpr], np.r_[0.0, tpr], np.r_[np.inf, thr]])


def pr_points(scores, y_true) -> np.ndarray:
    """(recall, precision, threshold) rows, recall ascending."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_true).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    y_sorted = y[order]
    s_sorted = s[order]
    tp = np.cumsum(y_sorted)
    n_seen = np.arange(1, y.size + 1)
    distinct = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp, n_seen, thr = tp[distinct], n_seen[distinct], s_sorted[distinct]
    precision = tp / n_seen
    recall = tp / max(int(y.sum()), 1)
    return np.column_stack([recall, precision, thr])


def pr_auc(scores, y_true) -> float:
    pts = pr_points(scores, y_true)
    recall, precision = pts[:, 0], pts[:, 1]
    r = np.r_[0.0, recall]
    p = np.r_[precision[0], precision]
    return float(np.trapezoid(p, r))


def tpr_at_fpr(scores, y_true, targets=(0.005, 0.01, 0.0116, 0.05)) -> list[dict]:
    """Threshold-sweep operating points: best TPR with FPR at or under target."""
    pts = roc_points(scores, y_true)
    rows = []
    for target in targets:
        ok = pts[pts[:, 0] <= target + 1e-12]
        best = ok[-1] if ok.shape[0] else pts[0]
        rows.append({"target_fpr": target, "fpr": float(best[0]), "tpr": float(best[1]),
                     "threshold": float(best[2])})
    return rows


def calibration_metrics(prob_pos, y_true, n_bins: int = 10) -> tuple[float, float, list[dict]]:
    """(Brier, ECE, reliability bins) for a binary positive-class probability."""
    if n_bins < 2:
        raise EvalError("need >= 2 calibration bins")
    p = np.asarray(prob_pos, dtype=np.float64)
    y = np.asarray(y_true).astype(np.float64)
    brier = float(((p - y) ** 2).mean())
    bins = np.clip((p * n_bins).astype(int), 0, n_bins - 1)
    ece = 0.0
    rows = []
    for b in range(n_bins):
        mask = bins == b
        if not mask.any():
            continue
        conf = float(p[mask].mean())
        acc = float(y[mask].mean())
        w = mask.mean()
        ece += w * abs(acc - conf)
        rows.append({"bin": b, "lo": b / n_bins, "hi": (b + 1) / n_bins,
                     "confidence": conf, "accuracy": acc, "count": int(mask.sum())})
    return brier, float(ece), rows


# -- drift diagnostics ------------------------------------------------------------

def _bin_codes(x: np.ndarray, bins: int) -> np.ndarray:
    u = np.unique(x)
    if u.size <= bins:
        return np.searchsorted(u, x)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def _discrete_mi_bits(codes_a: np.ndarray, codes_b: np.ndarray) -> float:
    n = codes_a.size
    ja = {v: i for i, v in enumerate(np.unique(codes_a))}
    jb = {v: i for i, v in enumerate(np.unique(codes_b))}
    table = np.zeros((len(ja), len(jb)))
    for a, b in zip(codes_a, codes_b):
        table[ja[a], jb[b]] += 1
    p = table / n
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float((p[mask] * np.log2(p[mask] / (pa @ pb)[mask])).sum())


def mi_cycle_leakage(values: np.ndarray, cycles: np.ndarray, skills, bins: int = 16) -> dict:
    """Per-feature MI against cycle and against skill, in bits, plus the
    mean leakage ratio."""
    if np.unique(cycles).size < 2 or len(set(skills)) < 2:
        raise EvalError("need >= 2 cycles and >= 2 skills")
    skill_codes = np.searchsorted(np.unique(skills), np.asarray(skills))
    mi_cycle = np.zeros(values.shape[1])
    mi_skill = np.zeros(values.shape[1])
    for k in range(values.shape[1]):
        col = values[:, k].astype(np.float64)
        if np.all(col == col[0]):
            continue
        codes = _bin_codes(col, bins)
        mi_cycle[k] = _discrete_mi_bits(codes, cycles)
        mi_skill[k] = _discrete_mi_bits(codes, skill_codes)
    ratio = float(mi_cycle.mean() / max(mi_skill.mean(), 1e-12))
    return {"mi_cycle": mi_cycle, "mi_skill": mi_skill, "mean_ratio": ratio}


_POOLED_STD_FLOOR = 1e-12


def effect_size_drift(run_a: np.ndarray, run_b: np.ndarray, threshold: float = 0.8) -> dict:
    """Per-feature Cohen's d between runs, count above threshold, max |d|."""
    if run_a.shape[0] == 0 or run_b.shape[0] == 0:
        raise EvalError("both runs must be non-empty")
    na, nb = run_a.shape[0], run_b.shape[0]
    mean_a = run_a.mean(axis=0, dtype=np.float64)
    mean_b = run_b.mean(axis=0, dtype=np.float64)
    var_a = run_a.var(axis=0, ddof=1, dtype=np.float64) if na > 1 else np.zeros(run_a.shape[1])
    var_b = run_b.var(axis=0, ddof=1, dtype=np.float64) if nb > 1 else np.zeros(run_b.shape[1])
    dof = max(na + nb - 2, 1)
    pooled = np.sqrt(((na - 1) * var_a + (nb - 1) * var_b) / dof)
    d = (mean_a - mean_b) / np.maximum(pooled, _POOLED_STD_FLOOR)
    return {"d": d, "n_large": int((np.abs(d) >= threshold).sum()),
            "max_abs_d": float(np.abs(d).max()), "threshold": threshold}


def separability_ratio(values: np.ndarray, skills, cycles: np.ndarray) -> dict:
    """Class-pair mean distances against cross-cycle within-class dispersion."""
    skills = np.asarray(skills)
    classes = np.unique(skills)
    if classes.size < 2 or np.unique(cycles).size < 2:
        raise EvalError("need >= 2 skills and >= 2 cycles")
    flagged = []
    dispersions = []
    class_means = {}
    for s in classes:
        rows = skills == s
        class_means[s] = values[rows].mean(axis=0, dtype=np.float64)
        s_cycles = np.unique(cycles[rows])
        if s_cycles.size < 2:
            flagged.append(str(s))
            continue
        per_cycle = np.stack([values[rows & (cycles == c)].mean(axis=0, dtype=np.float64)
                              for c in s_cycles])
        centered = per_cycle - per_cycle.mean(axis=0)
        dispersions.append(float(np.linalg.norm(centered, axis=1).mean()))
    nuisance = float(np.mean(dispersions)) if dispersions else 0.0
    pairs = []
    for i, a in enumerate(classes):
        for b in classes[i + 1:]:
            dist = float(np.linalg.norm(class_means[a] - class_means[b]))
            pairs.append({"a": str(a), "b": str(b), "distance": dist,
                          "ratio": dist / max(nuisance, 1e-12)})
    return {"pairs": pairs, "nuisance_scale": nuisance, "flagged_single_cycle": flagged}


def mahalanobis_anomaly(train_benign: np.ndarray, test: np.ndarray) -> np.ndarray:
    """Distance to the benign mean under a ridge-regularized covariance."""
    if train_benign.shape[0] < 2:
        raise EvalError("need >= 2 benign training rows")
    x = train_benign.astype(np.float64)
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    d = x.shape[1]
    ridge = 1e-3 * np.trace(cov) / d
    cov = cov + ridge * np.eye(d)
    delta = test.astype(np.float64) - mu
    sol = np.linalg.solve(cov, delta.T)
    return np.sqrt(np.einsum("ij,ji->i", delta, sol))


@dataclass
class BootstrapCI:
    lo: float
    hi: float
    level: float
    n_resamples: int
    seed: int

    def __iter__(self):
        return iter((self.lo, self.hi))


def bootstrap_ci(metric_fn, data, n_resamples: int = 1000, level: float = 0.95,
                 seed: int = 0) -> BootstrapCI:
    """Percentile bootstrap CI over record-level resamples, seed recorded."""
    if n_resamples < 100:
        raise EvalError("need >= 100 resamples")
    items = list(data)
    if len(items) < 2:
        raise EvalError("degenerate single-record data")
    rng = np.random.Generator(np.random.PCG64(seed))
    stats = []
    n = len(items)
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        stats.append(metric_fn([items[i] for i in idx]))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(float(lo), float(hi), level, n_resamples, seed)


def latency_profile(single_fn, batch_fn, items, min_records: int = 100) -> dict:
    """Wall-clock post-feature inference latency, single and batched.

    ``single_fn`` runs inference for one record's windows; ``batch_fn`` runs
    all records in one call.  Reports median/p99 per record and the batched
    amortized time, plus a hardware descriptor.
    """
    items = list(items)
    if len(items) < min_records:
        raise EvalError(f"need >= {min_records} records to profile, got {len(items)}")
    single_fn(items[0])  # warm caches before timing
    times = []
    for it in items:
        t0 = time.perf_counter()
        single_fn(it)
        times.append(time.perf_counter() - t0)
    t0 = time.perf_counter()
    batch_fn(items)
    batched = (time.perf_counter() - t0) / len(items)
    times_ms = np.array(times) * 1e3
    return {
        "n_records": len(items),
        "median_ms": float(np.median(times_ms)),
        "p99_ms": float(np.percentile(times_ms, 99)),
        "batched_amortized_ms": batched * 1e3,
        "hardware": f"{platform.machine()} {platform.processor() or 'unknown'} "
                    f"x{__import__('os').cpu_count()}",
    }


# -- per-fold pipeline runs ---------------------------------------------------------

@dataclass
class FoldOutput:
    fold_id: str
    record_ids: list[str]
    y_true: list[str]
    y_pred: list[str]
    record_scores: np.ndarray      # pooled posterior matrix (records x classes)
    classes: list[str]
    window_accuracy: float
    train_seconds: float


def _records_of(fs: FeatureSet) -> list[str]:
    seen = dict.fromkeys(fs.record_ids)
    return list(seen)


def run_fold(fs: FeatureSet, fold: FoldPlan, drift_cfg: drift.DriftConfig,
             params: forest.ForestParams, target: str = "skill",
             pool_rule: str = "mean") -> FoldOutput:
    """Fit drift pipeline + forest on the fold's training rows, evaluate on test.

    ``target='skill'`` gives stage-1 skill recovery; ``target='state'``
    gives the stage-2 window-state detector.  Record-level predictions pool
    window posteriors under ``pool_rule``.
    """
    train, test = fold_split(fs, fold)
    holdout = fold.test_cycles if fold.mode != "random" else ()
    t0 = time.perf_counter()
    model = drift.fit_pipeline(train, drift_cfg, holdout_cycles=holdout, target=target)
    x_train = drift.transform(model, train, for_training=True)
    y_train = train.skills if target == "skill" else train.states
    fmodel = forest.train_forest(x_train, y_train, params)
    train_seconds = time.perf_counter() - t0
    x_test = drift.transform(model, test)
    proba = forest.predict_proba(fmodel, x_test)
    y_window = np.asarray(test.skills if target == "skill" else test.states)
    window_pred = np.array(fmodel.classes)[np.argmax(proba, axis=1)]
    window_acc = float((window_pred == y_window).mean())

    rec_ids = _records_of(test)
    rec_true, pooled_rows = [], []
    rid_arr = np.asarray(test.record_ids)
    for rid in rec_ids:
        rows = rid_arr == rid
        pooled, _ = detector.pool_posteriors(proba[rows], rule=pool_rule)
        pooled_rows.append(pooled)
        rec_true.append(y_window[rows][0] if target == "state" else
                        np.asarray(test.skills)[rows][0])
    pooled_mat = np.stack(pooled_rows)
    rec_pred = [fmodel.classes[i] for i in np.argmax(pooled_mat, axis=1)]
    if target == "state":
        # record truth: attack iff any window overlaps the payload
        rec_true = []
        states_arr = np.asarray(test.states)
        labels_arr = np.asarray(test.labels)
        for rid in rec_ids:
            rows = rid_arr == rid
            rec_true.append("attack" if (states_arr[rows] == "attack").any()
                            else ("background" if labels_arr[rows][0] == "background"
                                  else "normal"))
    return FoldOutput(
        fold_id=fold.fold_id,
        record_ids=rec_ids,
        y_true=list(rec_true),
        y_pred=rec_pred,
        record_scores=pooled_mat,
        classes=list(fmodel.classes),
        window_accuracy=window_acc,
        train_seconds=train_seconds,
    )


def run_folds(fs: FeatureSet, folds: list[FoldPlan], drift_cfg: drift.DriftConfig,
              params: forest.ForestParams, target: str = "skill",
              pool_rule: str = "mean") -> list[FoldOutput]:
    return [run_fold(fs, f, drift_cfg, params, target, pool_rule) for f in folds]


def aggregate_outputs(outputs: list[FoldOutput]) -> dict:
    """Concatenate fold outputs into flat record-level arrays."""
    classes = outputs[0].classes
    for o in outputs:
        if o.classes != classes:
            raise EvalError("fold class sets differ")
    return {
        "classes": classes,
        "record_ids": sum((o.record_ids for o in outputs), []),
        "y_true": sum((o.y_true for o in outputs), []),
        "y_pred": sum((o.y_pred for o in outputs), []),
        "scores": np.concatenate([o.record_scores for o in outputs]),
        "fold_ids": sum(([o.fold_id] * len(o.record_ids) for o in outputs), []),
        "per_fold_macro_f1": {o.fold_id: macro_f1(o.y_true, o.y_pred, classes)
                              for o in outputs},
        "per_fold_window_acc": {o.fold_id: o.window_accuracy for o in outputs},
    }
