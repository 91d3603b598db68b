import numpy as np
import pytest

from emaudit import drift, evaluate as ev, forest
from emaudit.featurestore import FeatureSet


def _featureset(values, cycles, skills, temps=None, states=None, labels=None,
                record_ids=None):
    n = values.shape[0]
    return FeatureSet(
        values=values.astype(np.float32),
        record_ids=record_ids or [f"r{i}" for i in range(n)],
        window_index=np.arange(n, dtype=np.int32),
        cycle_index=np.asarray(cycles, dtype=np.int32),
        temperature_c=(np.asarray(temps, dtype=np.float32) if temps is not None
                       else np.full(n, 40.0, dtype=np.float32)),
        skills=list(skills),
        states=list(states) if states else ["normal"] * n,
        labels=list(labels) if labels else ["normal"] * n,
        layout={"all": (0, values.shape[1])},
        config_hash="t",
    )


class TestFolds:
    def _fs(self, n_cycles):
        n = n_cycles * 4
        return _featureset(np.random.default_rng(0).standard_normal((n, 3)),
                           np.repeat(np.arange(n_cycles), 4), ["s"] * n)

    def test_ten_cycles_give_ten_folds(self):
        folds = ev.loco_folds(self._fs(10))
        assert len(folds) == 10
        for f in folds:
            assert len(f.test_cycles) == 1
            assert len(f.train_cycles) == 9

    def test_two_cycles_minimal(self):
        assert len(ev.loco_folds(self._fs(2))) == 2

    def test_test_cycles_partition_the_cycle_set(self):
        folds = ev.loco_folds(self._fs(6))
        tested = sorted(c for f in folds for c in f.test_cycles)
        assert tested == list(range(6))

    def test_single_cycle_rejected(self):
        with pytest.raises(ev.EvalError, match=">= 2"):
            ev.loco_folds(self._fs(1))

    def test_random_folds_partition_rows(self):
        fs = self._fs(5)
        folds = ev.random_folds(fs, 4, seed=1)
        rows = sorted(i for f in folds for i in f.test_rows)
        assert rows == list(range(len(fs)))

    def test_cross_run_fold_disjoint(self):
        f = ev.cross_run_fold([0, 1], [10, 11])
        assert f.mode == "cross_run"
        with pytest.raises(ev.EvalError, match="overlap"):
            ev.cross_run_fold([0, 1], [1, 2])


class TestClassificationMetrics:
    def test_perfect_predictions(self):
        y = ["a", "b", "a", "b"]
        assert ev.macro_f1(y, y, ["a", "b"]) == 1.0
        assert ev.roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_roc_auc_matches_pairwise_counting(self):
        rng = np.random.default_rng(1)
        scores = np.round(rng.random(50), 2)  # induce ties
        y = rng.random(50) < 0.5
        auc = ev.roc_auc(scores, y)
        pos, neg = scores[y], scores[~y]
        oracle = sum(1.0 if p > n else (0.5 if p == n else 0.0)
                     for p in pos for n in neg) / (len(pos) * len(neg))
        assert abs(auc - oracle) < 1e-9

    def test_absent_class_warns_and_excluded(self):
        with pytest.warns(UserWarning, match="absent"):
            f1 = ev.macro_f1(["a", "a"], ["a", "b"], ["a", "b"])
        # only class a contributes: precision 1, recall 0.5 -> f1 = 2/3
        assert f1 == pytest.approx(2 / 3)

    def test_confusion_matrix_row_sums_are_support(self):
        y_true = ["a", "a", "b", "c", "c", "c"]
        y_pred = ["a", "b", "b", "c", "a", "c"]
        cm = ev.confusion_matrix(y_true, y_pred, ["a", "b", "c"])
        assert cm.sum(axis=1).tolist() == [2, 1, 3]

    def test_tpr_at_fpr_sweep(self):
        scores = [0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1]
        y = [1, 1, 1, 0, 1, 0, 0, 0]
        rows = ev.tpr_at_fpr(scores, y, targets=(0.1, 0.25))
        # no false positive fits under 10%: threshold 0.7, three of four hits
        assert rows[0]["fpr"] == 0.0 and rows[0]["tpr"] == 0.75
        # one false positive allowed: threshold 0.4 catches all positives
        assert rows[1]["fpr"] == 0.25 and rows[1]["tpr"] == 1.0

    def test_pr_auc_perfect(self):
        assert ev.pr_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)


class TestCalibration:
    def test_confident_correct_is_zero(self):
        brier, ece, _ = ev.calibration_metrics([1.0, 1.0, 0.0], [1, 1, 0])
        assert brier == 0.0 and ece == 0.0

    def test_constant_half_on_balanced(self):
        p = np.full(1000, 0.5)
        y = np.r_[np.ones(500), np.zeros(500)]
        brier, ece, _ = ev.calibration_metrics(p, y)
        assert brier == pytest.approx(0.25)
        assert ece == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(2)
        p = rng.random(100)
        y = (rng.random(100) < p).astype(int)
        brier, ece, rows = ev.calibration_metrics(p, y, n_bins=10)
        assert brier == pytest.approx(float(((p - y) ** 2).mean()))
        ece_direct = 0.0
        for b in range(10):
            m = (p >= b / 10) & (p < (b + 1) / 10) if b < 9 else (p >= 0.9)
            if m.any():
                ece_direct += m.mean() * abs(y[m].mean() - p[m].mean())
        assert ece == pytest.approx(ece_direct)
        assert sum(r["count"] for r in rows) == 100


class TestMI:
    def test_feature_equals_cycle_index(self):
        cycles = np.repeat(np.arange(8), 50)
        vals = cycles.astype(float).reshape(-1, 1)
        skills = np.tile(["a", "b"], 200)
        out = ev.mi_cycle_leakage(vals, cycles, skills)
        assert out["mi_cycle"][0] == pytest.approx(3.0, rel=0.05)  # entropy of 8 uniform

    def test_independent_feature_at_permutation_baseline(self):
        # the plug-in estimator has a positive small-sample bias (about
        # (R-1)(C-1)/(2 N ln 2) bits), so "independent" is checked against a
        # permutation null rather than an absolute bound
        rng = np.random.default_rng(3)
        vals = rng.standard_normal((1000, 1))
        cycles = np.repeat(np.arange(10), 100)
        skills = np.tile(["a", "b"], 500)
        out = ev.mi_cycle_leakage(vals, cycles, skills)
        null_cycle = []
        for k in range(20):
            perm = rng.permutation(1000)
            null = ev.mi_cycle_leakage(vals, cycles[perm], np.asarray(skills)[perm])
            null_cycle.append(null["mi_cycle"][0])
        mu, sd = float(np.mean(null_cycle)), float(np.std(null_cycle))
        assert out["mi_cycle"][0] <= mu + 4 * sd
        assert out["mi_skill"][0] < 0.05  # two-class bias is far below this bound

    def test_constant_feature_zero(self):
        vals = np.full((100, 1), 3.2)
        out = ev.mi_cycle_leakage(vals, np.repeat([0, 1], 50), ["a", "b"] * 50)
        assert out["mi_cycle"][0] == 0.0 and out["mi_skill"][0] == 0.0


class TestEffectSize:
    def test_identical_runs_zero(self):
        x = np.random.default_rng(4).standard_normal((50, 5))
        out = ev.effect_size_drift(x, x.copy())
        assert np.allclose(out["d"], 0.0)
        assert out["n_large"] == 0

    def test_one_sigma_shift(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((800, 3))
        b = a.copy()
        b[:, 1] += a[:, 1].std()
        out = ev.effect_size_drift(a, b)
        assert abs(abs(out["d"][1]) - 1.0) < 0.1

    def test_count_and_max_match_direct_formula(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((60, 4))
        b = rng.standard_normal((40, 4)) + [0.0, 2.0, 0.1, -1.5]
        out = ev.effect_size_drift(a, b)
        d_direct = []
        for k in range(4):
            na, nb = 60, 40
            pooled = np.sqrt(((na - 1) * a[:, k].var(ddof=1) + (nb - 1) * b[:, k].var(ddof=1))
                             / (na + nb - 2))
            d_direct.append((a[:, k].mean() - b[:, k].mean()) / pooled)
        assert np.allclose(out["d"], d_direct)
        assert out["n_large"] == int((np.abs(d_direct) >= 0.8).sum())
        assert out["max_abs_d"] == pytest.approx(np.abs(d_direct).max())


class TestSeparability:
    def test_identical_distributions_ratio_near_zero(self):
        rng = np.random.default_rng(7)
        vals = rng.standard_normal((400, 6))
        skills = np.tile(["a", "b"], 200)
        cycles = np.repeat(np.arange(4), 100)
        out = ev.separability_ratio(vals, skills, cycles)
        assert out["pairs"][0]["ratio"] < 1.0

    def test_disjoint_classes_ratio_above_one(self):
        rng = np.random.default_rng(8)
        vals = rng.standard_normal((400, 6))
        skills = np.tile(["a", "b"], 200)
        vals[np.asarray(skills) == "b"] += 8.0
        cycles = np.repeat(np.arange(4), 100)
        out = ev.separability_ratio(vals, skills, cycles)
        assert out["pairs"][0]["ratio"] > 1.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(9)
        vals = rng.standard_normal((200, 4))
        skills = np.tile(["a", "b"], 100)
        cycles = np.repeat([0, 1], 100)
        a = ev.separability_ratio(vals, skills, cycles)
        b = ev.separability_ratio(vals + 13.5, skills, cycles)
        assert a["pairs"][0]["ratio"] == pytest.approx(b["pairs"][0]["ratio"])

    def test_single_cycle_class_flagged(self):
        vals = np.random.default_rng(10).standard_normal((40, 3))
        skills = ["a"] * 20 + ["b"] * 20
        cycles = np.array([0] * 20 + [1] * 10 + [2] * 10)  # class a has one cycle
        out = ev.separability_ratio(vals, skills, cycles)
        assert out["flagged_single_cycle"] == ["a"]


class TestMahalanobis:
    def test_training_mean_scores_zero(self):
        x = np.random.default_rng(11).standard_normal((200, 5))
        score = ev.mahalanobis_anomaly(x, x.mean(axis=0, keepdims=True))
        assert score[0] == pytest.approx(0.0, abs=1e-9)

    def test_isotropic_matches_scaled_euclidean(self):
        rng = np.random.default_rng(12)
        sigma = 2.5
        train = rng.normal(0, sigma, (3000, 8))
        test = rng.normal(0, sigma, (40, 8))
        scores = ev.mahalanobis_anomaly(train, test)
        euclid = np.linalg.norm(test - train.mean(axis=0), axis=1) / sigma
        assert np.all(np.abs(scores - euclid) / euclid < 0.10)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ev.EvalError):
            ev.mahalanobis_anomaly(np.zeros((1, 3)), np.zeros((2, 3)))


class TestBootstrap:
    def test_constant_metric_zero_width(self):
        ci = ev.bootstrap_ci(lambda xs: 1.0, list(range(50)), 200, seed=0)
        assert ci.lo == ci.hi == 1.0

    def test_deterministic_given_seed(self):
        data = list(np.random.default_rng(13).random(100))
        a = ev.bootstrap_ci(lambda xs: float(np.mean(xs)), data, 300, seed=4)
        b = ev.bootstrap_ci(lambda xs: float(np.mean(xs)), data, 300, seed=4)
        assert (a.lo, a.hi) == (b.lo, b.hi)
        assert a.n_resamples == 300 and a.seed == 4

    def test_coverage_on_uniform_mean(self):
        rng = np.random.default_rng(14)
        hits = 0
        trials = 60
        for t in range(trials):
            data = rng.random(1000)
            ci = ev.bootstrap_ci(lambda xs: float(np.mean(xs)), list(data), 200,
                                 level=0.95, seed=t)
            hits += ci.lo <= 0.5 <= ci.hi
        assert hits / trials >= 0.90

    def test_degenerate_data_rejected(self):
        with pytest.raises(ev.EvalError, match="single-record"):
            ev.bootstrap_ci(lambda xs: 0.0, [1], 200)


def _toy_pipeline_featureset(n_cycles=4, per_cycle_records=4, windows_per_record=6, seed=0):
    """Three separable skills with per-cycle offsets and a temperature trend."""
    rng = np.random.default_rng(seed)
    rows, cycles, temps, skills, rec_ids, states, labels = [], [], [], [], [], [], []
    means = {"a": np.r_[3.0, np.zeros(5)], "b": np.r_[0, 3.0, np.zeros(4)],
             "c": np.r_[0, 0, 3.0, np.zeros(3)]}
    for c in range(n_cycles):
        for r in range(per_cycle_records):
            skill = "abc"[r % 3]
            rid = f"c{c}_r{r}"
            for w in range(windows_per_record):
                t = 35 + 2 * c + 0.1 * w
                x = means[skill] + rng.standard_normal(6) * 0.8 + 0.6 * c + 0.05 * t
                rows.append(x)
                cycles.append(c)
                temps.append(t)
                skills.append(skill)
                rec_ids.append(rid)
                states.append("normal")
                labels.append("normal")
    return _featureset(np.array(rows), cycles, skills, temps, states, labels, rec_ids)


class TestFoldRun:
    def test_loco_run_produces_record_predictions(self):
        fs = _toy_pipeline_featureset()
        folds = ev.loco_folds(fs)
        cfg = drift.DriftConfig(detrend_degree=1, k_sel=4)
        params = forest.ForestParams(n_trees=15, seed=0)
        outputs = ev.run_folds(fs, folds, cfg, params, target="skill")
        agg = ev.aggregate_outputs(outputs)
        assert len(agg["y_true"]) == 16  # 4 cycles x 4 records
        assert ev.macro_f1(agg["y_true"], agg["y_pred"], agg["classes"]) > 0.9

    def test_latency_profile_order_relation(self):
        fs = _toy_pipeline_featureset(n_cycles=2, per_cycle_records=60)
        model = forest.train_forest(fs.values, fs.skills,
                                    forest.ForestParams(n_trees=10, seed=1))
        rid = np.asarray(fs.record_ids)
        blocks = [fs.values[rid == r] for r in dict.fromkeys(fs.record_ids)]

        def single(block):
            from emaudit.detector import pool_posteriors
            return pool_posteriors(forest.predict_proba(model, block))[1]

        def batch(items):
            stacked = np.concatenate(items)
            forest.predict_proba(model, stacked)

        prof = ev.latency_profile(single, batch, blocks, min_records=100)
        assert prof["p99_ms"] >= prof["median_ms"]
        assert prof["batched_amortized_ms"] <= prof["median_ms"]
        assert prof["n_records"] == len(blocks)
        assert prof["hardware"]
