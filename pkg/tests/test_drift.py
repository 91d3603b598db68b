import warnings

import numpy as np
import pytest

from emaudit import drift
from emaudit.drift import (DriftConfig, DriftError, LeakageError, anova_f, anova_select,
                           apply_cycle_normalize, apply_detrend, fit_cycle_stats,
                           fit_pipeline, fit_temperature_detrend, load_model, save_model,
                           transform)
from emaudit.featurestore import FeatureSet


def _featureset(values, cycles, temps=None, skills=None):
    n = values.shape[0]
    return FeatureSet(
        values=values.astype(np.float32),
        record_ids=[f"r{i}" for i in range(n)],
        window_index=np.arange(n, dtype=np.int32),
        cycle_index=np.asarray(cycles, dtype=np.int32),
        temperature_c=(np.asarray(temps, dtype=np.float32) if temps is not None
                       else np.zeros(n, dtype=np.float32)),
        skills=list(skills) if skills is not None else ["s"] * n,
        states=["normal"] * n,
        labels=["normal"] * n,
        layout={"all": (0, values.shape[1])},
        config_hash="test",
    )


class TestCycleNormalize:
    def test_constant_feature_maps_to_zero(self):
        x = np.full((6, 3), 7.0)
        cycles = np.array([0, 0, 0, 1, 1, 1])
        stats = fit_cycle_stats(x, cycles)
        xn = apply_cycle_normalize(x, cycles, stats, eps=1e-6)
        assert np.allclose(xn, 0.0)

    def test_offsets_centered_per_cycle(self):
        rng = np.random.default_rng(0)
        base = rng.standard_normal((40, 4))
        x = base.copy()
        x[:20, 0] += 5.0
        x[20:, 0] -= 5.0
        cycles = np.repeat([0, 1], 20)
        stats = fit_cycle_stats(x, cycles)
        xn = apply_cycle_normalize(x, cycles, stats, eps=1e-6)
        assert abs(xn[:20].mean(axis=0)).max() < 1e-9
        assert abs(xn[20:].mean(axis=0)).max() < 1e-9

    def test_unit_std_within_eps_bound(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((500, 8))
        cycles = np.repeat(np.arange(5), 100)
        stats = fit_cycle_stats(x, cycles)
        xn = apply_cycle_normalize(x, cycles, stats, eps=1e-6)
        for c in range(5):
            sd = xn[cycles == c].std(axis=0)
            assert np.all(sd <= 1.0 + 1e-12) and np.all(sd >= 1 - 1e-3)

    def test_missing_cycle_raises_without_fallback(self):
        x = np.random.default_rng(0).standard_normal((10, 2))
        stats = fit_cycle_stats(x[:5], np.zeros(5, int))
        with pytest.raises(DriftError, match="absent"):
            apply_cycle_normalize(x[5:], np.ones(5, int), stats, eps=1e-6)

    def test_self_stats_fallback(self):
        x = np.random.default_rng(0).standard_normal((10, 2))
        stats = fit_cycle_stats(x[:5], np.zeros(5, int))
        xn = apply_cycle_normalize(x[5:], np.ones(5, int), stats, eps=1e-6,
                                   allow_self_stats=True)
        assert abs(xn.mean(axis=0)).max() < 1e-9

    def test_single_window_cycle_rejected(self):
        with pytest.raises(DriftError, match=">= 2"):
            fit_cycle_stats(np.zeros((3, 2)), np.array([0, 0, 1]))


class TestDetrend:
    def test_exact_linear_fit_removes_everything(self):
        temps = np.linspace(20, 60, 50)
        x = np.outer(temps, [2.0, -1.0]) + np.array([5.0, 3.0])
        beta = fit_temperature_detrend(x, temps, degree=1)
        resid = apply_detrend(x, temps, beta)
        assert np.abs(resid).max() < 1e-9

    def test_degree_zero_subtracts_mean(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((30, 3)) + 4.0
        temps = rng.uniform(20, 50, 30)
        beta = fit_temperature_detrend(x, temps, degree=0)
        resid = apply_detrend(x, temps, beta)
        assert np.allclose(resid.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(beta[0], x.mean(axis=0))

    def test_residual_uncorrelated_with_temperature(self):
        rng = np.random.default_rng(3)
        temps = rng.uniform(20, 60, 200)
        x = np.outer(temps, rng.standard_normal(5)) + rng.standard_normal((200, 5))
        beta = fit_temperature_detrend(x, temps, degree=1)
        resid = apply_detrend(x, temps, beta)
        tc = temps - temps.mean()
        for k in range(5):
            r = np.dot(resid[:, k] - resid[:, k].mean(), tc)
            denom = np.linalg.norm(resid[:, k] - resid[:, k].mean()) * np.linalg.norm(tc)
            assert abs(r) / max(denom, 1e-12) < 1e-6

    def test_identical_temperatures_degenerate_with_warning(self):
        x = np.random.default_rng(4).standard_normal((20, 2))
        temps = np.full(20, 35.0)
        with pytest.warns(UserWarning, match="distinct temperature"):
            beta = fit_temperature_detrend(x, temps, degree=1)
        assert np.allclose(beta[1], 0.0)
        resid = apply_detrend(x, temps, beta)
        assert np.allclose(resid, x - x.mean(axis=0), atol=1e-12)


class TestAnova:
    def test_constant_feature_scores_zero_and_ranks_last(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((60, 3))
        x[:, 1] = 2.5
        x[:30, 0] += 3.0  # informative
        labels = np.repeat(["a", "b"], 30)
        f = anova_f(x, labels)
        assert f[1] == 0.0
        mask = anova_select(x, labels, 1)
        assert 1 not in mask and 0 in mask

    def test_perfect_separator_ranks_first(self):
        x = np.zeros((20, 2))
        x[10:, 0] = 1.0  # zero within-class variance, perfect split
        x[:, 1] = np.random.default_rng(6).standard_normal(20)
        labels = np.repeat(["a", "b"], 10)
        f = anova_f(x, labels)
        assert f[0] > f[1]
        assert anova_select(x, labels, 1)[0] == 0

    def test_matches_direct_sum_of_squares_formula(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((45, 5))
        labels = np.array(list("abc") * 15)
        f = anova_f(x, labels)
        for k in range(5):
            groups = [x[labels == c, k] for c in "abc"]
            grand = x[:, k].mean()
            ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
            ssw = sum(((g - g.mean()) ** 2).sum() for g in groups)
            f_direct = (ssb / 2) / (ssw / (45 - 3))
            assert abs(f[k] - f_direct) < 1e-9

    def test_tie_break_lower_index(self):
        x = np.zeros((20, 3))
        x[:, 0] = np.repeat([0.0, 1.0], 10)
        x[:, 2] = x[:, 0]  # identical F as feature 0
        labels = np.repeat(["a", "b"], 10)
        mask = anova_select(x, labels, 1)
        assert mask.tolist() == [0]

    def test_mask_monotone_in_k(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((60, 12))
        labels = np.repeat(["a", "b", "c"], 20)
        masks = [set(anova_select(x, labels, k).tolist()) for k in (3, 6, 9, 12)]
        for small, big in zip(masks, masks[1:]):
            assert small < big

    def test_single_class_rejected(self):
        with pytest.raises(DriftError, match=">= 2 classes"):
            anova_f(np.zeros((10, 2)), np.array(["a"] * 10))


def _pipeline_data(n_cycles=4, per_cycle=30, dim=12, seed=0):
    rng = np.random.default_rng(seed)
    rows, cycles, temps, skills = [], [], [], []
    for c in range(n_cycles):
        t0 = 30 + 2.0 * c
        for i in range(per_cycle):
            skill = ["a", "b"][i % 2]
            base = rng.standard_normal(dim)
            base[0] += 3.0 * (skill == "a")
            base += 0.5 * c  # cycle offset
            temp = t0 + 0.05 * i
            base[1] += 0.3 * temp  # thermal trend
            rows.append(base)
            cycles.append(c)
            temps.append(temp)
            skills.append(skill)
    return _featureset(np.array(rows), cycles, temps, skills)


class TestPipeline:
    def test_scaler_contract_on_training_data(self):
        fs = _pipeline_data()
        cfg = DriftConfig(detrend_degree=1, k_sel=6)
        model = fit_pipeline(fs, cfg)
        x = transform(model, fs, for_training=True)
        assert x.shape == (len(fs), 6)
        assert np.abs(x.mean(axis=0)).max() < 1e-9
        assert np.allclose(x.std(axis=0), 1.0, atol=1e-9)

    def test_unseen_cycle_transforms_via_self_stats(self):
        fs = _pipeline_data(n_cycles=5)
        train = fs.subset(fs.cycle_index != 4)
        test = fs.subset(fs.cycle_index == 4)
        model = fit_pipeline(train, DriftConfig(k_sel=4), holdout_cycles=(4,))
        out = transform(model, test)
        assert out.shape[0] == len(test)
        assert np.all(np.isfinite(out))

    def test_leakage_guard_trips_on_contaminated_fit(self):
        fs = _pipeline_data(n_cycles=3)
        with pytest.raises(LeakageError, match="holdout"):
            fit_pipeline(fs, DriftConfig(k_sel=4), holdout_cycles=(1,))

    def test_training_transform_rejects_holdout_rows(self):
        fs = _pipeline_data(n_cycles=3)
        train = fs.subset(fs.cycle_index != 2)
        test = fs.subset(fs.cycle_index == 2)
        model = fit_pipeline(train, DriftConfig(k_sel=4), holdout_cycles=(2,))
        with pytest.raises(LeakageError, match="holdout"):
            transform(model, test, for_training=True)

    def test_training_transform_rejects_other_data(self):
        fs = _pipeline_data(n_cycles=3)
        train = fs.subset(fs.cycle_index != 2)
        model = fit_pipeline(train, DriftConfig(k_sel=4), holdout_cycles=(2,))
        other = train.subset(np.arange(len(train) - 4))
        with pytest.raises(LeakageError, match="not the fit fold"):
            transform(model, other, for_training=True)

    def test_refit_is_reproducible(self):
        fs = _pipeline_data()
        cfg = DriftConfig(k_sel=5)
        m1 = fit_pipeline(fs, cfg)
        m2 = fit_pipeline(fs, cfg)
        assert np.array_equal(m1.beta, m2.beta)
        assert np.array_equal(m1.mask, m2.mask)
        assert m1.fit_fingerprint == m2.fit_fingerprint

    def test_serialization_round_trip(self, tmp_path):
        fs = _pipeline_data()
        model = fit_pipeline(fs, DriftConfig(k_sel=5))
        path = tmp_path / "drift.json"
        save_model(model, path)
        loaded = load_model(path)
        x1 = transform(model, fs)
        x2 = transform(loaded, fs)
        assert np.allclose(x1, x2)
        save_model(loaded, tmp_path / "drift2.json")
        assert (tmp_path / "drift.json").read_bytes() == (tmp_path / "drift2.json").read_bytes()

    def test_state_target_selects_on_states(self):
        fs = _pipeline_data()
        fs.states = ["attack" if s == "a" else "normal" for s in fs.skills]
        fs.skills = [""] * len(fs)
        model = fit_pipeline(fs, DriftConfig(k_sel=3), target="state")
        assert 0 in model.mask  # the state-informative feature survives
