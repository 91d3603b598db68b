import numpy as np
import pytest

from emaudit import profiles, survey, synth
from emaudit.survey import (BandSweep, SurveyError, SurveyInconclusiveError, band_deltas,
                            governor_diagnosis, run_synthetic_sweep, select_carriers)


def _sweep(rows):
    return BandSweep(rows=rows)


class TestBandDeltas:
    def test_identical_powers_zero_deltas(self):
        sweep = _sweep([(100.0, "idle", -40.0), (100.0, "cpu", -40.0), (100.0, "ram", -40.0)])
        assert band_deltas(sweep)[100.0] == (0.0, 0.0)

    def test_deltas_from_idle_reference(self):
        sweep = _sweep([(80.0, "idle", -50.0), (80.0, "cpu", -41.0), (80.0, "ram", -48.0)])
        d_cpu, d_ram = band_deltas(sweep)[80.0]
        assert d_cpu == pytest.approx(9.0) and d_ram == pytest.approx(2.0)

    def test_missing_condition_errors(self):
        sweep = _sweep([(80.0, "idle", -50.0), (80.0, "cpu", -41.0)])
        with pytest.raises(SurveyError, match="ram"):
            band_deltas(sweep)

    def test_condition_swap_antisymmetry(self):
        rows = [(f, c, p) for f, c, p in
                [(10.0, "idle", -50.0), (10.0, "cpu", -45.0), (10.0, "ram", -47.0),
                 (20.0, "idle", -55.0), (20.0, "cpu", -54.0), (20.0, "ram", -44.0)]]
        swapped = [(f, {"cpu": "ram", "ram": "cpu"}.get(c, c), p) for f, c, p in rows]
        d = band_deltas(_sweep(rows))
        ds = band_deltas(_sweep(swapped))
        for f in d:
            assert d[f][0] == ds[f][1] and d[f][1] == ds[f][0]


class TestSelectCarriers:
    def test_basic_selection(self):
        deltas = {80.0: (9.0, 1.0), 800.0: (1.0, 8.0), 1800.0: (4.0, 3.0)}
        (f_cpu, f_ram), table = select_carriers(deltas, penalty=0.5)
        assert (f_cpu, f_ram) == (80.0, 800.0)
        assert {r["carrier_mhz"] for r in table} == set(deltas)

    def test_penalty_discounts_confounded_ram_candidate(self):
        # 400 MHz has the best raw RAM delta but heavy CPU confounding
        deltas = {400.0: (8.0, 9.0), 800.0: (0.5, 8.0)}
        (_, f_ram), _ = select_carriers(deltas, penalty=0.5)
        assert f_ram == 800.0
        (_, f_ram0), _ = select_carriers(deltas, penalty=0.0)
        assert f_ram0 == 400.0  # penalty off: plain argmax

    def test_inconclusive_when_no_positive_ram_delta(self):
        with pytest.raises(SurveyInconclusiveError):
            select_carriers({100.0: (5.0, -1.0)})

    def test_dominated_carrier_never_changes_selection(self):
        deltas = {80.0: (9.0, 1.0), 800.0: (1.0, 8.0)}
        base = select_carriers(deltas)[0]
        deltas[55.0] = (0.5, 0.5)  # strictly dominated on both axes
        assert select_carriers(deltas)[0] == base


class TestGovernorDiagnosis:
    def test_variance_collapse_flagged(self):
        carriers = [80.0, 1800.0]
        unpinned = _sweep([(f, c, p) for f, c, p in [
            (80.0, "idle", -50), (80.0, "cpu", -42), (80.0, "ram", -48),
            (1800.0, "idle", -40), (1800.0, "cpu", -60), (1800.0, "ram", -50)]])
        pinned = _sweep([(f, c, p) for f, c, p in [
            (80.0, "idle", -50), (80.0, "cpu", -42.5), (80.0, "ram", -48),
            (1800.0, "idle", -41), (1800.0, "cpu", -41.1), (1800.0, "ram", -40.9)]])
        report = governor_diagnosis(unpinned, pinned, flag_ratio=3.0)
        flags = {r["carrier_mhz"]: r["flagged"] for r in report}
        assert flags[1800.0] is True
        assert flags[80.0] is False

    def test_no_flags_when_sweeps_match(self):
        rows = [(80.0, c, p) for c, p in [("idle", -50), ("cpu", -42), ("ram", -48)]]
        report = governor_diagnosis(_sweep(rows), _sweep(list(rows)), flag_ratio=3.0)
        assert not any(r["flagged"] for r in report)

    def test_flag_ratio_configurable(self):
        unpinned = _sweep([(9.0, c, p) for c, p in [("idle", -50), ("cpu", -44), ("ram", -47)]])
        pinned = _sweep([(9.0, c, p) for c, p in [("idle", -50), ("cpu", -48), ("ram", -49)]])
        loose = governor_diagnosis(unpinned, pinned, flag_ratio=20.0)
        tight = governor_diagnosis(unpinned, pinned, flag_ratio=2.0)
        assert not loose[0]["flagged"] and tight[0]["flagged"]

    def test_mismatched_carriers_rejected(self):
        a = _sweep([(80.0, c, -50.0) for c in ("idle", "cpu", "ram")])
        b = _sweep([(81.0, c, -50.0) for c in ("idle", "cpu", "ram")])
        with pytest.raises(SurveyError, match="different carriers"):
            governor_diagnosis(a, b)


@pytest.fixture(scope="module")
def host_model():
    return synth.HostEmissionModel(
        lines=[synth.EmissionLine("cpu", 80.0, 25.0, 9.0),
               synth.EmissionLine("dram", 800.0, 50.0, 9.0)],
        noise_floor=1.0,
        governor_line_mhz=1800.0,
        governor_spur_gain=11.0,
        governor_fm_depth_hz=0.45 * 250_000,
    )


@pytest.fixture(scope="module")
def conditions():
    return profiles.calibration_conditions(duration_s=1.0)


@pytest.fixture(scope="module")
def carriers():
    return [20.0, 80.0, 300.0, 800.0, 1800.0]


class TestSyntheticSweep:
    def test_recovers_generator_carrier_pair(self, host_model, conditions, carriers):
        sweep = run_synthetic_sweep(host_model, carriers, conditions, seed=5,
                                    sample_rate=250_000, dwell_s=1.0, pinned=True)
        deltas = band_deltas(sweep)
        (f_cpu, f_ram), _ = select_carriers(deltas)
        assert (f_cpu, f_ram) == (80.0, 800.0)

    def test_ram_delta_peaks_at_ram_carrier(self, host_model, conditions, carriers):
        sweep = run_synthetic_sweep(host_model, carriers, conditions, seed=6,
                                    sample_rate=250_000, dwell_s=1.0, pinned=True)
        deltas = band_deltas(sweep)
        ram_deltas = {f: d[1] for f, d in deltas.items()}
        assert max(ram_deltas, key=ram_deltas.get) == 800.0

    def test_governor_flagged_exactly_at_fm_carrier(self, host_model, conditions, carriers):
        unpinned = run_synthetic_sweep(host_model, carriers, conditions, seed=7,
                                       sample_rate=250_000, dwell_s=1.0, pinned=False)
        pinned = run_synthetic_sweep(host_model, carriers, conditions, seed=7,
                                     sample_rate=250_000, dwell_s=1.0, pinned=True)
        report = governor_diagnosis(unpinned, pinned, flag_ratio=3.0)
        flagged = [r["carrier_mhz"] for r in report if r["flagged"]]
        assert flagged == [1800.0]


def test_sweep_csv_round_trip(tmp_path):
    sweep = _sweep([(80.0, "idle", -50.25), (80.0, "cpu", -43.5), (80.0, "ram", -47.125)])
    sweep.to_csv(tmp_path / "s.csv")
    loaded = BandSweep.from_csv(tmp_path / "s.csv")
    assert loaded.rows == sweep.rows
