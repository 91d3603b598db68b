"""Measured carrier selection and governor-artifact diagnosis.

A sweep measures median band power per candidate carrier under idle,
CPU-intensive, and memory-intensive calibration workloads.  Workload
deltas against idle rank the candidates: the CPU receiver takes the
largest CPU delta, the RAM receiver the largest RAM delta after a
confounding penalty on the carrier's CPU delta.  A pinned/unpinned sweep
pair flags carriers whose cross-condition power variance collapses under
governor pinning, the signature of an activity-frequency-modulation
artifact masquerading as a workload power signature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureConfig, _welch_linear
from .synth import CycleContext, HostEmissionModel, SkillProfile, render_record

CONDITIONS = ("idle", "cpu", "ram")


class SurveyError(Exception):
    pass


class SurveyInconclusiveError(SurveyError):
    pass


@dataclass
class BandSweep:
    """Rows of (carrier_mhz, condition, median band power dB) plus config."""

    rows: list[tuple[float, str, float]]
    dwell_s: float = 2.0

    def carriers(self) -> list[float]:
        return sorted({c for c, _, _ in self.rows})

    def power(self, carrier_mhz: float, condition: str) -> float:
        for c, cond, p in self.rows:
            if c == carrier_mhz and cond == condition:
                return p
        raise SurveyError(f"no {condition!r} measurement for carrier {carrier_mhz} MHz")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write("carrier_mhz,condition,power_db\n")
            for c, cond, p in self.rows:
                f.write(f"{float(c)!r},{cond},{float(p)!r}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "BandSweep":
        rows = []
        with open(path) as f:
            header = f.readline().strip()
            if header != "carrier_mhz,condition,power_db":
                raise SurveyError(f"bad sweep header: {header!r}")
            for line in f:
                line = line.strip()
                if not line:
                    continue
                c, cond, p = line.split(",")
                rows.append((float(c), cond, float(p)))
        return cls(rows=rows)


def median_band_power_db(x: np.ndarray, sample_rate: float, segment_len: int = 256,
                         n_dwell_segments: int = 8) -> float:
    """Median over dwell segments of the total in-band Welch power, in dB."""
    n = x.shape[0]
    seg_n = max(n // n_dwell_segments, segment_len)
    powers = []
    cfg = FeatureConfig(sample_rate=sample_rate, psd_segment=segment_len)
    for k in range(0, n - seg_n + 1, seg_n):
        _, p, _ = _welch_linear(x[k:k + seg_n], cfg)
        powers.append(p.sum())
    med = float(np.median(powers))
    return 10.0 * math.log10(max(med, 1e-12))


def band_deltas(sweep: BandSweep) -> dict[float, tuple[float, float]]:
    """Per-carrier (delta_cpu, delta_ram) in dB against the idle condition."""
    out = {}
    for carrier in sweep.carriers():
        p_idle = sweep.power(carrier, "idle")
        p_cpu = sweep.power(carrier, "cpu")
        p_ram = sweep.power(carrier, "ram")
        out[carrier] = (p_cpu - p_idle, p_ram - p_idle)
    return out


def select_carriers(deltas: dict[float, tuple[float, float]], penalty: float = 0.5,
                    ) -> tuple[tuple[float, float], list[dict]]:
    """Pick (cpu, ram) carriers and emit the full ranked candidate table.

    cpu carrier: argmax delta_cpu.  ram carrier: argmax of
    delta_ram - penalty * max(delta_cpu, 0), which discounts candidates with
    CPU confounding.  Raises ``SurveyInconclusiveError`` when no carrier has
    a positive delta for either role.
    """
    if not deltas:
        raise SurveyError("empty delta table")
    carriers = sorted(deltas)
    d_cpu = np.array([deltas[c][0] for c in carriers])
    d_ram = np.array([deltas[c][1] for c in carriers])
    if not np.any(d_cpu > 0) or not np.any(d_ram > 0):
        raise SurveyInconclusiveError(
            "survey inconclusive: need at least one carrier with positive CPU delta "
            "and one with positive RAM delta")
    ram_score = d_ram - penalty * np.maximum(d_cpu, 0.0)
    f_cpu = carriers[int(np.argmax(d_cpu))]
    f_ram = carriers[int(np.argmax(ram_score))]
    table = [{
        "carrier_mhz": c,
        "delta_cpu_db": float(deltas[c][0]),
        "delta_ram_db": float(deltas[c][1]),
        "ram_score": float(ram_score[i]),
    } for i, c in enumerate(carriers)]
    table.sort(key=lambda r: -(max(r["delta_cpu_db"], r["ram_score"])))
    return (f_cpu, f_ram), table


def write_ranking_csv(table: list[dict], path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("carrier_mhz,delta_cpu_db,delta_ram_db,ram_score\n")
        for r in table:
            f.write(f"{float(r['carrier_mhz'])!r},{float(r['delta_cpu_db'])!r},"
                    f"{float(r['delta_ram_db'])!r},{float(r['ram_score'])!r}\n")


def governor_diagnosis(unpinned: BandSweep, pinned: BandSweep,
                       flag_ratio: float = 3.0) -> list[dict]:
    """Flag carriers whose cross-condition power variance collapses when pinned.

    Returns one row per carrier with both variances, their ratio, and the
    flag at the configurable ratio threshold.
    """
    if unpinned.carriers() != pinned.carriers():
        raise SurveyError("pinned/unpinned sweeps cover different carriers")
    report = []
    for carrier in unpinned.carriers():
        v_un = float(np.var([unpinned.power(carrier, c) for c in CONDITIONS]))
        v_pin = float(np.var([pinned.power(carrier, c) for c in CONDITIONS]))
        ratio = v_un / max(v_pin, 1e-12)
        report.append({
            "carrier_mhz": carrier,
            "var_unpinned": v_un,
            "var_pinned": v_pin,
            "ratio": ratio,
            "flagged": bool(v_un > 1e-6 and ratio >= flag_ratio),
        })
    return report


def run_synthetic_sweep(host: HostEmissionModel, carriers, conditions: dict[str, SkillProfile],
                        seed: int, sample_rate: float = 500_000.0, dwell_s: float = 2.0,
                        pinned: bool = True) -> BandSweep:
    """Render dwell captures per (carrier, condition) and measure band powers.

    ``conditions`` maps the three condition names to calibration profiles of
    ``dwell_s`` duration.
    """
    missing = set(CONDITIONS) - set(conditions)
    if missing:
        raise SurveyError(f"missing calibration conditions: {sorted(missing)}")
    rows = []
    ctx = CycleContext(cycle_index=0)
    for k, carrier in enumerate(carriers):
        chan = host.channel("cpu_band", carrier, pinned=pinned)
        for cond in CONDITIONS:
            prof = conditions[cond]
            rec = render_record(
                prof, (chan, host.channel("ram_band", carrier, pinned=pinned)), ctx,
                seed=seed + 1000 * k, sample_rate=sample_rate,
                record_id=f"sweep_{carrier:g}MHz_{cond}")
            x = rec.complex_stream("cpu_band")
            rows.append((float(carrier), cond, median_band_power_db(x, sample_rate)))
    return BandSweep(rows=rows, dwell_s=dwell_s)
