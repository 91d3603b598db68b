"""320-d physical feature extraction for fine windows.

Every fine window maps to a fixed-layout vector built from four groups:

* per-receiver log-PSD band energies (64 equal-width bands over the full
  sampled bandwidth),
* per-receiver spectral-shape scalars (centroid, bandwidth, flatness,
  rolloffs, spectral moments, peak statistics, entropy),
* per-receiver temporal-envelope scalars (amplitude moments and
  percentiles, short-lag autocorrelation, burst statistics from
  median+k*MAD threshold crossings),
* cross-receiver coupling (per-band log-energy differences, envelope
  cross-correlation, zero-lag correlation, circular phase statistics in
  sub-bands).

Layout: per receiver 64 + 10 + 36 = 110, two receivers then 64 + 17 + 1 +
18 = 100 cross features, 320 total.  The layout is fixed per configuration
and identical for every vector produced under one config hash.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.fft as _sfft

N_FEATURES = 320
_TINY = 1e-30

_SHAPE_NAMES = ("centroid_hz", "bandwidth_hz", "flatness", "rolloff85_hz", "rolloff95_hz",
                "skewness", "kurtosis", "peak_hz", "peak_to_mean", "entropy")
_ENV_NAMES = ("env_mean", "env_std", "env_skew", "env_kurt", "env_p10", "env_p50",
              "env_p90", "env_crest")
_BURST_NAMES = ("burst_rate", "burst_duty", "burst_dur_mean", "burst_dur_std", "burst_dur_max",
                "gap_mean", "gap_std", "gap_max", "peak_ratio_mean", "peak_ratio_max",
                "mad_over_med", "area_ratio_mean")


class FeatureError(Exception):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """Extraction parameters; the hash pins the layout of every vector."""

    sample_rate: float
    psd_segment: int | None = None      # None: scaled from the 20 MS/s reference of 4096
    psd_overlap: float = 0.5
    psd_window: str = "hann"
    n_bands: int = 64
    envelope_block_s: float = 1e-3
    ac_lags: int = 16
    xcorr_lags: int = 8
    phase_bands: int = 9
    burst_mad_k: float = 3.0
    floor_db: float = -120.0

    def segment_len(self) -> int:
        if self.psd_segment is not None:
            return self.psd_segment
        ref = 4096.0 * self.sample_rate / 20e6
        n = 1 << max(int(round(math.log2(max(ref, 1.0)))), 0)
        return int(min(max(n, 256), 8192))

    def config_hash(self) -> str:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["psd_segment"] = self.segment_len()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def layout(self) -> dict[str, tuple[int, int]]:
        nb, na, nx, npb = self.n_bands, self.ac_lags, self.xcorr_lags, self.phase_bands
        per_rx = nb + 10 + 8 + na + 12
        out, pos = {}, 0
        for rx in ("cpu", "ram"):
            for name, width in ((f"{rx}_band_energy", nb), (f"{rx}_spectral_shape", 10),
                                (f"{rx}_temporal", 8 + na + 12)):
                out[name] = (pos, pos + width)
                pos += width
        for name, width in (("xr_band_diff", nb), ("xr_env_xcorr", 2 * nx + 1),
                            ("xr_zero_lag", 1), ("xr_phase", 2 * npb)):
            out[name] = (pos, pos + width)
            pos += width
        assert pos == 2 * per_rx + nb + (2 * nx + 1) + 1 + 2 * npb
        return out

    def n_features(self) -> int:
        return max(b for _, b in self.layout().values())


@dataclass
class PSDEstimate:
    """Averaged two-sided periodogram; ``power_db`` holds one bin per
    ``segment_len`` frequency, DC-centered, floored at the zero-power guard."""

    freqs_hz: np.ndarray
    power_db: np.ndarray
    segment_len: int
    overlap: float
    window: str

    def power_linear(self) -> np.ndarray:
        return 10.0 ** (self.power_db / 10.0)


def _hann(n: int) -> np.ndarray:
    return np.hanning(n).astype(np.float32)


def _segment_ffts(x: np.ndarray, seg: int, hop: int, w: np.ndarray) -> np.ndarray:
    """Windowed segment FFTs, shape (n_segments, seg), not frequency-shifted."""
    n_segs = (x.shape[0] - seg) // hop + 1
    strided = np.lib.stride_tricks.as_strided(
        x, shape=(n_segs, seg), strides=(x.strides[0] * hop, x.strides[0]))
    return _sfft.fft(strided * w, axis=1)


def _welch_linear(x: np.ndarray, cfg: FeatureConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fftshifted freqs, fftshifted mean linear power, raw segment FFTs).

    Per-bin scaling is ``|X[k]|^2 / (seg * sum(w^2))`` so that summing bins
    recovers the window-weighted time-domain power (Parseval).
    """
    seg = cfg.segment_len()
    if x.shape[0] < seg:
        raise FeatureError(f"slice of {x.shape[0]} samples shorter than one segment ({seg})")
    hop = max(int(round(seg * (1.0 - cfg.psd_overlap))), 1)
    w = _hann(seg)
    X = _segment_ffts(np.ascontiguousarray(x, dtype=np.complex64), seg, hop, w)
    scale = 1.0 / (seg * float(np.sum(w.astype(np.float64) ** 2)))
    p = (X.real ** 2 + X.imag ** 2).mean(axis=0, dtype=np.float64) * scale
    p = np.fft.fftshift(p)
    freqs = np.fft.fftshift(np.fft.fftfreq(seg, d=1.0 / cfg.sample_rate))
    return freqs, p, X


def welch_psd(x: np.ndarray, segment_len: int | None = None, overlap: float = 0.5,
              sample_rate: float = 1.0, floor_db: float = -120.0) -> PSDEstimate:
    """Hann-windowed averaged periodogram of a complex slice.

    Total power (sum of linear bins) matches time-domain mean power within
    the window-gain correction; an all-zero slice returns a uniform floor.
    """
    cfg = FeatureConfig(sample_rate=sample_rate, psd_segment=segment_len,
                        psd_overlap=overlap, floor_db=floor_db)
    freqs, p, _ = _welch_linear(x, cfg)
    power_db = 10.0 * np.log10(np.maximum(p, 10.0 ** (floor_db / 10.0)))
    return PSDEstimate(freqs, power_db, cfg.segment_len(), overlap, "hann")


def _band_energies_db(p: np.ndarray, n_bands: int, floor_db: float) -> np.ndarray:
    edges = np.linspace(0, p.shape[0], n_bands + 1).astype(int)
    sums = np.add.reduceat(p, edges[:-1])
    return 10.0 * np.log10(np.maximum(sums, 10.0 ** (floor_db / 10.0)))


def _spectral_shape(freqs: np.ndarray, p: np.ndarray) -> np.ndarray:
    total = float(p.sum())
    if total <= 0.0:
        return np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0])
    q = p / total
    centroid = float(np.dot(freqs, q))
    var = float(np.dot((freqs - centroid) ** 2, q))
    bw = math.sqrt(max(var, 0.0))
    logp = np.log(p + _TINY)
    flatness = float(math.exp(logp.mean()) / (p.mean() + _TINY))
    cum = np.cumsum(q)
    roll85 = float(freqs[int(np.searchsorted(cum, 0.85))])
    roll95 = float(freqs[int(np.searchsorted(cum, 0.95))])
    if bw > 0:
        z = (freqs - centroid) / bw
        skew = float(np.dot(z ** 3, q))
        kurt = float(np.dot(z ** 4, q))
    else:
        skew, kurt = 0.0, 0.0
    peak = float(freqs[int(np.argmax(p))])
    p2m = float(p.max() / (p.mean() + _TINY))
    ent = float(-(q * np.log(q + _TINY)).sum() / math.log(p.shape[0]))
    return np.array([centroid, bw, flatness, roll85, roll95, skew, kurt, peak, p2m, ent])


def _block_envelope(x: np.ndarray, block: int) -> np.ndarray:
    n = (x.shape[0] // block) * block
    if n == 0:
        return np.abs(x).astype(np.float64)
    return np.abs(x[:n]).reshape(-1, block).mean(axis=1, dtype=np.float64)


def _env_stats(env: np.ndarray) -> np.ndarray:
    m = float(env.mean())
    sd = float(env.std())
    if sd > 0:
        z = (env - m) / sd
        skew = float((z ** 3).mean())
        kurt = float((z ** 4).mean())
    else:
        skew, kurt = 0.0, 0.0
    p10, p50, p90 = (float(v) for v in np.percentile(env, [10, 50, 90]))
    rms = float(np.sqrt((env ** 2).mean()))
    crest = float(env.max() / rms) if rms > 0 else 0.0
    return np.array([m, sd, skew, kurt, p10, p50, p90, crest])


def _autocorr(env: np.ndarray, n_lags: int) -> np.ndarray:
    e = env - env.mean()
    denom = float((e ** 2).sum())
    out = np.zeros(n_lags)
    if denom <= 0:
        return out
    for lag in range(1, n_lags + 1):
        if lag >= e.shape[0]:
            break
        out[lag - 1] = float(np.dot(e[:-lag], e[lag:]) / denom)
    return out


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
    return list(zip(idx[0::2], idx[1::2]))


def _burst_stats(env: np.ndarray, block_s: float, mad_k: float, duration_s: float) -> np.ndarray:
    med = float(np.median(env))
    mad = float(np.median(np.abs(env - med)))
    thr = med + mad_k * mad
    above = env > thr
    bursts = _runs(above)
    duty = float(above.mean()) if above.size else 0.0
    mad_over_med = mad / (med + _TINY) if med > 0 else 0.0
    if not bursts:
        return np.array([0.0, duty, 0, 0, 0, 0, 0, 0, 0, 0, mad_over_med, 0])
    durs = np.array([(b - a) * block_s for a, b in bursts])
    gaps_list = [(bursts[i + 1][0] - bursts[i][1]) * block_s for i in range(len(bursts) - 1)]
    gaps = np.array(gaps_list) if gaps_list else np.zeros(1)
    peaks = np.array([env[a:b].max() for a, b in bursts])
    areas = np.array([(env[a:b] - thr).sum() * block_s for a, b in bursts])
    denom = med + _TINY
    return np.array([
        len(bursts) / duration_s,
        duty,
        float(durs.mean()), float(durs.std()), float(durs.max()),
        float(gaps.mean()), float(gaps.std()), float(gaps.max()),
        float((peaks / denom).mean()), float((peaks / denom).max()),
        mad_over_med,
        float((areas / (denom * duration_s)).mean()),
    ])


def _xcorr(env_a: np.ndarray, env_b: np.ndarray, n_lags: int) -> np.ndarray:
    a = env_a - env_a.mean()
    b = env_b - env_b.mean()
    denom = math.sqrt(float((a ** 2).sum()) * float((b ** 2).sum()))
    out = np.zeros(2 * n_lags + 1)
    if denom <= 0:
        return out
    for i, lag in enumerate(range(-n_lags, n_lags + 1)):
        if lag >= a.shape[0] or -lag >= a.shape[0]:
            continue
        if lag >= 0:
            out[i] = float(np.dot(a[: a.shape[0] - lag], b[lag:]) / denom)
        else:
            out[i] = float(np.dot(a[-lag:], b[: b.shape[0] + lag]) / denom)
    return out


def _phase_circular(Xa: np.ndarray, Xb: np.ndarray, n_bands: int) -> np.ndarray:
    """Circular mean/variance of the cross-spectral phase in equal sub-bands.

    ``Xa``/``Xb`` are raw (unshifted) segment FFTs; the averaged cross
    spectrum is DC-centered before band grouping.
    """
    C = np.fft.fftshift((Xa * np.conj(Xb)).mean(axis=0))
    edges = np.linspace(0, C.shape[0], n_bands + 1).astype(int)
    out = np.zeros(2 * n_bands)
    for b in range(n_bands):
        cb = C[edges[b]:edges[b + 1]]
        z = complex(cb.sum())
        denom = float(np.abs(cb).sum())
        if denom <= _TINY:
            out[2 * b] = 0.0
            out[2 * b + 1] = 1.0
        else:
            out[2 * b] = math.atan2(z.imag, z.real)
            out[2 * b + 1] = 1.0 - abs(z) / denom
    return out


@dataclass
class FeatureVector:
    """One window's 320 features plus provenance for drift compensation."""

    values: np.ndarray
    layout: dict[str, tuple[int, int]]
    record_id: str = ""
    window_index: int = -1
    temperature_c: float = float("nan")
    cycle_index: int = -1
    skill: str = ""
    state: str = ""
    config_hash: str = ""

    def group(self, name: str) -> np.ndarray:
        a, b = self.layout[name]
        return self.values[a:b]


def extract_v10(win_cpu: np.ndarray, win_ram: np.ndarray, config: FeatureConfig,
                provenance: dict | None = None) -> FeatureVector:
    """Map a pair of equal-length complex slices to the fixed 320-d vector.

    Raises ``FeatureError`` on slice length mismatch, slices shorter than a
    PSD segment, or non-finite output (reported with group and index).
    """
    if win_cpu.shape[0] != win_ram.shape[0]:
        raise FeatureError(f"slice length mismatch: {win_cpu.shape[0]} vs {win_ram.shape[0]}")
    layout = config.layout()
    vec = np.zeros(config.n_features())
    duration_s = win_cpu.shape[0] / config.sample_rate

    freqs, p_cpu, X_cpu = _welch_linear(win_cpu, config)
    _, p_ram, X_ram = _welch_linear(win_ram, config)

    block = max(int(round(config.envelope_block_s * config.sample_rate)), 1)
    env_cpu = _block_envelope(win_cpu, block)
    env_ram = _block_envelope(win_ram, block)

    for rx, p, env in (("cpu", p_cpu, env_cpu), ("ram", p_ram, env_ram)):
        a, b = layout[f"{rx}_band_energy"]
        vec[a:b] = _band_energies_db(p, config.n_bands, config.floor_db)
        a, b = layout[f"{rx}_spectral_shape"]
        vec[a:b] = _spectral_shape(freqs, p)
        a, b = layout[f"{rx}_temporal"]
        vec[a:b] = np.concatenate([
            _env_stats(env),
            _autocorr(env, config.ac_lags),
            _burst_stats(env, config.envelope_block_s, config.burst_mad_k, duration_s),
        ])

    a, b = layout["xr_band_diff"]
    cpu_e = vec[layout["cpu_band_energy"][0]:layout["cpu_band_energy"][1]]
    ram_e = vec[layout["ram_band_energy"][0]:layout["ram_band_energy"][1]]
    vec[a:b] = cpu_e - ram_e
    a, b = layout["xr_env_xcorr"]
    vec[a:b] = _xcorr(env_cpu, env_ram, config.xcorr_lags)
    a, b = layout["xr_zero_lag"]
    sa, sb = env_cpu.std(), env_ram.std()
    if sa > 0 and sb > 0:
        vec[a] = float(np.corrcoef(env_cpu, env_ram)[0, 1])
    else:
        vec[a] = 0.0
    a, b = layout["xr_phase"]
    vec[a:b] = _phase_circular(X_cpu, X_ram, config.phase_bands)

    bad = np.flatnonzero(~np.isfinite(vec))
    if bad.size:
        i = int(bad[0])
        group = next(g for g, (ga, gb) in layout.items() if ga <= i < gb)
        raise FeatureError(f"non-finite feature at index {i} (group {group!r})")

    prov = provenance or {}
    return FeatureVector(values=vec.astype(np.float32), layout=layout,
                         config_hash=config.config_hash(), **prov)
