"""Deterministic synthetic dual-receiver emanation generator.

Each hardware component (cpu, dram, storage, network) contributes a
carrier-local band-limited complex noise process whose amplitude follows the
component's switching-activity curve, modulated by the skill's burst
envelope.  A receiver stream is the gain-weighted sum of component
emissions, shaped by cycle-level nuisance terms (gain offset, DC offset,
carrier frequency offset, slow thermal gain drift), passed through a
front-end anti-alias lowpass, plus AWGN, quantized to signed 8-bit with
saturation.

Rendering is chunked so memory stays bounded for long records, and every
random stream is drawn from a fixed per-(receiver, component) seed tree
whose consumption does not depend on activity levels, which makes output a
pure function of the inputs and mean amplitude monotone in activity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .corpus import Event, IQRecord, RECEIVER_IDS

COMPONENT_IDS = ("cpu", "dram", "storage", "network", "idle")

# Default emission band per component as (center, width) fractions of the
# sample rate: cpu narrow, dram mid, network narrow-offset, storage wideband
# impulsive, idle silent.
COMPONENT_BANDS: dict[str, tuple[float, float]] = {
    "cpu": (0.10, 0.04),
    "dram": (-0.15, 0.12),
    "storage": (0.0, 0.35),
    "network": (0.30, 0.06),
    "idle": (0.0, 0.0),
}

_STORAGE_PULSE_RATE_HZ = 25.0
_STORAGE_PULSE_MEAN_S = 3e-3
_ANTIALIAS_CUTOFF = 0.90  # of Nyquist
_TEMP_RATE_HZ = 5.0
_CHUNK = 1 << 20


class DegenerateConfigError(Exception):
    """Raised when a configuration cannot produce a usable record."""


@dataclass
class ComponentActivity:
    """Activity plan of one hardware component inside a skill.

    ``activity`` is a piecewise-constant switching-activity curve given as
    ``(start_s, end_s, alpha)`` segments with alpha in [0, 1]; gaps between
    segments read as zero activity.  ``carrier_affinity`` weights how
    strongly this component's emission couples into each receiver band.
    ``wander_sigma`` adds slow lognormal modulation around the planned
    activity (instruction-mix variability at the seconds scale); the
    modulation is drawn once per record and is identical on both receivers.
    """

    component_id: str
    activity: list[tuple[float, float, float]]
    carrier_affinity: dict[str, float] = field(default_factory=lambda: {r: 1.0 for r in RECEIVER_IDS})
    band_center_frac: float | None = None
    band_width_frac: float | None = None
    wander_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.component_id not in COMPONENT_IDS:
            raise ValueError(f"unknown component {self.component_id!r}")
        if not self.activity:
            raise ValueError("activity needs at least one segment")
        for a, b, alpha in self.activity:
            if not (0.0 <= alpha <= 1.0):
                raise ValueError(f"switching activity {alpha} outside [0, 1]")
            if b <= a:
                raise ValueError(f"empty activity segment ({a}, {b})")
        for r, w in self.carrier_affinity.items():
            if w < 0:
                raise ValueError(f"carrier affinity for {r!r} must be >= 0")
        center, width = COMPONENT_BANDS[self.component_id]
        if self.band_center_frac is None:
            self.band_center_frac = center
        if self.band_width_frac is None:
            self.band_width_frac = width

    def alpha_at(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros(t.shape, dtype=np.float32)
        for a, b, alpha in self.activity:
            out[(t >= a) & (t < b)] = alpha
        return out

    def max_alpha(self) -> float:
        return max(alpha for _, _, alpha in self.activity)


@dataclass
class BurstModel:
    """Square-wave amplitude bursting: ``gain`` while on, 1 while off."""

    rate_hz: float = 0.0
    duty: float = 0.0
    gain: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.duty <= 1.0):
            raise ValueError(f"burst duty {self.duty} outside [0, 1]")
        if self.rate_hz < 0 or self.gain < 0:
            raise ValueError("burst rate and gain must be >= 0")

    def envelope(self, t: np.ndarray) -> np.ndarray:
        if self.rate_hz <= 0 or self.duty <= 0 or self.gain == 1.0:
            return np.ones(t.shape, dtype=np.float32)
        phase = (t * self.rate_hz) % 1.0
        return np.where(phase < self.duty, np.float32(self.gain), np.float32(1.0))


@dataclass
class SkillProfile:
    """Generative description of one skill's component activity mix."""

    name: str
    duration_s: float
    components: list[ComponentActivity]
    burst: BurstModel = field(default_factory=BurstModel)

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError(f"skill {self.name!r} has non-positive duration")
        if not self.components:
            raise ValueError(f"skill {self.name!r} has no components")

    def is_idle(self) -> bool:
        """True when nothing emits: only idle components or all-zero activity."""
        return all(c.component_id == "idle" or c.max_alpha() == 0.0 for c in self.components)


@dataclass
class ChannelModel:
    """One receiver: carrier, per-component response, noise, governor artifact.

    ``noise_floor`` is the AWGN standard deviation per I/Q axis on the signed
    8-bit sample scale.  ``clock_spur_gain`` adds an always-on narrowband
    clock harmonic at band center; with ``governor_fm_enabled`` that spur is
    frequency-modulated by host activity (sinusoidal dither scaled by the
    aggregate switching factor), the measurement artifact that makes a band
    look workload-sensitive without a stable power signature.  Pinning the
    governor corresponds to ``governor_fm_enabled=False``: the spur stays put
    and its band power no longer depends on the workload.
    """

    receiver_id: str
    carrier_mhz: float
    gain_per_component: dict[str, float]
    noise_floor: float = 1.0
    clock_spur_gain: float = 0.0
    governor_fm_enabled: bool = False
    governor_fm_depth_hz: float = 0.0
    governor_fm_rate_hz: float = 4.0

    def __post_init__(self) -> None:
        if self.receiver_id not in RECEIVER_IDS:
            raise ValueError(f"receiver_id must be one of {RECEIVER_IDS}")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be >= 0")
        if self.carrier_mhz <= 0:
            raise ValueError("carrier_mhz must be > 0")


@dataclass
class CycleContext:
    """Per-cycle nuisance state: gain/DC/frequency offsets and thermal drift.

    Temperature follows an AR(1) deviation process around ``temp_initial_c``
    (coefficient magnitude < 1) and couples back into the signal as a slow
    multiplicative gain drift of ``thermal_gain_per_c`` per degree relative
    to ``temp_reference_c``.  ``activity_scale`` models cycle-state changes
    in component efficiency: per-component multipliers applied to the
    switching activity (result clipped to [0, 1]), the nuisance that makes
    cycle state compete with class information downstream.
    """

    cycle_index: int
    gain_offset_db: float = 0.0
    dc_offset: complex = 0j
    freq_offset_hz: float = 0.0
    temp_initial_c: float = 40.0
    temp_ar_coeff: float = 0.98
    temp_ar_step_c: float = 0.01
    temp_ar_sigma_c: float = 0.01
    temp_reference_c: float = 40.0
    thermal_gain_per_c: float = 0.0
    activity_scale: dict[str, float] = field(default_factory=dict)
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.gain_offset_db):
            raise ValueError("gain offset must be finite")
        if not abs(self.temp_ar_coeff) < 1:
            raise ValueError("AR(1) coefficient magnitude must be < 1")
        for comp, s in self.activity_scale.items():
            if s < 0:
                raise ValueError(f"activity scale for {comp!r} must be >= 0")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be >= 0")


@dataclass
class AttackOverlay:
    """A payload profile spliced into a host record at ``start_s``."""

    profile: SkillProfile
    start_s: float
    duration_s: float
    lead_s: float = 0.0
    tail_s: float = 0.0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("overlay duration must be > 0")
        if self.duration_s > self.profile.duration_s + 1e-9:
            raise ValueError("overlay duration exceeds payload profile duration")


@lru_cache(maxsize=64)
def _lowpass_sos(cutoff_frac: float, order: int = 4) -> np.ndarray:
    # cutoff_frac is relative to Nyquist; scipy wants (0, 1)
    cutoff = min(max(cutoff_frac, 1e-4), 0.999)
    return sps.butter(order, cutoff, btype="low", output="sos").astype(np.float32)


@lru_cache(maxsize=32)
def _rotator_table(center_frac: float, length: int) -> np.ndarray:
    """exp(2j*pi*center_frac*k) for k = 0..length-1, complex64."""
    k = np.arange(length, dtype=np.float64)
    return np.exp(2j * np.pi * center_frac * k).astype(np.complex64)


def _apply_rotator(wave: np.ndarray, center_frac: float, n0: int) -> np.ndarray:
    """Multiply by exp(2j*pi*center_frac*(n0+k)) using the cached table."""
    n = wave.shape[0]
    table = _rotator_table(center_frac, _CHUNK)[:n]
    phi0 = 2 * np.pi * ((center_frac * n0) % 1.0)
    rot0 = np.complex64(complex(math.cos(phi0), math.sin(phi0)))
    return wave * (rot0 * table)


class _NoiseBand:
    """Chunked band-limited complex noise with unit-ish RMS, fixed RNG usage."""

    def __init__(self, seed_seq: np.random.SeedSequence, width_frac: float, center_frac: float,
                 sample_rate: float, gate: "_PulseGate | None" = None):
        self.rng = np.random.Generator(np.random.SFC64(seed_seq))
        self.width_frac = width_frac
        self.center_frac = center_frac
        self.sample_rate = sample_rate
        self.gate = gate
        if width_frac > 0:
            self.sos = _lowpass_sos(width_frac)  # cutoff width/2 of fs = width of Nyquist
            n_sec = self.sos.shape[0]
            self.zi = np.zeros((2, n_sec, 2), dtype=np.float32)
            # ideal-filter power approximation keeps components comparable
            self.scale = 1.0 / math.sqrt(max(width_frac, 1e-4))
        else:
            self.sos = None
            self.zi = None
            self.scale = 0.0

    def chunk(self, n0: int, n1: int) -> np.ndarray:
        n = n1 - n0
        raw = self.rng.standard_normal((2, n), dtype=np.float32)
        if self.sos is None:
            return np.zeros(n, dtype=np.complex64)
        re, self.zi[0] = sps.sosfilt(self.sos, raw[0], zi=self.zi[0])
        im, self.zi[1] = sps.sosfilt(self.sos, raw[1], zi=self.zi[1])
        s = np.float32(self.scale / math.sqrt(2.0))
        wave = np.empty(n, dtype=np.complex64)
        wave.real = re * s
        wave.imag = im * s
        if self.center_frac != 0.0:
            wave = _apply_rotator(wave, self.center_frac, n0)
        if self.gate is not None:
            wave *= self.gate.chunk(n0, n1, self.sample_rate)
        return wave


class _PulseGate:
    """Poisson pulse-train gate for impulsive (storage-like) emissions."""

    def __init__(self, seed_seq: np.random.SeedSequence, duration_s: float):
        rng = np.random.Generator(np.random.PCG64(seed_seq))
        n_pulses = rng.poisson(_STORAGE_PULSE_RATE_HZ * duration_s)
        starts = np.sort(rng.uniform(0.0, duration_s, size=n_pulses))
        lengths = rng.exponential(_STORAGE_PULSE_MEAN_S, size=n_pulses)
        self.intervals = np.stack([starts, starts + lengths], axis=1) if n_pulses else np.zeros((0, 2))

    def chunk(self, n0: int, n1: int, fs: float) -> np.ndarray:
        gate = np.zeros(n1 - n0, dtype=np.float32)
        t_lo, t_hi = n0 / fs, n1 / fs
        for a, b in self.intervals:
            if b <= t_lo or a >= t_hi:
                continue
            i0 = max(int(math.ceil(a * fs)) - n0, 0)
            i1 = min(int(math.ceil(b * fs)) - n0, n1 - n0)
            gate[i0:i1] = 1.0
        return gate


def _temperature_trace(ctx: CycleContext, duration_s: float, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(7001,))))
    n = int(round(duration_s * _TEMP_RATE_HZ)) + 1
    dev = np.empty(n)
    dev[0] = 0.0
    steps = rng.normal(ctx.temp_ar_step_c, ctx.temp_ar_sigma_c, size=n - 1)
    for k in range(1, n):
        dev[k] = ctx.temp_ar_coeff * dev[k - 1] + steps[k - 1]
    t = np.arange(n) / _TEMP_RATE_HZ
    return np.stack([t, ctx.temp_initial_c + dev], axis=1)


_WANDER_RATE_HZ = 20.0
_WANDER_AR = 0.9


def _wander_curve(seed_seq: np.random.SeedSequence, duration_s: float, sigma: float,
                  ) -> tuple[np.ndarray, np.ndarray] | None:
    """Slow lognormal activity modulation with unit mean, or None when off."""
    if sigma <= 0:
        return None
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    n = int(round(duration_s * _WANDER_RATE_HZ)) + 2
    g = np.empty(n)
    steps = rng.normal(0.0, sigma * math.sqrt(1 - _WANDER_AR ** 2), size=n)
    g[0] = rng.normal(0.0, sigma)
    for k in range(1, n):
        g[k] = _WANDER_AR * g[k - 1] + steps[k]
    t = np.arange(n) / _WANDER_RATE_HZ
    return t, np.exp(g - sigma ** 2 / 2.0)


@dataclass
class _EmissionSource:
    component: ComponentActivity
    noise: _NoiseBand
    t_offset_s: float          # where this source's activity clock starts
    window: tuple[float, float] | None  # absolute emit window, None = whole record
    burst: BurstModel
    weight: float
    wander: tuple[np.ndarray, np.ndarray] | None = None


def _render_receiver(sources: list[_EmissionSource], chan: ChannelModel, ctx: CycleContext,
                     n_total: int, fs: float, temp: np.ndarray, noise_seed: np.random.SeedSequence,
                     spur_seed: np.random.SeedSequence) -> tuple[np.ndarray, int]:
    """Render one receiver stream; returns int8 (n, 2) pairs and saturation count."""
    out = np.empty((n_total, 2), dtype=np.int8)
    noise_rng = np.random.Generator(np.random.SFC64(noise_seed))
    sos_aa = _lowpass_sos(_ANTIALIAS_CUTOFF, order=5)
    zi_aa = np.zeros((2, sos_aa.shape[0], 2), dtype=np.float32)
    base_gain = 10.0 ** (ctx.gain_offset_db / 20.0)
    spur = None
    if chan.clock_spur_gain > 0.0:
        spur = _NoiseBand(spur_seed, 0.002, 0.0, fs)
    spur_phase = 0.0
    n_sat = 0
    for n0 in range(0, n_total, _CHUNK):
        n1 = min(n0 + _CHUNK, n_total)
        t = np.arange(n0, n1, dtype=np.float64) / fs
        total = np.zeros(n1 - n0, dtype=np.complex64)
        agg_alpha = np.zeros(n1 - n0, dtype=np.float32)
        burst_cache: dict[int, np.ndarray] = {}
        for src in sources:
            alpha = src.component.alpha_at(t - src.t_offset_s)
            scale = ctx.activity_scale.get(src.component.component_id)
            if scale is not None and scale != 1.0:
                np.clip(alpha * np.float32(scale), 0.0, 1.0, out=alpha)
            if src.window is not None:
                a, b = src.window
                alpha[(t < a) | (t >= b)] = 0.0
            # aggregate host activity drives the governor even for components
            # that do not couple into this band
            np.maximum(agg_alpha, alpha, out=agg_alpha)
            if src.weight == 0.0:
                continue
            wave = src.noise.chunk(n0, n1)
            key = id(src.burst)
            if key not in burst_cache:
                burst_cache[key] = src.burst.envelope(t).astype(np.float32, copy=False)
            amp = alpha
            amp *= burst_cache[key]
            if src.wander is not None:
                wt, wv = src.wander
                amp *= np.interp(t - src.t_offset_s, wt, wv).astype(np.float32)
            amp *= np.float32(src.weight)
            wave *= amp
            total += wave
        if spur is not None:
            wave = spur.chunk(n0, n1)
            if chan.governor_fm_enabled:
                inst_f = chan.governor_fm_depth_hz * agg_alpha.astype(np.float64) * (
                    0.5 + 0.5 * np.sin(2 * np.pi * chan.governor_fm_rate_hz * t))
                phase = spur_phase + 2 * np.pi * np.cumsum(inst_f) / fs
                if phase.size:
                    spur_phase = phase[-1]
                wave = wave * np.exp(1j * phase).astype(np.complex64)
            total += np.float32(chan.clock_spur_gain) * wave
        if ctx.freq_offset_hz != 0.0:
            total = _apply_rotator(total, ctx.freq_offset_hz / fs, n0)
        if ctx.thermal_gain_per_c != 0.0 and temp.shape[0] > 1:
            t_c = np.interp(t, temp[:, 0], temp[:, 1])
            total *= (1.0 + ctx.thermal_gain_per_c * (t_c - ctx.temp_reference_c)).astype(np.float32)
        if base_gain != 1.0:
            total *= np.float32(base_gain)
        re, zi_aa[0] = sps.sosfilt(sos_aa, total.real, zi=zi_aa[0])
        im, zi_aa[1] = sps.sosfilt(sos_aa, total.imag, zi=zi_aa[1])
        re = re + np.float32(ctx.dc_offset.real)
        im = im + np.float32(ctx.dc_offset.imag)
        noise = noise_rng.standard_normal((2, re.shape[0]), dtype=np.float32)
        floor = chan.noise_floor * ctx.noise_scale
        if floor > 0:
            re = re + np.float32(floor) * noise[0]
            im = im + np.float32(floor) * noise[1]
        qi = np.clip(np.rint(re), -128, 127)
        qq = np.clip(np.rint(im), -128, 127)
        n_sat += int(np.count_nonzero((qi >= 127) | (qi <= -128) | (qq >= 127) | (qq <= -128)))
        out[n0:n1, 0] = qi.astype(np.int8)
        out[n0:n1, 1] = qq.astype(np.int8)
    return out, n_sat  # n_sat counts samples with either axis at full scale


def render_record(profile: SkillProfile, channels: tuple[ChannelModel, ChannelModel],
                  ctx: CycleContext, seed: int, attack_overlay: AttackOverlay | None = None,
                  sample_rate: float = 1_000_000.0, record_id: str | None = None,
                  t0_s: float = 0.0) -> IQRecord:
    """Render one dual-receiver record; identical inputs give identical bytes.

    The emitted event sidecar always contains ``work_start``/``work_end``;
    with an overlay it additionally carries the four attack anchors and the
    record is labeled ``attack``.  A configuration that saturates more than
    half of either stream raises ``DegenerateConfigError``.
    """
    if profile.duration_s <= 0:
        raise ValueError("zero-duration profile")
    if len({c.receiver_id for c in channels}) != len(channels):
        raise ValueError("channels must have distinct receiver ids")
    duration = profile.duration_s
    if attack_overlay is not None:
        end = attack_overlay.start_s + attack_overlay.duration_s + attack_overlay.tail_s
        if end > duration + 1e-9:
            raise ValueError(
                f"attack overlay ends at {end:.3f}s, past record end {duration:.3f}s")
        if attack_overlay.start_s - attack_overlay.lead_s < -1e-9:
            raise ValueError("attack overlay begins before record start")
    n_total = int(round(duration * sample_rate))
    temp = _temperature_trace(ctx, duration, seed)

    wander_curves = {}
    for c_idx, comp in enumerate(profile.components):
        wander_curves[c_idx] = _wander_curve(
            np.random.SeedSequence(entropy=seed, spawn_key=(777, c_idx)), duration,
            comp.wander_sigma)
    if attack_overlay is not None:
        for c_idx, comp in enumerate(attack_overlay.profile.components):
            wander_curves[100 + c_idx] = _wander_curve(
                np.random.SeedSequence(entropy=seed, spawn_key=(777, 100 + c_idx)),
                attack_overlay.duration_s, comp.wander_sigma)

    streams: dict[str, np.ndarray] = {}
    carriers: dict[str, float] = {}
    for r_idx, chan in enumerate(channels):
        sources = []
        for c_idx, comp in enumerate(profile.components):
            weight = (chan.gain_per_component.get(comp.component_id, 0.0)
                      * comp.carrier_affinity.get(chan.receiver_id, 0.0))
            gate = None
            if comp.component_id == "storage":
                gate = _PulseGate(np.random.SeedSequence(entropy=seed, spawn_key=(r_idx, c_idx, 3)),
                                  duration)
            noise = _NoiseBand(np.random.SeedSequence(entropy=seed, spawn_key=(r_idx, c_idx)),
                               comp.band_width_frac, comp.band_center_frac, sample_rate, gate)
            sources.append(_EmissionSource(comp, noise, 0.0, None, profile.burst, weight,
                                           wander=wander_curves[c_idx]))
        if attack_overlay is not None:
            win = (attack_overlay.start_s, attack_overlay.start_s + attack_overlay.duration_s)
            for c_idx, comp in enumerate(attack_overlay.profile.components):
                weight = (chan.gain_per_component.get(comp.component_id, 0.0)
                          * comp.carrier_affinity.get(chan.receiver_id, 0.0))
                gate = None
                if comp.component_id == "storage":
                    gate = _PulseGate(
                        np.random.SeedSequence(entropy=seed, spawn_key=(r_idx, 100 + c_idx, 3)),
                        duration)
                noise = _NoiseBand(np.random.SeedSequence(entropy=seed, spawn_key=(r_idx, 100 + c_idx)),
                                   comp.band_width_frac, comp.band_center_frac, sample_rate, gate)
                sources.append(_EmissionSource(comp, noise, attack_overlay.start_s, win,
                                               attack_overlay.profile.burst, weight,
                                               wander=wander_curves[100 + c_idx]))
        stream, n_sat = _render_receiver(
            sources, chan, ctx, n_total, sample_rate, temp,
            np.random.SeedSequence(entropy=seed, spawn_key=(r_idx, 9000)),
            np.random.SeedSequence(entropy=seed, spawn_key=(r_idx, 8000)))
        if n_total > 0 and n_sat / n_total > 0.5:
            raise DegenerateConfigError(
                f"degenerate configuration: {n_sat / n_total:.0%} of {chan.receiver_id} "
                f"samples at full scale")
        streams[chan.receiver_id] = stream
        carriers[chan.receiver_id] = chan.carrier_mhz

    events = [Event(0.0, "work_start")]
    label = "background" if profile.is_idle() else "normal"
    if attack_overlay is not None:
        begin = max(attack_overlay.start_s - attack_overlay.lead_s, 0.0)
        end = min(attack_overlay.start_s + attack_overlay.duration_s + attack_overlay.tail_s, duration)
        events += [
            Event(begin, "attack_begin"),
            Event(attack_overlay.start_s, "payload_start"),
            Event(attack_overlay.start_s + attack_overlay.duration_s, "payload_end"),
            Event(end, "attack_end"),
        ]
        label = "attack"
    events.append(Event(duration, "work_end"))
    events.sort(key=lambda e: e.t_s)

    if record_id is None:
        record_id = f"c{ctx.cycle_index:02d}_{profile.name}_s{seed}"
    return IQRecord(
        record_id=record_id,
        skill_name=profile.name,
        cycle_index=ctx.cycle_index,
        sample_rate=sample_rate,
        duration_s=duration,
        samples=streams,
        carriers=carriers,
        events=events,
        temperature=temp,
        label=label,
        t0_s=t0_s,
    )


def render_workflow(sequence, catalog: dict[str, SkillProfile],
                    channels: tuple[ChannelModel, ChannelModel], ctx: CycleContext, seed: int,
                    attack_overlays: dict[int, AttackOverlay] | None = None,
                    sample_rate: float = 1_000_000.0) -> list[IQRecord]:
    """Render one record per skill of an ordered sequence, order preserved.

    Records share the cycle index and carry contiguous ``t0_s`` offsets.
    ``attack_overlays`` maps sequence positions to overlays applied to just
    that record.  Unknown skill names raise ``KeyError``.
    """
    names = list(getattr(sequence, "skills", sequence))
    for name in names:
        if name not in catalog:
            raise KeyError(f"unknown skill name {name!r}")
    overlays = attack_overlays or {}
    records = []
    t0 = 0.0
    for i, name in enumerate(names):
        rec_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(i,)).generate_state(1)[0])
        rec = render_record(
            catalog[name], channels, ctx, rec_seed,
            attack_overlay=overlays.get(i),
            sample_rate=sample_rate,
            record_id=f"c{ctx.cycle_index:02d}_w{i:03d}_{name}",
            t0_s=t0,
        )
        records.append(rec)
        t0 += rec.duration_s
    return records


# ---------------------------------------------------------------------------
# Carrier-domain host model for survey scenarios
# ---------------------------------------------------------------------------

@dataclass
class EmissionLine:
    """Gaussian coupling profile of one component across carrier frequency."""

    component_id: str
    center_mhz: float
    width_mhz: float
    gain: float


@dataclass
class HostEmissionModel:
    """Maps a candidate carrier to a ChannelModel via component emission lines.

    ``governor_line_mhz`` places an always-on clock harmonic; tuning near it
    picks up the spur, and with the governor unpinned the spur is
    activity-frequency-modulated.  The survey module uses pinned/unpinned
    sweep pairs to flag exactly that artifact.
    """

    lines: list[EmissionLine]
    noise_floor: float = 1.0
    governor_line_mhz: float | None = None
    governor_width_mhz: float = 60.0
    governor_spur_gain: float = 0.0
    governor_fm_depth_hz: float = 0.0
    governor_fm_rate_hz: float = 4.0

    def gain_at(self, component_id: str, carrier_mhz: float) -> float:
        g = 0.0
        for line in self.lines:
            if line.component_id != component_id:
                continue
            g += line.gain * math.exp(-0.5 * ((carrier_mhz - line.center_mhz) / line.width_mhz) ** 2)
        return g

    def channel(self, receiver_id: str, carrier_mhz: float, pinned: bool = True) -> ChannelModel:
        gains = {c: self.gain_at(c, carrier_mhz) for c in COMPONENT_IDS if c != "idle"}
        spur = 0.0
        if self.governor_line_mhz is not None:
            spur = self.governor_spur_gain * math.exp(
                -0.5 * ((carrier_mhz - self.governor_line_mhz) / self.governor_width_mhz) ** 2)
            if spur < 1e-6:
                spur = 0.0
        return ChannelModel(
            receiver_id=receiver_id,
            carrier_mhz=carrier_mhz,
            gain_per_component=gains,
            noise_floor=self.noise_floor,
            clock_spur_gain=spur,
            governor_fm_enabled=spur > 0.0 and not pinned,
            governor_fm_depth_hz=self.governor_fm_depth_hz,
            governor_fm_rate_hz=self.governor_fm_rate_hz,
        )
