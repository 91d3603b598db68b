"""Preset skill profiles, payloads, and receiver channel builders.

Presets model the workload mixes that separate well in band-energy and
burst-timing features: compute-bound, memory-bound, storage-flush,
network-blocking, and idle.  They are starting points for experiment
configs; custom component lists can be given explicitly instead.
"""

from __future__ import annotations

from .synth import BurstModel, ChannelModel, ComponentActivity, SkillProfile


def _full(duration_s: float, alpha: float) -> list[tuple[float, float, float]]:
    return [(0.0, duration_s, alpha)]


def cpu_heavy(name: str = "cpu_heavy", duration_s: float = 8.0) -> SkillProfile:
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[
            ComponentActivity("cpu", _full(duration_s, 0.9),
                              {"cpu_band": 1.0, "ram_band": 0.15}),
            ComponentActivity("dram", _full(duration_s, 0.25),
                              {"cpu_band": 0.1, "ram_band": 1.0}),
        ],
        burst=BurstModel(rate_hz=8.0, duty=0.55, gain=1.8),
    )


def ram_heavy(name: str = "ram_heavy", duration_s: float = 8.0) -> SkillProfile:
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[
            ComponentActivity("cpu", _full(duration_s, 0.3),
                              {"cpu_band": 1.0, "ram_band": 0.15}),
            ComponentActivity("dram", _full(duration_s, 0.85),
                              {"cpu_band": 0.1, "ram_band": 1.0}),
        ],
        burst=BurstModel(rate_hz=3.0, duty=0.65, gain=1.5),
    )


def storage_flush(name: str = "storage_flush", duration_s: float = 8.0) -> SkillProfile:
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[
            ComponentActivity("cpu", _full(duration_s, 0.2),
                              {"cpu_band": 1.0, "ram_band": 0.15}),
            ComponentActivity("storage", _full(duration_s, 0.8),
                              {"cpu_band": 0.5, "ram_band": 0.6}),
        ],
        burst=BurstModel(rate_hz=1.5, duty=0.3, gain=2.2),
    )


def network_wait(name: str = "network_wait", duration_s: float = 8.0) -> SkillProfile:
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[
            ComponentActivity("cpu", _full(duration_s, 0.15),
                              {"cpu_band": 1.0, "ram_band": 0.15}),
            ComponentActivity("network", _full(duration_s, 0.6),
                              {"cpu_band": 0.4, "ram_band": 0.3}),
        ],
        burst=BurstModel(rate_hz=0.8, duty=0.45, gain=1.6),
    )


def idle(name: str = "idle", duration_s: float = 8.0) -> SkillProfile:
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[ComponentActivity("idle", _full(duration_s, 0.0), {})],
    )


def _graded_mix(name: str, duration_s: float, cpu_alpha: float, dram_alpha: float,
                burst_rate: float, wander: float = 0.35) -> SkillProfile:
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[
            ComponentActivity("cpu", _full(duration_s, cpu_alpha),
                              {"cpu_band": 1.0, "ram_band": 0.15}, wander_sigma=wander),
            ComponentActivity("dram", _full(duration_s, dram_alpha),
                              {"cpu_band": 0.1, "ram_band": 1.0}, wander_sigma=wander),
        ],
        burst=BurstModel(rate_hz=burst_rate, duty=0.5, gain=1.6),
    )


def mix_compute(name: str = "mix_compute", duration_s: float = 8.0) -> SkillProfile:
    """Compute-leaning mix; confusable with its siblings by design.

    The three mixes share one burst model so class identity rides on the
    component levels alone, the regime where cycle drift genuinely competes
    with class information.
    """
    return _graded_mix(name, duration_s, 0.85, 0.35, 5.0)


def mix_balanced(name: str = "mix_balanced", duration_s: float = 8.0) -> SkillProfile:
    return _graded_mix(name, duration_s, 0.60, 0.60, 5.0)


def mix_memory(name: str = "mix_memory", duration_s: float = 8.0) -> SkillProfile:
    return _graded_mix(name, duration_s, 0.35, 0.85, 5.0)


def payload_shell_burst(name: str = "payload_shell_burst", duration_s: float = 2.0) -> SkillProfile:
    """Short exfiltration-style payload: tight cpu+network bursts."""
    return SkillProfile(
        name=name,
        duration_s=duration_s,
        components=[
            ComponentActivity("cpu", _full(duration_s, 0.95),
                              {"cpu_band": 1.0, "ram_band": 0.15},
                              band_center_frac=-0.05, band_width_frac=0.05),
            ComponentActivity("network", _full(duration_s, 0.8),
                              {"cpu_band": 0.4, "ram_band": 0.5},
                              band_center_frac=-0.3, band_width_frac=0.08),
        ],
        burst=BurstModel(rate_hz=20.0, duty=0.5, gain=1.7),
    )


def calibration_conditions(duration_s: float = 2.0) -> dict[str, SkillProfile]:
    """Survey calibration workloads with neutral receiver affinity.

    Carrier-dependent coupling belongs entirely to the host emission model
    during a sweep, so these profiles express pure component activity: a
    compute-bound load, a memory-bound load with a small residual cpu
    share, and idle.
    """
    neutral = {"cpu_band": 1.0, "ram_band": 1.0}
    return {
        "idle": idle(name="cal_idle", duration_s=duration_s),
        "cpu": SkillProfile(
            name="cal_cpu", duration_s=duration_s,
            components=[ComponentActivity("cpu", _full(duration_s, 0.95), dict(neutral))]),
        "ram": SkillProfile(
            name="cal_ram", duration_s=duration_s,
            components=[
                ComponentActivity("dram", _full(duration_s, 0.95), dict(neutral)),
                ComponentActivity("cpu", _full(duration_s, 0.15), dict(neutral)),
            ]),
    }


PRESETS = {
    "cpu_heavy": cpu_heavy,
    "ram_heavy": ram_heavy,
    "storage_flush": storage_flush,
    "network_wait": network_wait,
    "idle": idle,
    "mix_compute": mix_compute,
    "mix_balanced": mix_balanced,
    "mix_memory": mix_memory,
    "payload_shell_burst": payload_shell_burst,
}


def make_profile(preset: str, name: str | None = None, duration_s: float = 8.0) -> SkillProfile:
    if preset not in PRESETS:
        raise KeyError(f"unknown profile preset {preset!r}; have {sorted(PRESETS)}")
    return PRESETS[preset](name=name or preset, duration_s=duration_s)


def default_channels(cpu_carrier_mhz: float = 80.0, ram_carrier_mhz: float = 800.0,
                     noise_floor: float = 1.0, scale: float = 9.0,
                     ) -> tuple[ChannelModel, ChannelModel]:
    """Classification-rig channel pair with paper-style carrier roles."""
    cpu_chan = ChannelModel(
        receiver_id="cpu_band",
        carrier_mhz=cpu_carrier_mhz,
        gain_per_component={"cpu": scale, "dram": 0.2 * scale, "storage": 0.5 * scale,
                            "network": 0.4 * scale},
        noise_floor=noise_floor,
    )
    ram_chan = ChannelModel(
        receiver_id="ram_band",
        carrier_mhz=ram_carrier_mhz,
        gain_per_component={"cpu": 0.2 * scale, "dram": scale, "storage": 0.6 * scale,
                            "network": 0.3 * scale},
        noise_floor=noise_floor,
    )
    return cpu_chan, ram_chan
