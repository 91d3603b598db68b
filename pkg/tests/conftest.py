import numpy as np
import pytest

from emaudit import profiles, synth


@pytest.fixture(scope="session")
def channels():
    return profiles.default_channels(noise_floor=1.0, scale=9.0)


@pytest.fixture(scope="session")
def quiet_channels():
    return (
        synth.ChannelModel("cpu_band", 80.0, {"cpu": 9.0, "dram": 2.0}, noise_floor=0.0),
        synth.ChannelModel("ram_band", 800.0, {"cpu": 2.0, "dram": 9.0}, noise_floor=0.0),
    )


@pytest.fixture(scope="session")
def ctx0():
    return synth.CycleContext(cycle_index=0)


@pytest.fixture(scope="session")
def short_record(channels, ctx0):
    prof = profiles.cpu_heavy(duration_s=2.0)
    return synth.render_record(prof, channels, ctx0, seed=42, sample_rate=200_000)


@pytest.fixture(scope="session")
def attack_record(channels, ctx0):
    prof = profiles.ram_heavy(duration_s=4.0)
    payload = profiles.payload_shell_burst(duration_s=1.0)
    overlay = synth.AttackOverlay(profile=payload, start_s=1.5, duration_s=1.0)
    return synth.render_record(prof, channels, ctx0, seed=7, sample_rate=200_000,
                               attack_overlay=overlay)
