"""Experiment configuration: schema, validation, hashing, corpus synthesis.

One JSON config drives the whole chain (simulate, survey, extract, train,
evaluate, verify, report).  The resolved config is hashed canonically and
the hash is embedded in every output artifact, so reruns are verifiable
byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import profiles
from .drift import DriftConfig
from .features import FeatureConfig
from .forest import ForestParams
from .synth import (AttackOverlay, BurstModel, ChannelModel, ComponentActivity, CycleContext,
                    EmissionLine, HostEmissionModel, SkillProfile)

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "seed", "corpus"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
        "corpus": {
            "type": "object",
            "required": ["skills", "cycles", "records_per_skill_per_cycle"],
            "additionalProperties": False,
            "properties": {
                "skills": {"type": "array", "minItems": 1, "items": {
                    "type": "object",
                    "required": ["preset"],
                    "additionalProperties": False,
                    "properties": {
                        "preset": {"type": "string"},
                        "name": {"type": "string"},
                        "duration_s": {"type": "number", "exclusiveMinimum": 0},
                    },
                }},
                "cycles": {"type": "integer", "minimum": 1},
                "records_per_skill_per_cycle": {"type": "integer", "minimum": 1},
                "sample_rate": {"type": "number", "exclusiveMinimum": 0},
                "channels": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "cpu_carrier_mhz": {"type": "number", "exclusiveMinimum": 0},
                        "ram_carrier_mhz": {"type": "number", "exclusiveMinimum": 0},
                        "noise_floor": {"type": "number", "minimum": 0},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "drift": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "gain_db_sigma": {"type": "number", "minimum": 0},
                        "dc_offset_sigma": {"type": "number", "minimum": 0},
                        "freq_offset_sigma_hz": {"type": "number", "minimum": 0},
                        "temp_initial_c": {"type": "number"},
                        "temp_cycle_sigma_c": {"type": "number", "minimum": 0},
                        "temp_warm_per_record_c": {"type": "number", "minimum": 0},
                        "thermal_gain_per_c": {"type": "number"},
                        "activity_jitter_sigma": {"type": "number", "minimum": 0},
                        "noise_scale_sigma": {"type": "number", "minimum": 0},
                    },
                },
                "attacks": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "victim_skills": {"type": "array", "items": {"type": "string"}},
                        "payload_preset": {"type": "string"},
                        "payload_duration_s": {"type": "number", "exclusiveMinimum": 0},
                        "records_per_cycle": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "windowing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_s": {"type": "number", "exclusiveMinimum": 0},
                "rho_s": {"type": "number", "exclusiveMinimum": 0},
                "envelope_mode": {"enum": ["event_anchor", "schedule"]},
            },
        },
        "features": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "psd_segment": {"type": ["integer", "null"], "minimum": 64},
                "psd_overlap": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "envelope_block_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "detrend_degree": {"type": "integer", "minimum": 0},
                "k_sel": {"type": "integer", "minimum": 1, "maximum": 320},
                "eps": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "forest": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_trees": {"type": "integer", "minimum": 1},
                "max_depth": {"type": "integer", "minimum": 1},
                "min_leaf": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "aggregation": {"enum": ["vote_fraction", "mean_score"]},
                "eta": {"type": "number", "minimum": 0, "maximum": 1},
                "pool_rule": {"enum": ["mean", "log_mean"]},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "insertion": {"type": "number", "minimum": 0},
                "deletion": {"type": "number", "minimum": 0},
                "transposition": {"type": "number", "minimum": 0},
                "sub_floor": {"type": "number", "minimum": 0},
                "sub_cap": {"type": "number", "minimum": 0},
                "delta": {"type": ["number", "null"], "minimum": 0},
                "delta_percentile": {"type": "number", "minimum": 0, "maximum": 100},
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fold_mode": {"enum": ["loco", "random", "cross_run"]},
                "random_folds": {"type": "integer", "minimum": 2},
                "tpr_fpr_targets": {"type": "array", "items": {"type": "number"}},
                "ece_bins": {"type": "integer", "minimum": 2},
                "mi_bins": {"type": "integer", "minimum": 2},
                "bootstrap_resamples": {"type": "integer", "minimum": 100},
                "bootstrap_seed": {"type": "integer", "minimum": 0},
            },
        },
        "survey": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "carriers_mhz": {"type": "array", "minItems": 1,
                                 "items": {"type": "number", "exclusiveMinimum": 0}},
                "dwell_s": {"type": "number", "exclusiveMinimum": 0},
                "sample_rate": {"type": "number", "exclusiveMinimum": 0},
                "penalty": {"type": "number", "minimum": 0},
                "flag_ratio": {"type": "number", "exclusiveMinimum": 1},
                "cpu_line_mhz": {"type": "number", "exclusiveMinimum": 0},
                "ram_line_mhz": {"type": "number", "exclusiveMinimum": 0},
                "governor_line_mhz": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
    },
}

_DEFAULTS = {
    "corpus": {
        "sample_rate": 1_000_000.0,
        "channels": {"cpu_carrier_mhz": 80.0, "ram_carrier_mhz": 800.0,
                     "noise_floor": 1.0, "scale": 9.0},
        "drift": {"enabled": True, "gain_db_sigma": 1.5, "dc_offset_sigma": 0.4,
                  "freq_offset_sigma_hz": 15000.0, "temp_initial_c": 38.0,
                  "temp_cycle_sigma_c": 3.0, "temp_warm_per_record_c": 0.05,
                  "thermal_gain_per_c": 0.012, "activity_jitter_sigma": 0.08,
                  "noise_scale_sigma": 0.25},
        "attacks": {"enabled": False, "victim_skills": [], "payload_preset":
                    "payload_shell_burst", "payload_duration_s": 2.0,
                    "records_per_cycle": 0},
    },
    "windowing": {"tau_s": 0.5, "rho_s": 0.25, "envelope_mode": "event_anchor"},
    "features": {"psd_segment": None, "psd_overlap": 0.5, "envelope_block_s": 1e-3},
    "drift": {"detrend_degree": 1, "k_sel": 65, "eps": 1e-6},
    "forest": {"n_trees": 500, "max_depth": 15, "min_leaf": 2, "seed": 7},
    "detector": {"aggregation": "vote_fraction", "eta": 0.5, "pool_rule": "mean"},
    "verify": {"insertion": 1.0, "deletion": 1.0, "transposition": 0.75,
               "sub_floor": 0.05, "sub_cap": 1.0, "delta": None, "delta_percentile": 99.0},
    "evaluation": {"fold_mode": "loco", "random_folds": 10,
                   "tpr_fpr_targets": [0.005, 0.01, 0.0116, 0.05], "ece_bins": 10,
                   "mi_bins": 16, "bootstrap_resamples": 1000, "bootstrap_seed": 0},
    "survey": {"carriers_mhz": [20.0, 50.0, 80.0, 200.0, 500.0, 800.0, 1200.0, 1800.0, 2400.0],
               "dwell_s": 2.0, "sample_rate": 500_000.0, "penalty": 0.5, "flag_ratio": 3.0,
               "cpu_line_mhz": 80.0, "ram_line_mhz": 800.0, "governor_line_mhz": 1800.0},
}


class ConfigError(Exception):
    pass


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config schema violation at {list(exc.absolute_path)}: "
                              f"{exc.message}")
        resolved = _deep_merge(_DEFAULTS, data)
        resolved["name"] = data["name"]
        resolved["seed"] = data["seed"]
        jsonschema.validate({k: v for k, v in resolved.items()}, SCHEMA)
        return cls(raw=resolved)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    # -- typed accessors -------------------------------------------------

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def sample_rate(self) -> float:
        return float(self.raw["corpus"]["sample_rate"])

    def skill_catalog(self) -> dict[str, SkillProfile]:
        catalog = {}
        for spec in self.raw["corpus"]["skills"]:
            name = spec.get("name", spec["preset"])
            prof = profiles.make_profile(spec["preset"], name=name,
                                         duration_s=spec.get("duration_s", 8.0))
            if name in catalog:
                raise ConfigError(f"duplicate skill name {name!r} in catalog")
            catalog[name] = prof
        return catalog

    def channels(self) -> tuple[ChannelModel, ChannelModel]:
        ch = self.raw["corpus"]["channels"]
        return profiles.default_channels(ch["cpu_carrier_mhz"], ch["ram_carrier_mhz"],
                                         ch["noise_floor"], ch["scale"])

    def cycle_context(self, cycle: int, record_idx: int = 0) -> CycleContext:
        d = self.raw["corpus"]["drift"]
        if not d["enabled"]:
            return CycleContext(cycle_index=cycle, temp_initial_c=d["temp_initial_c"],
                                temp_reference_c=d["temp_initial_c"], thermal_gain_per_c=0.0)
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(9000, cycle))))
        gain = float(rng.normal(0.0, d["gain_db_sigma"]))
        dc = complex(float(rng.normal(0.0, d["dc_offset_sigma"])),
                     float(rng.normal(0.0, d["dc_offset_sigma"])))
        freq = float(rng.normal(0.0, d["freq_offset_sigma_hz"]))
        temp0 = (d["temp_initial_c"] + float(rng.normal(0.0, d["temp_cycle_sigma_c"]))
                 + d["temp_warm_per_record_c"] * record_idx)
        jitter = d["activity_jitter_sigma"]
        scale = {}
        if jitter > 0:
            from .synth import COMPONENT_IDS
            for comp in COMPONENT_IDS:
                if comp != "idle":
                    scale[comp] = float(np.clip(1.0 + rng.normal(0.0, jitter), 0.6, 1.4))
        noise_scale = float(np.exp(rng.normal(0.0, d["noise_scale_sigma"])))
        return CycleContext(
            cycle_index=cycle, gain_offset_db=gain, dc_offset=dc, freq_offset_hz=freq,
            temp_initial_c=temp0, temp_reference_c=d["temp_initial_c"],
            thermal_gain_per_c=d["thermal_gain_per_c"], activity_scale=scale,
            noise_scale=noise_scale)

    def feature_config(self) -> FeatureConfig:
        f = self.raw["features"]
        return FeatureConfig(sample_rate=self.sample_rate(), psd_segment=f["psd_segment"],
                             psd_overlap=f["psd_overlap"],
                             envelope_block_s=f["envelope_block_s"])

    def drift_config(self) -> DriftConfig:
        d = self.raw["drift"]
        return DriftConfig(detrend_degree=d["detrend_degree"], k_sel=d["k_sel"], eps=d["eps"])

    def forest_params(self) -> ForestParams:
        f = self.raw["forest"]
        return ForestParams(n_trees=f["n_trees"], max_depth=f["max_depth"],
                            min_leaf=f["min_leaf"], seed=f["seed"])

    def host_emission_model(self) -> HostEmissionModel:
        s = self.raw["survey"]
        ch = self.raw["corpus"]["channels"]
        return HostEmissionModel(
            lines=[
                EmissionLine("cpu", s["cpu_line_mhz"], 25.0, ch["scale"]),
                EmissionLine("dram", s["ram_line_mhz"], 50.0, ch["scale"]),
            ],
            noise_floor=ch["noise_floor"],
            governor_line_mhz=s["governor_line_mhz"],
            governor_width_mhz=60.0,
            governor_spur_gain=ch["scale"] * 1.2,
            governor_fm_depth_hz=0.45 * s["sample_rate"],
            governor_fm_rate_hz=4.0,
        )


@dataclass
class PlannedRecord:
    """One record of the simulation plan: skill, cycle, seed, optional attack."""

    record_id: str
    skill: str
    cycle: int
    record_idx: int
    seed: int
    attack: dict | None  # {"payload": preset, "start_s": float, "duration_s": float}


def plan_corpus(cfg: ExperimentConfig) -> list[PlannedRecord]:
    """Deterministic record plan: benign records per skill per cycle, plus
    attack records carrying payload overlays at jittered offsets."""
    corpus = cfg.raw["corpus"]
    catalog = cfg.skill_catalog()
    atk = corpus["attacks"]
    plan = []
    for cycle in range(corpus["cycles"]):
        idx = 0
        for skill in catalog:
            for _ in range(corpus["records_per_skill_per_cycle"]):
                seed = int(np.random.SeedSequence(
                    entropy=cfg.seed, spawn_key=(cycle, idx)).generate_state(1)[0])
                plan.append(PlannedRecord(
                    record_id=f"c{cycle:02d}_r{idx:03d}_{skill}",
                    skill=skill, cycle=cycle, record_idx=idx, seed=seed, attack=None))
                idx += 1
        if atk["enabled"] and atk["records_per_cycle"] > 0:
            victims = atk["victim_skills"] or list(catalog)
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(entropy=cfg.seed, spawn_key=(7700, cycle))))
            for k in range(atk["records_per_cycle"]):
                victim = victims[k % len(victims)]
                dur = catalog[victim].duration_s
                pay = atk["payload_duration_s"]
                if pay >= dur - 1.0:
                    raise ConfigError(
                        f"payload {pay}s does not fit inside {victim!r} ({dur}s)")
                start = float(rng.uniform(0.5, dur - pay - 0.5))
                seed = int(np.random.SeedSequence(
                    entropy=cfg.seed, spawn_key=(cycle, idx)).generate_state(1)[0])
                plan.append(PlannedRecord(
                    record_id=f"c{cycle:02d}_r{idx:03d}_{victim}_atk",
                    skill=victim, cycle=cycle, record_idx=idx, seed=seed,
                    attack={"payload": atk["payload_preset"], "start_s": start,
                            "duration_s": pay}))
                idx += 1
    return plan


def render_planned(cfg: ExperimentConfig, item: PlannedRecord):
    """Render one planned record (safe to call from worker processes)."""
    from .synth import render_record
    catalog = cfg.skill_catalog()
    channels = cfg.channels()
    ctx = cfg.cycle_context(item.cycle, item.record_idx)
    overlay = None
    if item.attack is not None:
        payload = profiles.make_profile(item.attack["payload"],
                                        duration_s=item.attack["duration_s"])
        overlay = AttackOverlay(profile=payload, start_s=item.attack["start_s"],
                                duration_s=item.attack["duration_s"])
    return render_record(catalog[item.skill], channels, ctx, item.seed,
                         attack_overlay=overlay, sample_rate=cfg.sample_rate(),
                         record_id=item.record_id)
