"""Feature dataset container and columnar binary cache.

Cache layout (little-endian, documented bit-exactly):

    bytes 0..3   magic ``EMFC``
    byte  4      format version (1)
    bytes 5..8   uint32 header length H
    bytes 9..9+H UTF-8 JSON header, keys sorted, no whitespace
    payload      values   float32, C-order, shape (n_rows, dim)
                 window_index int32 (n_rows)
                 cycle_index  int32 (n_rows)
                 temperature_c float32 (n_rows)

The header carries the layout descriptor, the producing config hash, row
counts, and the string provenance columns (record ids, skills, window-state
labels, record labels) as JSON lists.  Numeric payload order is fixed;
writing the same dataset twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import IQRecord
from .features import FeatureConfig, FeatureVector, extract_v10
from .windows import coarse_envelope, fine_windows, window_state_label

_MAGIC = b"EMFC"
_VERSION = 1


class FeatureStoreError(Exception):
    pass


@dataclass
class FeatureSet:
    """Row-aligned feature matrix plus provenance columns."""

    values: np.ndarray                 # (n, dim) float32
    record_ids: list[str]
    window_index: np.ndarray           # (n,) int32
    cycle_index: np.ndarray            # (n,) int32
    temperature_c: np.ndarray          # (n,) float32
    skills: list[str]
    states: list[str]                  # window-level {background, normal, attack}
    labels: list[str]                  # record-level label copied onto each row
    layout: dict[str, tuple[int, int]]
    config_hash: str = ""

    def __post_init__(self) -> None:
        n = self.values.shape[0]
        for name in ("record_ids", "skills", "states", "labels"):
            if len(getattr(self, name)) != n:
                raise FeatureStoreError(f"{name} has {len(getattr(self, name))} entries, want {n}")
        for name in ("window_index", "cycle_index", "temperature_c"):
            if getattr(self, name).shape[0] != n:
                raise FeatureStoreError(f"{name} misaligned")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def cycles(self) -> np.ndarray:
        return np.unique(self.cycle_index)

    def subset(self, mask: np.ndarray) -> "FeatureSet":
        idx = np.flatnonzero(mask) if mask.dtype == bool else np.asarray(mask)
        return FeatureSet(
            values=self.values[idx],
            record_ids=[self.record_ids[i] for i in idx],
            window_index=self.window_index[idx],
            cycle_index=self.cycle_index[idx],
            temperature_c=self.temperature_c[idx],
            skills=[self.skills[i] for i in idx],
            states=[self.states[i] for i in idx],
            labels=[self.labels[i] for i in idx],
            layout=self.layout,
            config_hash=self.config_hash,
        )

    def fingerprint(self) -> str:
        """Content hash over rows and provenance, used by the leakage guard."""
        h = hashlib.sha256()
        h.update(self.values.tobytes())
        h.update(self.window_index.tobytes())
        h.update(self.cycle_index.tobytes())
        h.update("|".join(self.record_ids).encode())
        return h.hexdigest()[:16]

    @staticmethod
    def concatenate(parts: list["FeatureSet"]) -> "FeatureSet":
        if not parts:
            raise FeatureStoreError("nothing to concatenate")
        first = parts[0]
        for p in parts[1:]:
            if p.layout != first.layout or p.config_hash != first.config_hash:
                raise FeatureStoreError("layout/config mismatch across feature sets")
        return FeatureSet(
            values=np.concatenate([p.values for p in parts]),
            record_ids=sum((p.record_ids for p in parts), []),
            window_index=np.concatenate([p.window_index for p in parts]),
            cycle_index=np.concatenate([p.cycle_index for p in parts]),
            temperature_c=np.concatenate([p.temperature_c for p in parts]),
            skills=sum((p.skills for p in parts), []),
            states=sum((p.states for p in parts), []),
            labels=sum((p.labels for p in parts), []),
            layout=first.layout,
            config_hash=first.config_hash,
        )


def from_vectors(vectors: list[FeatureVector], labels: list[str]) -> FeatureSet:
    if not vectors:
        raise FeatureStoreError("no feature vectors")
    return FeatureSet(
        values=np.stack([v.values for v in vectors]).astype(np.float32),
        record_ids=[v.record_id for v in vectors],
        window_index=np.array([v.window_index for v in vectors], dtype=np.int32),
        cycle_index=np.array([v.cycle_index for v in vectors], dtype=np.int32),
        temperature_c=np.array([v.temperature_c for v in vectors], dtype=np.float32),
        skills=[v.skill for v in vectors],
        states=[v.state for v in vectors],
        labels=labels,
        layout=vectors[0].layout,
        config_hash=vectors[0].config_hash,
    )


def extract_record(record: IQRecord, config: FeatureConfig, tau_s: float = 0.5,
                   rho_s: float = 0.25, envelope_mode: str = "event_anchor") -> FeatureSet:
    """Window one record and extract all fine-window vectors."""
    env = coarse_envelope(record, envelope_mode)
    wins = fine_windows(record, env, tau_s, rho_s)
    vectors, labels = [], []
    for win in wins:
        slices = win.complex_slices()
        fv = extract_v10(
            slices["cpu_band"], slices["ram_band"], config,
            provenance={
                "record_id": record.record_id,
                "window_index": win.index,
                "temperature_c": float(record.temperature_at(win.mid_s)),
                "cycle_index": record.cycle_index,
                "skill": record.skill_name,
                "state": window_state_label(record, win),
            })
        vectors.append(fv)
        labels.append(record.label)
    return from_vectors(vectors, labels)


def save_featureset(fs: FeatureSet, path: str | Path) -> None:
    path = Path(path)
    header = {
        "config_hash": fs.config_hash,
        "dim": fs.dim,
        "n_rows": len(fs),
        "layout": {k: list(v) for k, v in fs.layout.items()},
        "record_ids": fs.record_ids,
        "skills": fs.skills,
        "states": fs.states,
        "labels": fs.labels,
        "dtypes": {"values": "<f4", "window_index": "<i4",
                   "cycle_index": "<i4", "temperature_c": "<f4"},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(bytes([_VERSION]))
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        f.write(np.ascontiguousarray(fs.values, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(fs.window_index, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(fs.cycle_index, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(fs.temperature_c, dtype="<f4").tobytes())


def load_featureset(path: str | Path) -> FeatureSet:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise FeatureStoreError(f"{path.name!r} is not a feature cache (bad magic)")
    if raw[4] != _VERSION:
        raise FeatureStoreError(f"unsupported feature cache version {raw[4]}")
    hlen = int(np.frombuffer(raw[5:9], dtype="<u4")[0])
    header = json.loads(raw[9:9 + hlen].decode())
    n, dim = header["n_rows"], header["dim"]
    off = 9 + hlen
    values = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=off).reshape(n, dim).copy()
    off += 4 * n * dim
    widx = np.frombuffer(raw, dtype="<i4", count=n, offset=off).copy()
    off += 4 * n
    cyc = np.frombuffer(raw, dtype="<i4", count=n, offset=off).copy()
    off += 4 * n
    temp = np.frombuffer(raw, dtype="<f4", count=n, offset=off).copy()
    return FeatureSet(
        values=values,
        record_ids=header["record_ids"],
        window_index=widx,
        cycle_index=cyc,
        temperature_c=temp,
        skills=header["skills"],
        states=header["states"],
        labels=header["labels"],
        layout={k: tuple(v) for k, v in header["layout"].items()},
        config_hash=header["config_hash"],
    )
