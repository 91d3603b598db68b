"""Dual-receiver IQ record container and bit-exact corpus persistence.

A record bundles two quantized complex-sample streams (one per receiver
band), an ordered event sidecar, a temperature trace, and a class label.
On disk a corpus directory holds:

* ``<record_id>__<receiver>__<carrier>MHz__<sps>sps.iq`` -- raw interleaved
  signed 8-bit I,Q samples, no header; all capture metadata lives in the
  filename and the manifest.
* ``<record_id>.events.jsonl`` -- one JSON object per line: ``{"t_s": float,
  "kind": str}``.
* ``<record_id>.temp.csv`` -- CSV with header ``t_s,celsius``.
* ``manifest.json`` -- record listing with skill, cycle, label and file paths.

Round-tripping a record through ``write_corpus``/``read_corpus`` is lossless:
IQ bytes, event timestamps, temperatures and labels compare equal.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

RECEIVER_IDS = ("cpu_band", "ram_band")
LABELS = ("background", "normal", "attack")

EVENT_KINDS = (
    "attack_begin",
    "payload_start",
    "payload_end",
    "attack_end",
    "work_start",
    "work_end",
)


class CorpusFormatError(Exception):
    """Raised when an on-disk corpus file violates the documented format."""


class Event(NamedTuple):
    t_s: float
    kind: str


@dataclass
class IQRecord:
    """One dual-receiver capture with event and temperature sidecars.

    ``samples`` maps receiver id to an ``(n, 2)`` int8 array of I,Q pairs;
    ``temperature`` is a ``(k, 2)`` float64 array of ``(t_s, celsius)`` rows.
    Event timestamps are seconds relative to the start of the record.
    """

    record_id: str
    skill_name: str
    cycle_index: int
    sample_rate: float
    duration_s: float
    samples: dict[str, np.ndarray]
    carriers: dict[str, float]
    events: list[Event] = field(default_factory=list)
    temperature: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    label: str = "normal"
    t0_s: float = 0.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.cycle_index < 0:
            raise ValueError(f"cycle_index must be >= 0, got {self.cycle_index}")
        if self.label not in LABELS:
            raise ValueError(f"label {self.label!r} not in {LABELS}")
        counts = {r: arr.shape[0] for r, arr in self.samples.items()}
        if len(set(counts.values())) > 1:
            raise ValueError(f"receiver streams differ in sample count: {counts}")
        for r, arr in self.samples.items():
            if arr.dtype != np.int8 or arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError(f"stream {r!r} must be (n, 2) int8, got {arr.dtype} {arr.shape}")
            if r not in self.carriers:
                raise ValueError(f"no carrier recorded for receiver {r!r}")
        ts = [e.t_s for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("event timestamps must be monotone nondecreasing")
        eps = 1e-9
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                raise ValueError(f"unknown event kind {e.kind!r}")
            if not (-eps <= e.t_s <= self.duration_s + eps):
                raise ValueError(f"event {e.kind} at {e.t_s}s outside [0, {self.duration_s}]s")
        anchors = {k: t for t, k in self.events if k in ("payload_start", "payload_end")}
        if "payload_start" in anchors and "payload_end" in anchors:
            if not anchors["payload_start"] < anchors["payload_end"]:
                raise ValueError("payload_start must precede payload_end")

    @property
    def n_samples(self) -> int:
        return next(iter(self.samples.values())).shape[0] if self.samples else 0

    def complex_stream(self, receiver_id: str) -> np.ndarray:
        """Return the receiver stream as complex64 (I + jQ)."""
        pairs = self.samples[receiver_id].astype(np.float32)
        return (pairs[:, 0] + 1j * pairs[:, 1]).astype(np.complex64)

    def event_time(self, kind: str) -> float | None:
        for t, k in self.events:
            if k == kind:
                return t
        return None

    def has_attack_anchors(self) -> bool:
        kinds = {e.kind for e in self.events}
        return "payload_start" in kinds and "payload_end" in kinds

    def temperature_at(self, t_s: float | np.ndarray) -> np.ndarray:
        """Linearly interpolated temperature at time(s) ``t_s``."""
        if self.temperature.shape[0] == 0:
            return np.full(np.shape(t_s) or (), np.nan)
        return np.interp(t_s, self.temperature[:, 0], self.temperature[:, 1])


def expected_iq_bytes(duration_s: float, sample_rate: float) -> int:
    """Byte size of one receiver's IQ file: 2 bytes per complex sample."""
    return 2 * int(round(duration_s * sample_rate))


def iq_filename(record_id: str, receiver_id: str, carrier_mhz: float, sample_rate: float) -> str:
    return f"{record_id}__{receiver_id}__{carrier_mhz:.6g}MHz__{int(round(sample_rate))}sps.iq"


_IQ_NAME_RE = re.compile(
    r"^(?P<record_id>.+)__(?P<receiver_id>[a-z_]+)__(?P<carrier>[0-9.eE+-]+)MHz__(?P<sps>\d+)sps\.iq$"
)


def parse_iq_filename(name: str) -> dict:
    m = _IQ_NAME_RE.match(name)
    if m is None:
        raise CorpusFormatError(f"unparseable IQ filename: {name!r}")
    return {
        "record_id": m.group("record_id"),
        "receiver_id": m.group("receiver_id"),
        "carrier_mhz": float(m.group("carrier")),
        "sample_rate": float(m.group("sps")),
    }


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_record(rec: IQRecord, directory: str | Path) -> dict:
    """Write one record's IQ payloads and sidecars; returns its manifest entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rec.validate()
    receivers = {}
    for rid, arr in rec.samples.items():
        fname = iq_filename(rec.record_id, rid, rec.carriers[rid], rec.sample_rate)
        arr.tofile(directory / fname)
        receivers[rid] = {"file": fname, "carrier_mhz": rec.carriers[rid]}
    events_file = f"{rec.record_id}.events.jsonl"
    with open(directory / events_file, "w") as f:
        for t, kind in rec.events:
            f.write(_canonical_json({"kind": kind, "t_s": float(t)}) + "\n")
    temp_file = f"{rec.record_id}.temp.csv"
    with open(directory / temp_file, "w") as f:
        f.write("t_s,celsius\n")
        for t, c in rec.temperature:
            f.write(f"{float(t)!r},{float(c)!r}\n")
    return {
        "record_id": rec.record_id,
        "skill_name": rec.skill_name,
        "cycle_index": rec.cycle_index,
        "label": rec.label,
        "sample_rate": rec.sample_rate,
        "duration_s": rec.duration_s,
        "t0_s": rec.t0_s,
        "receivers": receivers,
        "events_file": events_file,
        "temperature_file": temp_file,
    }


def write_corpus(records: Iterable[IQRecord], directory: str | Path,
                 config_hash: str | None = None) -> dict:
    """Persist records to ``directory`` and return the manifest dict.

    Existing manifest entries are overwritten; IQ payloads are raw int8
    interleaved I,Q with byte count ``2 * n_samples``.
    """
    directory = Path(directory)
    entries = [write_record(rec, directory) for rec in records]
    manifest = {"version": 1, "records": entries}
    if config_hash is not None:
        manifest["config_hash"] = config_hash
    with open(directory / "manifest.json", "w") as f:
        f.write(_canonical_json(manifest))
    return manifest


def _read_iq(path: Path, mmap: bool) -> np.ndarray:
    size = path.stat().st_size
    if size % 2 != 0:
        raise CorpusFormatError(f"IQ byte count not a multiple of 2 in {path.name!r} ({size} bytes)")
    if mmap:
        raw = np.memmap(path, dtype=np.int8, mode="r")
    else:
        raw = np.fromfile(path, dtype=np.int8)
    return raw.reshape(-1, 2)


def _read_events(path: Path) -> list[Event]:
    events = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                events.append(Event(float(obj["t_s"]), str(obj["kind"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"malformed event sidecar {path.name!r} line {i + 1}: {exc}")
    return events


def _read_temperature(path: Path) -> np.ndarray:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "t_s,celsius":
            raise CorpusFormatError(f"bad temperature header in {path.name!r}: {header!r}")
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CorpusFormatError(f"malformed temperature row {i + 2} in {path.name!r}")
            rows.append((float(parts[0]), float(parts[1])))
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def read_record(directory: str | Path, entry: dict, mmap: bool = False) -> IQRecord:
    """Load one record from its manifest entry."""
    directory = Path(directory)
    samples, carriers = {}, {}
    n_expected = int(round(entry["duration_s"] * entry["sample_rate"]))
    for rid, meta in entry["receivers"].items():
        arr = _read_iq(directory / meta["file"], mmap)
        if arr.shape[0] != n_expected:
            raise CorpusFormatError(
                f"manifest/record mismatch for {meta['file']!r}: "
                f"{arr.shape[0]} samples on disk, {n_expected} expected"
            )
        samples[rid] = arr
        carriers[rid] = float(meta["carrier_mhz"])
    return IQRecord(
        record_id=entry["record_id"],
        skill_name=entry["skill_name"],
        cycle_index=int(entry["cycle_index"]),
        sample_rate=float(entry["sample_rate"]),
        duration_s=float(entry["duration_s"]),
        samples=samples,
        carriers=carriers,
        events=_read_events(directory / entry["events_file"]),
        temperature=_read_temperature(directory / entry["temperature_file"]),
        label=entry["label"],
        t0_s=float(entry.get("t0_s", 0.0)),
    )


def read_manifest(directory: str | Path) -> dict:
    manifest_path = Path(directory) / "manifest.json"
    if not manifest_path.exists():
        raise CorpusFormatError(f"no manifest.json in {directory}")
    return json.loads(manifest_path.read_text())


def read_corpus(directory: str | Path, mmap: bool = False) -> list[IQRecord]:
    """Load all records listed in ``directory``'s manifest.

    With ``mmap=True`` IQ payloads are memory-mapped so long records can be
    windowed without loading whole streams; sidecars are always loaded.
    """
    manifest = read_manifest(directory)
    return [read_record(directory, entry, mmap) for entry in manifest["records"]]
