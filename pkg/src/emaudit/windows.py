"""Coarse skill envelopes and overlapping fine windows.

A coarse envelope covers one skill's expected wall-clock span, anchored
either on the record's work events or on the declared schedule.  Fine
windows of length tau at stride rho tile the envelope; trailing partials
are dropped so every window yields a constant-length feature slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import IQRecord

_EPS = 1e-9

ENVELOPE_MODES = ("event_anchor", "schedule")


class WindowingError(Exception):
    pass


@dataclass(frozen=True)
class CoarseEnvelope:
    record_id: str
    a_s: float
    b_s: float
    source: str

    def __post_init__(self):
        if not (0.0 <= self.a_s < self.b_s):
            raise WindowingError(f"inverted or negative envelope [{self.a_s}, {self.b_s}]")

    @property
    def length_s(self) -> float:
        return self.b_s - self.a_s


@dataclass
class FineWindow:
    """One fine window: absolute start, length, and per-receiver slices."""

    record_id: str
    index: int
    start_s: float
    tau_s: float
    slices: dict[str, np.ndarray]

    def complex_slices(self) -> dict[str, np.ndarray]:
        out = {}
        for rid, pairs in self.slices.items():
            p = pairs.astype(np.float32)
            out[rid] = (p[:, 0] + 1j * p[:, 1]).astype(np.complex64)
        return out

    @property
    def mid_s(self) -> float:
        return self.start_s + self.tau_s / 2.0


def coarse_envelope(record: IQRecord, mode: str = "event_anchor") -> CoarseEnvelope:
    """Envelope from work events (``event_anchor``) or full declared duration
    (``schedule``), clipped to the record."""
    if mode not in ENVELOPE_MODES:
        raise WindowingError(f"unknown envelope mode {mode!r}")
    if mode == "schedule":
        return CoarseEnvelope(record.record_id, 0.0, record.duration_s, "schedule")
    a = record.event_time("work_start")
    b = record.event_time("work_end")
    if a is None or b is None:
        raise WindowingError(f"unanchored record {record.record_id!r}: missing work_start/work_end")
    a = max(a, 0.0)
    b = min(b, record.duration_s)
    if not a < b:
        raise WindowingError(f"inverted work anchors [{a}, {b}] in {record.record_id!r}")
    return CoarseEnvelope(record.record_id, a, b, "event_anchor")


def window_starts(a_s: float, b_s: float, tau_s: float, rho_s: float) -> np.ndarray:
    """Start times a + j*rho for j = 0.. while the window fits in [a, b]."""
    if tau_s <= 0 or rho_s <= 0:
        raise WindowingError("tau and rho must be > 0")
    span = b_s - a_s
    if tau_s > span + _EPS:
        raise WindowingError(f"fine window tau={tau_s}s exceeds envelope length {span}s")
    n = int(np.floor((span - tau_s) / rho_s + _EPS)) + 1
    return a_s + rho_s * np.arange(n)


def fine_windows(record: IQRecord, env: CoarseEnvelope, tau_s: float, rho_s: float,
                 ) -> list[FineWindow]:
    """Slice overlapping fine windows out of the envelope.

    All windows share the same sample count; slices are views into the
    record's streams, so no samples are copied here.
    """
    starts = window_starts(env.a_s, env.b_s, tau_s, rho_s)
    fs = record.sample_rate
    n_tau = int(round(tau_s * fs))
    out = []
    n_total = record.n_samples
    for j, start in enumerate(starts):
        i0 = int(round(start * fs))
        i1 = i0 + n_tau
        if i1 > n_total:  # guard against rounding at the record edge
            break
        slices = {rid: arr[i0:i1] for rid, arr in record.samples.items()}
        out.append(FineWindow(record.record_id, j, float(start), tau_s, slices))
    return out


def window_state_label(record: IQRecord, win: FineWindow) -> str:
    """Ground-truth 3-state label for a fine window.

    Windows overlapping the payload interval of an attack record are
    ``attack``; windows of an idle record are ``background``; everything
    else is ``normal``.
    """
    ps = record.event_time("payload_start")
    pe = record.event_time("payload_end")
    if ps is not None and pe is not None:
        if win.start_s < pe and (win.start_s + win.tau_s) > ps:
            return "attack"
    return "background" if record.label == "background" else "normal"
