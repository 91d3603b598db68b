"""Stage-1 posterior pooling and stage-2 record verdicts.

Stage 1 pools fine-window skill posteriors inside the coarse record and
reads off the argmax skill.  Stage 2 classifies each window into
{background, normal, attack}, aggregates attack evidence over the record
(vote fraction or mean attack score), and flags the record when the
aggregate strictly exceeds the operating threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forest import ForestModel, predict_proba

STATES = ("attack", "background", "normal")  # sorted, matches forest class order
AGGREGATIONS = ("vote_fraction", "mean_score")
POOL_RULES = ("mean", "log_mean")

_LOG_GUARD = 1e-12


class DetectorError(Exception):
    pass


@dataclass
class WindowEvidence:
    """Per-window stage-2 output: hard state plus attack-class score."""

    record_id: str
    window_index: int
    state: str
    score: float

    def __post_init__(self):
        if self.state not in STATES:
            raise DetectorError(f"state {self.state!r} not in {STATES}")
        if not (0.0 <= self.score <= 1.0):
            raise DetectorError(f"score {self.score} outside [0, 1]")


@dataclass
class Verdict:
    record_id: str
    flagged: bool            # True = hijacked, False = benign
    aggregate: float
    threshold: float
    n_windows: int
    aggregation: str

    @property
    def label(self) -> str:
        return "hijacked" if self.flagged else "benign"

    def to_json(self) -> str:
        return json.dumps({
            "record_id": self.record_id, "v": self.label, "A": self.aggregate,
            "eta": self.threshold, "n_windows": self.n_windows,
            "aggregation": self.aggregation,
        }, sort_keys=True)


def pool_posteriors(posteriors: np.ndarray, rule: str = "mean") -> tuple[np.ndarray, int]:
    """Pool window posteriors into a record posterior and its argmax class.

    ``mean`` averages rows; ``log_mean`` averages log probabilities and
    renormalizes.  Ties break to the lowest class index.
    """
    if rule not in POOL_RULES:
        raise DetectorError(f"unknown pooling rule {rule!r}")
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise DetectorError("need at least one window posterior")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise DetectorError("window posteriors must each sum to 1")
    if rule == "mean":
        pooled = p.mean(axis=0)
    else:
        pooled = np.exp(np.log(p + _LOG_GUARD).mean(axis=0))
    pooled = pooled / pooled.sum()
    return pooled, int(np.argmax(pooled))


def classify_states(transformed: np.ndarray, model: ForestModel,
                    record_id: str = "", window_indices=None) -> list[WindowEvidence]:
    """Stage-2 window states from a forest trained on the 3-state space."""
    if sorted(model.classes) != sorted(STATES):
        raise DetectorError(
            f"model classes {model.classes} do not match the 3-state space {STATES}")
    proba = predict_proba(model, transformed)
    attack_col = model.class_index("attack")
    states = [model.classes[i] for i in np.argmax(proba, axis=1)]
    idx = window_indices if window_indices is not None else range(proba.shape[0])
    return [WindowEvidence(record_id, int(j), s, float(proba[i, attack_col]))
            for i, (j, s) in enumerate(zip(idx, states))]


def record_verdict(evidence: list[WindowEvidence], aggregation: str = "vote_fraction",
                   eta: float = 0.5) -> Verdict:
    """Aggregate window evidence; hijacked iff the aggregate strictly exceeds eta."""
    if not evidence:
        raise DetectorError("empty evidence list")
    if aggregation not in AGGREGATIONS:
        raise DetectorError(f"unknown aggregation {aggregation!r}")
    if not (0.0 <= eta <= 1.0):
        raise DetectorError(f"eta {eta} outside [0, 1]")
    if aggregation == "vote_fraction":
        agg = sum(1 for e in evidence if e.state == "attack") / len(evidence)
    else:
        agg = sum(e.score for e in evidence) / len(evidence)
    return Verdict(
        record_id=evidence[0].record_id,
        flagged=agg > eta,
        aggregate=float(agg),
        threshold=eta,
        n_windows=len(evidence),
        aggregation=aggregation,
    )


def write_verdict_log(verdicts: list[Verdict], path: str | Path) -> None:
    with open(path, "w") as f:
        for v in verdicts:
            f.write(v.to_json() + "\n")
