"""Sequence-level workflow integrity via weighted edit distance.

Compares the intended skill sequence with the physically recovered one
under a cost model over insertions, deletions, substitutions, and adjacent
transpositions (optimal-string-alignment dynamic program).  Substitution
costs can be derived from a stage-1 confusion matrix so that physically
confusable skill pairs are cheap to swap and separable pairs expensive.

Note: with transpositions enabled the distance is not guaranteed to
satisfy the triangle inequality (the classic CA / AC / ABC counterexample
applies to any adjacent-transposition variant that forbids editing through
a swapped pair); with transpositions disabled it reduces to weighted
Levenshtein, which is a metric for symmetric unit costs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

HIJACK_TYPES = {
    "insert": "Insertion",
    "delete": "Omission",
    "substitute": "Substitution",
    "transpose": "Reordering",
}

# forms only observable through downstream physical effects, never inferred
# from sequence identity alone
OUT_OF_BAND_FORMS = ("BranchInjection", "ParameterManipulation", "ToolResultPoisoning")


class VerifyError(Exception):
    pass


@dataclass(frozen=True)
class WorkflowSequence:
    skills: tuple[str, ...]
    provenance: str = "intended_policy"  # or recovered_physical

    def __post_init__(self):
        if self.provenance not in ("intended_policy", "recovered_physical"):
            raise VerifyError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.skills)


@dataclass
class CostModel:
    """Edit costs over a skill alphabet; substitution matrix has zero diagonal."""

    alphabet: tuple[str, ...]
    insertion: float = 1.0
    deletion: float = 1.0
    substitution: np.ndarray | None = None   # (n, n), zero diagonal
    transposition: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        n = len(self.alphabet)
        if self.substitution is None:
            self.substitution = np.ones((n, n)) - np.eye(n)
        self.substitution = np.asarray(self.substitution, dtype=np.float64)
        if self.substitution.shape != (n, n):
            raise VerifyError("substitution matrix shape does not match alphabet")
        if np.any(np.diag(self.substitution) != 0):
            raise VerifyError("substitution matrix must have zero diagonal")
        if (self.insertion < 0 or self.deletion < 0 or self.transposition < 0
                or np.any(self.substitution < 0) or self.delta < 0):
            raise VerifyError("costs and delta must be >= 0")
        self._index = {s: i for i, s in enumerate(self.alphabet)}

    @classmethod
    def unit(cls, alphabet, transposition: float = 1.0) -> "CostModel":
        return cls(alphabet=tuple(alphabet), transposition=transposition)

    def sub(self, a: str, b: str) -> float:
        return float(self.substitution[self._index[a], self._index[b]])

    def encode(self, seq) -> list[int]:
        try:
            return [self._index[s] for s in seq]
        except KeyError as exc:
            raise VerifyError(f"symbol {exc.args[0]!r} outside the declared alphabet")


def _dp_table(a: list[int], b: list[int], cost: CostModel) -> list[list[float]]:
    n, m = len(a), len(b)
    ins, dele, trans = cost.insertion, cost.deletion, cost.transposition
    sub = cost.substitution
    d = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = d[i - 1][0] + dele
    for j in range(1, m + 1):
        d[0][j] = d[0][j - 1] + ins
    for i in range(1, n + 1):
        di = d[i]
        dim1 = d[i - 1]
        ai = a[i - 1]
        sub_row = sub[ai]
        for j in range(1, m + 1):
            bj = b[j - 1]
            best = dim1[j - 1] + sub_row[bj]          # match or substitute
            v = dim1[j] + dele
            if v < best:
                best = v
            v = di[j - 1] + ins
            if v < best:
                best = v
            if i > 1 and j > 1 and ai == b[j - 2] and a[i - 2] == bj:
                v = d[i - 2][j - 2] + trans
                if v < best:
                    best = v
            di[j] = best
    return d


def edit_distance(intended, recovered, cost: CostModel) -> float:
    """Minimal total edit cost between the two sequences."""
    a = cost.encode(getattr(intended, "skills", intended))
    b = cost.encode(getattr(recovered, "skills", recovered))
    return _dp_table(a, b, cost)[len(a)][len(b)]


def weighted_edit_distance(intended, recovered, cost: CostModel,
                           ) -> tuple[float, list[tuple[str, str | None, str | None]]]:
    """Distance plus one optimal alignment as (op, intended, recovered) rows.

    Tie preference when several ops reach the optimum:
    match > substitute > transpose > delete > insert.
    """
    seq_a = list(getattr(intended, "skills", intended))
    seq_b = list(getattr(recovered, "skills", recovered))
    a = cost.encode(seq_a)
    b = cost.encode(seq_b)
    d = _dp_table(a, b, cost)
    ops: list[tuple[str, str | None, str | None]] = []
    i, j = len(a), len(b)
    eps = 1e-12
    while i > 0 or j > 0:
        cur = d[i][j]
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] \
                and abs(d[i - 1][j - 1] - cur) <= eps:
            ops.append(("match", seq_a[i - 1], seq_b[j - 1]))
            i, j = i - 1, j - 1
            continue
        if i > 0 and j > 0 and a[i - 1] != b[j - 1] \
                and abs(d[i - 1][j - 1] + cost.sub(seq_a[i - 1], seq_b[j - 1]) - cur) <= eps:
            ops.append(("substitute", seq_a[i - 1], seq_b[j - 1]))
            i, j = i - 1, j - 1
            continue
        if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1] \
                and abs(d[i - 2][j - 2] + cost.transposition - cur) <= eps:
            ops.append(("transpose", seq_a[i - 2] + "," + seq_a[i - 1],
                        seq_b[j - 2] + "," + seq_b[j - 1]))
            i, j = i - 2, j - 2
            continue
        if i > 0 and abs(d[i - 1][j] + cost.deletion - cur) <= eps:
            ops.append(("delete", seq_a[i - 1], None))
            i -= 1
            continue
        if j > 0 and abs(d[i][j - 1] + cost.insertion - cur) <= eps:
            ops.append(("insert", None, seq_b[j - 1]))
            j -= 1
            continue
        raise VerifyError("backtrace failed; inconsistent DP table")  # pragma: no cover
    ops.reverse()
    return d[len(a)][len(b)], ops


def confusability_costs(confusion: np.ndarray, alphabet, insertion: float = 1.0,
                        deletion: float = 1.0, transposition: float = 0.75,
                        floor: float = 0.05, cap: float = 1.0) -> CostModel:
    """Substitution costs from a row-stochastic stage-1 confusion matrix.

    cost(s, s') = 1 - (C[s, s'] + C[s', s]) / 2, clipped to [floor, cap];
    fully confused pairs bottom out at the floor, separable pairs stay
    near 1.
    """
    C = np.asarray(confusion, dtype=np.float64)
    n = len(alphabet)
    if C.shape != (n, n):
        raise VerifyError("confusion matrix shape does not match alphabet")
    row_sums = C.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise VerifyError(f"confusion matrix rows must sum to 1, got {row_sums}")
    sym = (C + C.T) / 2.0
    sub = np.clip(1.0 - sym, floor, cap)
    np.fill_diagonal(sub, 0.0)
    return CostModel(alphabet=tuple(alphabet), insertion=insertion, deletion=deletion,
                     substitution=sub, transposition=transposition)


def classify_deviation(ops) -> Counter:
    """Multiset of hijack types implied by an alignment's non-match ops."""
    out: Counter = Counter()
    for op, *_ in ops:
        if op == "match":
            continue
        out[HIJACK_TYPES[op]] += 1
    return out


def integrity_decision(distance: float, delta: float) -> str:
    """Benign iff distance <= delta (boundary counts as benign)."""
    if delta < 0:
        raise VerifyError("delta must be >= 0")
    return "benign" if distance <= delta else "hijacked"


def calibrate_delta(benign_distances, percentile: float = 99.0) -> float:
    """Decision threshold as a high percentile of benign validation distances."""
    arr = np.asarray(list(benign_distances), dtype=np.float64)
    if arr.size == 0:
        raise VerifyError("no benign distances to calibrate on")
    return float(np.percentile(arr, percentile))
