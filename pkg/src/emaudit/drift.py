"""Leakage-controlled drift compensation and feature selection.

The pipeline applies, in fixed order: cycle-local normalization
(per-cycle, per-feature standardization with an epsilon guard), polynomial
temperature detrending fit by least squares, one-way ANOVA top-k feature
selection, and global standardization.  Everything is fit on the training
fold only; a fold fingerprint recorded at fit time lets the guard refuse
training-side transforms of held-out data.

For cycles never seen at fit time (the LOCO test cycle), cycle statistics
are computed from the evaluation cycle's own windows without using labels
(self-normalization), which keeps the step cycle-local without leaking
class information.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_VERSION = 1


class LeakageError(Exception):
    """Fold-contamination guard tripped."""


class DriftError(Exception):
    pass


@dataclass
class DriftConfig:
    detrend_degree: int = 1
    k_sel: int = 65
    eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.detrend_degree < 0:
            raise ValueError("detrend degree must be >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.k_sel <= 0:
            raise ValueError("k_sel must be > 0")


# -- cycle-local normalization ------------------------------------------------

def fit_cycle_stats(x: np.ndarray, cycles: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-cycle per-feature (mean, std); needs >= 2 windows per cycle."""
    stats: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for c in np.unique(cycles):
        rows = x[cycles == c]
        if rows.shape[0] < 2:
            raise DriftError(f"cycle {c} has {rows.shape[0]} window(s); need >= 2 for stats")
        stats[int(c)] = (rows.mean(axis=0, dtype=np.float64),
                         rows.std(axis=0, dtype=np.float64))
    return stats


def apply_cycle_normalize(x: np.ndarray, cycles: np.ndarray,
                          stats: dict[int, tuple[np.ndarray, np.ndarray]], eps: float,
                          allow_self_stats: bool = False) -> np.ndarray:
    """Standardize each row by its cycle's stats: (x - mu) / (sigma + eps).

    Cycles missing from ``stats`` raise unless ``allow_self_stats`` is set,
    in which case the evaluation cycle's own (unlabeled) windows provide the
    fallback statistics.
    """
    out = np.empty(x.shape, dtype=np.float64)
    for c in np.unique(cycles):
        rows = cycles == c
        if int(c) in stats:
            mu, sd = stats[int(c)]
        elif allow_self_stats:
            block = x[rows]
            if block.shape[0] < 2:
                raise DriftError(f"cannot self-normalize cycle {c}: only {block.shape[0]} window(s)")
            mu = block.mean(axis=0, dtype=np.float64)
            sd = block.std(axis=0, dtype=np.float64)
        else:
            raise DriftError(f"cycle {c} absent from fitted stats")
        out[rows] = (x[rows] - mu) / (sd + eps)
    return out


# -- temperature detrending ---------------------------------------------------

def fit_temperature_detrend(x: np.ndarray, temps: np.ndarray, degree: int) -> np.ndarray:
    """Least-squares polynomial fit of each feature against temperature.

    Returns coefficients of shape (degree + 1, n_features), constant term
    first.  With fewer distinct temperatures than the fit needs, the
    higher-order terms degenerate to zero with a warning.
    """
    n_distinct = np.unique(np.round(temps, 9)).size
    if degree >= 1 and n_distinct < degree + 2:
        warnings.warn(
            f"only {n_distinct} distinct temperature(s); detrend degenerates to mean removal",
            stacklevel=2)
        beta = np.zeros((degree + 1, x.shape[1]))
        beta[0] = x.mean(axis=0, dtype=np.float64)
        return beta
    A = np.vander(temps.astype(np.float64), degree + 1, increasing=True)
    beta, *_ = np.linalg.lstsq(A, x.astype(np.float64), rcond=None)
    return beta


def apply_detrend(x: np.ndarray, temps: np.ndarray, beta: np.ndarray) -> np.ndarray:
    degree = beta.shape[0] - 1
    A = np.vander(temps.astype(np.float64), degree + 1, increasing=True)
    return x.astype(np.float64) - A @ beta


# -- ANOVA selection ----------------------------------------------------------

_F_VAR_FLOOR = 1e-12


def anova_f(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """One-way F statistic per feature from between/within sums of squares.

    Zero-variance features get F = 0; zero within-class variance is floored
    so perfect separators rank first instead of dividing by zero.
    """
    classes = np.unique(labels)
    if classes.size < 2:
        raise DriftError("ANOVA needs >= 2 classes")
    n = x.shape[0]
    x64 = x.astype(np.float64)
    grand = x64.mean(axis=0)
    ssb = np.zeros(x.shape[1])
    ssw = np.zeros(x.shape[1])
    for c in classes:
        rows = x64[labels == c]
        if rows.shape[0] < 2:
            raise DriftError(f"class {c!r} has fewer than 2 samples")
        mu = rows.mean(axis=0)
        ssb += rows.shape[0] * (mu - grand) ** 2
        ssw += ((rows - mu) ** 2).sum(axis=0)
    df_b = classes.size - 1
    df_w = n - classes.size
    msb = ssb / df_b
    msw = ssw / df_w
    f = msb / np.maximum(msw, _F_VAR_FLOOR)
    f[ssb <= _F_VAR_FLOOR] = 0.0
    return f


def anova_select(x: np.ndarray, labels: np.ndarray, k_sel: int) -> np.ndarray:
    """Indices (ascending) of the k_sel largest F statistics, ties to lower index."""
    if k_sel <= 0:
        raise DriftError("k_sel must be > 0")
    f = anova_f(x, labels)
    k = min(k_sel, f.shape[0])
    order = np.lexsort((np.arange(f.shape[0]), -f))
    return np.sort(order[:k])


# -- composed pipeline ----------------------------------------------------------

@dataclass
class DriftPipelineModel:
    """Fitted normalize -> detrend -> select -> scale transform.

    ``fit_fingerprint`` captures the training fold (cycle set and content
    hash); ``holdout_cycles`` is the evaluation-fold complement declared at
    fit time, used by the leakage guard.
    """

    config: DriftConfig
    cycle_stats: dict[int, tuple[np.ndarray, np.ndarray]]
    beta: np.ndarray
    mask: np.ndarray
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    train_cycles: tuple[int, ...]
    holdout_cycles: tuple[int, ...]
    fit_fingerprint: str

    def validate(self) -> None:
        if not self.fit_fingerprint:
            raise DriftError("model missing fit fingerprint")
        if np.unique(self.mask).size != self.mask.size:
            raise DriftError("selection mask has duplicate indices")
        if not np.all(np.isfinite(self.beta)):
            raise DriftError("detrend coefficients not finite")


def _fold_fingerprint(fs, declared_cycles: tuple[int, ...]) -> str:
    h = hashlib.sha256()
    h.update(fs.fingerprint().encode())
    h.update(json.dumps(sorted(declared_cycles)).encode())
    return h.hexdigest()[:16]


def fit_pipeline(train, config: DriftConfig, holdout_cycles=(),
                 target: str = "skill") -> DriftPipelineModel:
    """Fit the full drift pipeline on a training FeatureSet.

    ``holdout_cycles`` declares the evaluation fold; any overlap with the
    training rows trips the leakage guard.  ``target`` picks the label
    column driving ANOVA selection: ``skill`` (stage 1) or ``state``
    (stage 2).
    """
    holdout = tuple(int(c) for c in holdout_cycles)
    train_cycles = tuple(int(c) for c in train.cycles())
    contaminated = set(train_cycles) & set(holdout)
    if contaminated:
        raise LeakageError(
            f"training fold contains declared holdout cycle(s) {sorted(contaminated)}")
    x = train.values
    stats = fit_cycle_stats(x, train.cycle_index)
    xn = apply_cycle_normalize(x, train.cycle_index, stats, config.eps)
    beta = fit_temperature_detrend(xn, train.temperature_c, config.detrend_degree)
    xd = apply_detrend(xn, train.temperature_c, beta)
    if target not in ("skill", "state"):
        raise DriftError(f"unknown selection target {target!r}")
    labels = np.asarray(train.skills if target == "skill" else train.states)
    mask = anova_select(xd, labels, config.k_sel)
    sel = xd[:, mask]
    mu = sel.mean(axis=0)
    sd = sel.std(axis=0)
    model = DriftPipelineModel(
        config=config,
        cycle_stats=stats,
        beta=beta,
        mask=mask,
        scaler_mean=mu,
        scaler_std=np.maximum(sd, 1e-12),
        train_cycles=train_cycles,
        holdout_cycles=holdout,
        fit_fingerprint=_fold_fingerprint(train, holdout),
    )
    model.validate()
    return model


def transform(model: DriftPipelineModel, fs, for_training: bool = False) -> np.ndarray:
    """Apply the fitted pipeline; returns the (n, k_sel) matrix.

    With ``for_training=True`` the guard verifies the data is exactly the
    fit fold: rows from the declared holdout raise ``LeakageError``.
    """
    if for_training:
        overlap = set(int(c) for c in fs.cycles()) & set(model.holdout_cycles)
        if overlap:
            raise LeakageError(
                f"training-side transform fed holdout cycle(s) {sorted(overlap)}")
        if _fold_fingerprint(fs, model.holdout_cycles) != model.fit_fingerprint:
            raise LeakageError("training-side transform fed data that is not the fit fold")
    xn = apply_cycle_normalize(fs.values, fs.cycle_index, model.cycle_stats,
                               model.config.eps, allow_self_stats=not for_training)
    xd = apply_detrend(xn, fs.temperature_c, model.beta)
    sel = xd[:, model.mask]
    return (sel - model.scaler_mean) / model.scaler_std


# -- serialization --------------------------------------------------------------

def save_model(model: DriftPipelineModel, path: str | Path) -> None:
    obj = {
        "version": MODEL_VERSION,
        "config": {"detrend_degree": model.config.detrend_degree,
                   "k_sel": model.config.k_sel, "eps": model.config.eps},
        "cycle_stats": {str(c): {"mu": mu.tolist(), "sd": sd.tolist()}
                        for c, (mu, sd) in sorted(model.cycle_stats.items())},
        "beta": model.beta.tolist(),
        "mask": model.mask.tolist(),
        "scaler_mean": model.scaler_mean.tolist(),
        "scaler_std": model.scaler_std.tolist(),
        "train_cycles": list(model.train_cycles),
        "holdout_cycles": list(model.holdout_cycles),
        "fit_fingerprint": model.fit_fingerprint,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def load_model(path: str | Path) -> DriftPipelineModel:
    obj = json.loads(Path(path).read_text())
    if obj["version"] != MODEL_VERSION:
        raise DriftError(f"unsupported drift model version {obj['version']}")
    model = DriftPipelineModel(
        config=DriftConfig(**obj["config"]),
        cycle_stats={int(c): (np.array(v["mu"]), np.array(v["sd"]))
                     for c, v in obj["cycle_stats"].items()},
        beta=np.array(obj["beta"]),
        mask=np.array(obj["mask"], dtype=np.int64),
        scaler_mean=np.array(obj["scaler_mean"]),
        scaler_std=np.array(obj["scaler_std"]),
        train_cycles=tuple(obj["train_cycles"]),
        holdout_cycles=tuple(obj["holdout_cycles"]),
        fit_fingerprint=obj["fit_fingerprint"],
    )
    model.validate()
    return model
