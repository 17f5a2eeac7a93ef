"""Second stage: fuse a recording's window scores into one label.

Three input encodings feed a learned arbiter:

* ``raw``: scores in window order, zero-padded to ``n_max``.  Padding
  reads as "confidently normal"; that is the conventional choice and is
  kept deliberately.
* ``histogram``: fraction of windows per equal-width bin on [0, 1].  Bin
  ``i`` is ``[i/n, (i+1)/n)``, the last bin also takes 1.0.
* ``hybrid``: raw followed by histogram.

``mean`` and ``threshold`` are the non-learned baselines.  Every tie
resolves to abnormal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ABNORMAL, NORMAL, label_to_int
from .errors import ConfigurationError, DataError, DimensionError
from .firststage import RecordingScores
from .neuralnet import MlpConfig, MlpModel, TrainConfig, forward, train

KINDS = ("raw", "histogram", "hybrid")
INDETERMINATE = "indeterminate"
N_MAX = 20
N_BINS = 10


@dataclass(frozen=True, eq=False)
class ArbitrationInput:
    kind: str
    values: np.ndarray
    n_max: int = N_MAX
    n_bins: int = N_BINS


@dataclass(frozen=True)
class ThresholdConfig:
    t_upper: float = 0.9
    t_lower: float = 0.1

    def __post_init__(self):
        if not (0 < self.t_lower < 1 and 0 < self.t_upper < 1):
            raise ConfigurationError("thresholds must lie in (0, 1)")
        if self.t_lower > self.t_upper:
            raise ConfigurationError(f"t_lower={self.t_lower} exceeds t_upper={self.t_upper}")


def _scores(scores) -> np.ndarray:
    s = scores.scores if isinstance(scores, RecordingScores) else np.asarray(scores, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0:
        raise DataError("empty score list")
    return s


def input_len(kind: str, n_max: int = N_MAX, n_bins: int = N_BINS) -> int:
    if kind == "raw":
        return n_max
    if kind == "histogram":
        return n_bins
    if kind == "hybrid":
        return n_max + n_bins
    raise ConfigurationError(f"unknown arbitration input kind {kind!r}; expected one of {KINDS}")


def preprocess_raw(scores, n_max: int = N_MAX) -> ArbitrationInput:
    s = _scores(scores)
    if s.size > n_max:
        raise DimensionError(f"{s.size} window scores exceed n_max={n_max}")
    values = np.zeros(n_max)
    values[: s.size] = s
    return ArbitrationInput("raw", values, n_max=n_max)


def bin_index(s, n_bins: int = N_BINS):
    """Bin of each score against the edges ``i / n_bins`` (computed in float)."""
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, s, side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


def preprocess_histogram(scores, n_bins: int = N_BINS) -> ArbitrationInput:
    s = _scores(scores)
    counts = np.bincount(bin_index(s, n_bins), minlength=n_bins)
    return ArbitrationInput("histogram", counts / s.size, n_bins=n_bins)


def preprocess_hybrid(scores, n_max: int = N_MAX, n_bins: int = N_BINS) -> ArbitrationInput:
    raw = preprocess_raw(scores, n_max)
    hist = preprocess_histogram(scores, n_bins)
    return ArbitrationInput("hybrid", np.concatenate([raw.values, hist.values]), n_max, n_bins)


def preprocess(scores, kind: str, n_max: int = N_MAX, n_bins: int = N_BINS) -> ArbitrationInput:
    if kind == "raw":
        return preprocess_raw(scores, n_max)
    if kind == "histogram":
        return preprocess_histogram(scores, n_bins)
    if kind == "hybrid":
        return preprocess_hybrid(scores, n_max, n_bins)
    raise ConfigurationError(f"unknown arbitration input kind {kind!r}; expected one of {KINDS}")


def mean_arbitrate(scores) -> str:
    """Abnormal iff the mean window probability is >= 0.5 (padding never enters)."""
    s = _scores(scores)
    return ABNORMAL if math.fsum(s) / s.size >= 0.5 else NORMAL


def threshold_arbitrate(scores, tcfg: ThresholdConfig = ThresholdConfig()) -> str:
    s = _scores(scores)
    if tcfg.t_lower > tcfg.t_upper:
        raise ConfigurationError("t_lower exceeds t_upper")
    if np.any(s > tcfg.t_upper):
        return ABNORMAL
    if np.all(s < tcfg.t_lower):
        return NORMAL
    return INDETERMINATE


def threshold_or_mean(scores, tcfg: ThresholdConfig = ThresholdConfig()) -> str:
    """Threshold rule; indeterminate recordings fall back to the mean rule."""
    out = threshold_arbitrate(scores, tcfg)
    return mean_arbitrate(scores) if out == INDETERMINATE else out


def _design(train_scores: Sequence[RecordingScores], kind: str, n_max: int, n_bins: int):
    x = np.stack([preprocess(rs, kind, n_max, n_bins).values for rs in train_scores])
    y = np.array([label_to_int(rs.true_label) for rs in train_scores])
    return x, y


def fold_standardization(model: MlpModel, mean: np.ndarray, std: np.ndarray) -> MlpModel:
    """Absorb ``(x - mean) / std`` into the first layer so the model takes raw inputs."""
    w0 = model.weights[0] / std
    b0 = model.biases[0] - w0 @ mean
    return MlpModel(model.config, (w0,) + model.weights[1:], (b0,) + model.biases[1:])


def train_arbitration(
    train_scores: Sequence[RecordingScores],
    kind: str,
    mcfg: MlpConfig,
    tcfg: TrainConfig,
    n_max: int = N_MAX,
    n_bins: int = N_BINS,
    standardize: bool = True,
) -> MlpModel:
    """Fit an arbiter on per-recording (not inherited) labels.

    With ``standardize`` the network is trained on z-scored inputs and
    the scaling is folded back into the first layer afterwards, so the
    returned model always consumes the plain encoding.
    """
    expected = input_len(kind, n_max, n_bins)
    if mcfg.input_len != expected:
        raise ConfigurationError(f"{kind} input has length {expected}, but MlpConfig.input_len={mcfg.input_len}")
    if not train_scores:
        raise DataError("no training recordings for arbitration")
    x, y = _design(train_scores, kind, n_max, n_bins)
    if len(np.unique(y)) < 2:
        raise DataError("arbitration training needs recordings of both classes")
    if not standardize:
        return train(mcfg, tcfg, x, y)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return fold_standardization(train(mcfg, tcfg, (x - mean) / std, y), mean, std)


def arbitrate(model: MlpModel, scores, kind: str, n_max: int = N_MAX, n_bins: int = N_BINS) -> str:
    x = preprocess(scores, kind, n_max, n_bins).values
    if x.size != model.config.input_len:
        raise DimensionError(f"{kind} input of length {x.size} does not fit model input {model.config.input_len}")
    probs, _ = forward(model, x)
    return ABNORMAL if probs[1] >= probs[0] else NORMAL


def arbitrate_many(model: MlpModel, scores: Sequence[RecordingScores], kind: str, n_max: int = N_MAX, n_bins: int = N_BINS) -> list[str]:
    if not scores:
        return []
    x = np.stack([preprocess(rs, kind, n_max, n_bins).values for rs in scores])
    probs, _ = forward(model, x)
    return [ABNORMAL if p[1] >= p[0] else NORMAL for p in probs]
