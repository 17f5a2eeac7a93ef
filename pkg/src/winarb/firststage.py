"""First stage: per-window abnormality probability from spectral features.

A desk-scale stand-in for a deep window classifier.  Each window is
reduced to band powers (periodogram), variance and peak amplitude per
channel, standardised with train-split statistics, and scored by an MLP
trained on the *inherited* window labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import periodogram

from . import label_to_int
from .errors import ConfigurationError, DataError, DimensionError
from .neuralnet import MlpConfig, MlpModel, TrainConfig, predict_proba, train
from .synthgen import GeneratorConfig, Recording
from .windowing import Window, WindowingConfig, segment

# emitted probabilities are kept strictly inside (0, 1)
SCORE_EPS = 1e-12


@dataclass(frozen=True)
class FeatureConfig:
    bands_hz: tuple[tuple[float, float], ...] = ((1.0, 12.0), (20.0, 30.0), (0.0, 50.0))
    include_variance: bool = True
    include_peak: bool = True

    @classmethod
    def from_generator(cls, gcfg: GeneratorConfig, **kw) -> "FeatureConfig":
        """Background band, event band and broadband for a generator config."""
        bands = (
            tuple(gcfg.background_spectrum.band_hz),
            gcfg.event_band_hz,
            (0.0, gcfg.sample_rate_hz / 2.0),
        )
        return cls(bands_hz=bands, **kw)

    @property
    def features_per_channel(self) -> int:
        return len(self.bands_hz) + int(self.include_variance) + int(self.include_peak)

    def check(self, fs: float) -> None:
        for lo, hi in self.bands_hz:
            if not 0 <= lo < hi <= fs / 2.0:
                raise ConfigurationError(
                    f"band ({lo:g}, {hi:g}) Hz must satisfy 0 <= lo < hi <= fs/2 = {fs / 2.0:g}"
                )


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise DimensionError(f"expected {self.mean.shape[0]} features, got {x.shape[-1]}")
        return (x - self.mean) / self.std


@dataclass(eq=False)
class RecordingScores:
    recording_id: str
    scores: np.ndarray
    true_label: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()

    def __len__(self) -> int:
        return self.scores.size

    def same_as(self, other: "RecordingScores") -> bool:
        return (
            self.recording_id == other.recording_id
            and self.true_label == other.true_label
            and np.array_equal(self.scores, other.scores)
        )


def _band_masks(freqs: np.ndarray, bands, fs: float):
    masks = []
    for lo, hi in bands:
        m = (freqs >= lo) & (freqs < hi)
        if hi == fs / 2.0:
            m |= freqs == hi
        masks.append(m)
    return masks


def extract_features_array(samples: np.ndarray, fs: float, fcfg: FeatureConfig) -> np.ndarray:
    """Features for ``samples`` of shape (..., channels, n); returns (..., channels * k)."""
    fcfg.check(fs)
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise DataError("window contains non-finite samples")
    freqs, psd = periodogram(samples, fs=fs, window="boxcar", detrend=False, scaling="density", axis=-1)
    df = freqs[1] - freqs[0] if freqs.size > 1 else fs
    feats = [psd[..., m].sum(axis=-1) * df for m in _band_masks(freqs, fcfg.bands_hz, fs)]
    if fcfg.include_variance:
        feats.append(samples.var(axis=-1))
    if fcfg.include_peak:
        feats.append(np.abs(samples).max(axis=-1))
    out = np.stack(feats, axis=-1)  # (..., channels, k)
    return out.reshape(out.shape[:-2] + (-1,))


def extract_features(window: Window, fcfg: FeatureConfig, fs: float | None = None) -> np.ndarray:
    if fs is None:
        fs = window.samples.shape[1] / window.length_s
    return extract_features_array(window.samples, fs, fcfg)


@dataclass(eq=False)
class WindowTable:
    """Features and bookkeeping for every window of a set of recordings."""

    features: np.ndarray  # (n_windows, n_features)
    recording_ids: list[str]
    recording_labels: list[str]
    window_recording: np.ndarray  # index into recording_ids
    window_index: np.ndarray
    contains_event: np.ndarray | None

    @property
    def labels(self) -> np.ndarray:
        """Inherited window labels as class indices."""
        rec_labels = np.array([label_to_int(l) for l in self.recording_labels], dtype=np.int64)
        return rec_labels[self.window_recording]

    def __len__(self) -> int:
        return self.features.shape[0]


def _recording_features(rec, wcfg: WindowingConfig, fcfg: FeatureConfig):
    windows = segment(rec, wcfg)
    stacked = np.stack([w.samples for w in windows])
    feats = extract_features_array(stacked, rec.sample_rate_hz, fcfg)
    flags = None if rec.events is None else [bool(w.contains_event) for w in windows]
    return feats, flags


def build_tables(
    recordings: Iterable[Recording], wcfgs: Sequence[WindowingConfig], fcfg: FeatureConfig
) -> list[WindowTable]:
    """One :class:`WindowTable` per windowing config, touching each recording once."""
    per_cfg = [dict(feats=[], rec=[], idx=[], flags=[]) for _ in wcfgs]
    ids, labels = [], []
    annotated = True
    for r, rec in enumerate(recordings):
        ids.append(rec.id)
        labels.append(rec.label)
        annotated &= rec.events is not None
        for acc, wcfg in zip(per_cfg, wcfgs):
            feats, flags = _recording_features(rec, wcfg, fcfg)
            acc["feats"].append(feats)
            acc["rec"].append(np.full(len(feats), r))
            acc["idx"].append(np.arange(len(feats)))
            acc["flags"].extend(flags or [])
    tables = []
    for acc in per_cfg:
        if not acc["feats"]:
            raise DataError("no recordings to tabulate")
        tables.append(
            WindowTable(
                features=np.concatenate(acc["feats"]),
                recording_ids=ids,
                recording_labels=labels,
                window_recording=np.concatenate(acc["rec"]),
                window_index=np.concatenate(acc["idx"]),
                contains_event=np.array(acc["flags"], dtype=bool) if annotated else None,
            )
        )
    return tables


def build_table(recordings: Iterable[Recording], wcfg: WindowingConfig, fcfg: FeatureConfig) -> WindowTable:
    return build_tables(recordings, [wcfg], fcfg)[0]


def fit_first_stage(
    features: np.ndarray, labels: np.ndarray, mcfg: MlpConfig, tcfg: TrainConfig
) -> tuple[MlpModel, Normalizer]:
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise DataError("first-stage training needs windows of both classes")
    if mcfg.input_len != features.shape[1]:
        raise ConfigurationError(
            f"MlpConfig.input_len={mcfg.input_len} but there are {features.shape[1]} features"
        )
    norm = Normalizer.fit(features)
    return train(mcfg, tcfg, norm(features), labels), norm


def train_first_stage(
    train_windows: Sequence[Window], fcfg: FeatureConfig, mcfg: MlpConfig, tcfg: TrainConfig
) -> tuple[MlpModel, Normalizer]:
    if not train_windows:
        raise DataError("no training windows")
    x = np.stack([extract_features(w, fcfg) for w in train_windows])
    y = np.array([label_to_int(w.inherited_label) for w in train_windows])
    return fit_first_stage(x, y, mcfg, tcfg)


def window_probabilities(model: MlpModel, normalizer: Normalizer, features: np.ndarray) -> np.ndarray:
    p = predict_proba(model, normalizer(features))[:, 1]
    return np.clip(p, SCORE_EPS, 1.0 - SCORE_EPS)


def score_table(model: MlpModel, normalizer: Normalizer, table: WindowTable) -> list[RecordingScores]:
    p = window_probabilities(model, normalizer, table.features)
    out = []
    for r, rid in enumerate(table.recording_ids):
        sel = table.window_recording == r
        order = np.argsort(table.window_index[sel], kind="stable")
        out.append(RecordingScores(rid, p[sel][order], table.recording_labels[r]))
    return out


def score_recording(
    model: MlpModel,
    normalizer: Normalizer,
    recording: Recording,
    wcfg: WindowingConfig,
    fcfg: FeatureConfig,
) -> RecordingScores:
    feats, _ = _recording_features(recording, wcfg, fcfg)
    return RecordingScores(recording.id, window_probabilities(model, normalizer, feats), recording.label)


def default_first_stage_mlp(n_features: int) -> MlpConfig:
    return MlpConfig(input_len=n_features, hidden_depth=1, hidden_len=10, activation="relu")
