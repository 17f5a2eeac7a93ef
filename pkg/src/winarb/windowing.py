"""Fixed-length, non-overlapping segmentation with inherited labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import ABNORMAL
from .errors import ConfigurationError, SegmentationError, UnsupportedInputError
from .synthgen import EventAnnotation, Recording

CONVENTIONAL_LENGTHS_S = (60.0, 180.0, 300.0, 400.0, 600.0)


@dataclass(frozen=True)
class WindowingConfig:
    window_len_s: float = 60.0
    start_offset_s: float = 60.0
    max_span_s: float = 1200.0
    max_windows: int = 20

    def __post_init__(self):
        if not self.window_len_s > 0:
            raise ConfigurationError(f"window_len_s must be positive, got {self.window_len_s}")
        if not self.start_offset_s >= 0:
            raise ConfigurationError(f"start_offset_s must be >= 0, got {self.start_offset_s}")
        if not self.max_span_s > 0 or int(self.max_windows) < 1:
            raise ConfigurationError("max_span_s and max_windows must be positive")
        if self.window_len_s > self.max_span_s:
            raise ConfigurationError(
                f"window_len_s={self.window_len_s} exceeds max_span_s={self.max_span_s}"
            )


@dataclass(eq=False)
class Window:
    recording_id: str
    index: int
    start_s: float
    length_s: float
    samples: np.ndarray
    inherited_label: str
    contains_event: bool | None = None

    @property
    def end_s(self) -> float:
        return self.start_s + self.length_s


def overlaps(event: EventAnnotation, start_s: float, end_s: float) -> bool:
    """True when the event and [start_s, end_s) share a positive duration."""
    return min(event.end_s, end_s) - max(event.onset_s, start_s) > 0


def window_spans(duration_s: float, cfg: WindowingConfig) -> list[tuple[float, float]]:
    """(start, end) of each window for a recording of the given duration."""
    usable = min(duration_s, cfg.start_offset_s + cfg.max_span_s) - cfg.start_offset_s
    # tolerate float noise in durations derived from sample counts
    count = min(cfg.max_windows, math.floor(usable / cfg.window_len_s + 1e-9)) if usable > 0 else 0
    return [
        (cfg.start_offset_s + i * cfg.window_len_s, cfg.start_offset_s + (i + 1) * cfg.window_len_s)
        for i in range(count)
    ]


def segment(recording: Recording, cfg: WindowingConfig) -> list[Window]:
    fs = recording.sample_rate_hz
    spans = window_spans(recording.duration_s, cfg)
    if not spans:
        raise SegmentationError(
            recording.id,
            f"duration {recording.duration_s:g} s is shorter than start offset "
            f"{cfg.start_offset_s:g} s + window length {cfg.window_len_s:g} s",
        )
    n_win = int(round(cfg.window_len_s * fs))
    windows = []
    for i, (start, end) in enumerate(spans):
        a = int(round(start * fs))
        contains = None
        if recording.events is not None:
            contains = any(overlaps(e, start, end) for e in recording.events)
        windows.append(
            Window(
                recording_id=recording.id,
                index=i,
                start_s=start,
                length_s=cfg.window_len_s,
                samples=recording.samples[:, a : a + n_win],
                inherited_label=recording.label,
                contains_event=contains,
            )
        )
    return windows


def event_flags(recording: Recording, cfg: WindowingConfig) -> list[bool]:
    """Per-window contains-event flags without touching the samples."""
    if recording.events is None:
        raise UnsupportedInputError(f"recording {recording.id!r} has no event annotations")
    return [
        any(overlaps(e, start, end) for e in recording.events)
        for start, end in window_spans(recording.duration_s, cfg)
    ]


def label_noise_rate(recordings: Iterable[Recording], cfg: WindowingConfig) -> float:
    """Fraction of abnormal-recording windows that contain no event (0 if there are none)."""
    clean = total = 0
    for rec in recordings:
        if rec.events is None:
            raise UnsupportedInputError(f"recording {rec.id!r} has no event annotations")
        if rec.label != ABNORMAL:
            continue
        if not window_spans(rec.duration_s, cfg):
            raise SegmentationError(rec.id, "too short for a single window")
        flags = event_flags(rec, cfg)
        total += len(flags)
        clean += sum(not f for f in flags)
    return clean / total if total else 0.0
