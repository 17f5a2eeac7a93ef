"""Synthetic multichannel recordings with sparse transient events.

Normal recordings are pure stationary background.  Abnormal recordings
carry one or more short oscillatory bursts at a frequency well away from
the background band, so the recording label is exact and every window's
ground truth (does it contain an event or not) is known.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal.windows import tukey

from . import ABNORMAL, LABELS, NORMAL
from .errors import ConfigurationError, FileFormatError

TWOPI = 2.0 * np.pi


@dataclass(frozen=True)
class BackgroundSpectrum:
    """Sum of ``n_components`` sinusoids drawn in ``band_hz`` plus white noise."""

    band_hz: tuple[float, float] = (1.0, 12.0)
    n_components: int = 8
    component_amplitude: float = 1.0
    white_noise_std: float = 0.5

    @property
    def rms(self) -> float:
        return float(
            np.sqrt(self.n_components * self.component_amplitude**2 / 2.0 + self.white_noise_std**2)
        )


@dataclass(frozen=True)
class GeneratorConfig:
    sample_rate_hz: float = 100.0
    channels: int = 4
    duration_s: float = 1320.0
    n_normal_train: int = 200
    n_abnormal_train: int = 200
    n_normal_test: int = 50
    n_abnormal_test: int = 50
    event_rate_per_recording: float = 2.0
    event_duration_s: float = 5.0
    event_snr: float = 3.0
    event_freq_hz: float = 25.0
    background_spectrum: BackgroundSpectrum = field(default_factory=BackgroundSpectrum)
    rng_seed: int = 0
    # windowing needs start offset + longest window to fit
    max_window_len_s: float = 600.0

    def validate(self) -> "GeneratorConfig":
        nyquist = self.sample_rate_hz / 2.0
        bg = self.background_spectrum
        checks = [
            (self.sample_rate_hz > 0, "sample_rate_hz must be positive"),
            (self.channels >= 1, "channels must be positive"),
            (self.duration_s > 0, "duration_s must be positive"),
            (
                self.duration_s >= 60.0 + self.max_window_len_s,
                f"duration_s={self.duration_s} is shorter than 60 s + the largest window "
                f"({self.max_window_len_s} s)",
            ),
            (
                min(self.n_normal_train, self.n_abnormal_train, self.n_normal_test, self.n_abnormal_test)
                >= 0,
                "recording counts must be non-negative",
            ),
            (self.event_rate_per_recording > 0, "event_rate_per_recording must be positive"),
            (
                0 < self.event_duration_s <= self.duration_s,
                "event_duration_s must be positive and fit in the recording",
            ),
            (self.event_snr > 0, "event_snr must be positive"),
            (0 < self.event_freq_hz < nyquist, "event_freq_hz must lie in (0, fs/2)"),
            (0 <= bg.band_hz[0] < bg.band_hz[1] < nyquist, "background band must lie in [0, fs/2)"),
            (
                not bg.band_hz[0] <= self.event_freq_hz <= bg.band_hz[1],
                "event_freq_hz must lie outside the background band",
            ),
            (bg.n_components >= 0, "background n_components must be non-negative"),
            (bg.component_amplitude >= 0 and bg.white_noise_std >= 0, "background amplitudes must be >= 0"),
            (bg.rms > 0, "background must have non-zero power"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)
        return self

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def event_band_hz(self) -> tuple[float, float]:
        half = 5.0
        return (
            max(self.event_freq_hz - half, 0.0),
            min(self.event_freq_hz + half, self.sample_rate_hz / 2.0),
        )


@dataclass(frozen=True)
class EventAnnotation:
    onset_s: float
    duration_s: float
    kind: str = "burst"

    @property
    def end_s(self) -> float:
        return self.onset_s + self.duration_s


@dataclass(eq=False)
class Recording:
    """One recording.  ``events`` is None when the data carries no annotations."""

    id: str
    sample_rate_hz: float
    samples: np.ndarray
    label: str
    events: list[EventAnnotation] | None = None

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate_hz


def _event_count(rng: np.random.Generator, mean: float) -> int:
    # Poisson, rejection-sampled to >= 1
    while True:
        k = int(rng.poisson(mean))
        if k >= 1:
            return k


def _background(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    bg = cfg.background_spectrum
    n = cfg.n_samples
    t = np.arange(n) / cfg.sample_rate_hz
    out = np.empty((cfg.channels, n))
    for ch in range(cfg.channels):
        freqs = rng.uniform(bg.band_hz[0], bg.band_hz[1], size=bg.n_components)
        phases = rng.uniform(0.0, TWOPI, size=bg.n_components)
        sig = rng.standard_normal(n) * bg.white_noise_std
        for f, ph in zip(freqs, phases):
            sig += bg.component_amplitude * np.sin(TWOPI * f * t + ph)
        out[ch] = sig
    return out


def _burst(cfg: GeneratorConfig, n: int, phase: float) -> np.ndarray:
    """Tapered oscillation whose RMS over its span is ``event_snr`` x background RMS."""
    envelope = tukey(n, alpha=0.25) if n > 1 else np.ones(1)
    t = np.arange(n) / cfg.sample_rate_hz
    carrier = np.sin(TWOPI * cfg.event_freq_hz * t + phase)
    shape = envelope * carrier
    rms = np.sqrt(np.mean(shape**2))
    if rms == 0:
        return shape
    return shape * (cfg.event_snr * cfg.background_spectrum.rms / rms)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    # events and background use independent streams so annotations are cheap to recompute
    ev, bg = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(ev), np.random.default_rng(bg)


def _draw_events(cfg: GeneratorConfig, label: str, rng: np.random.Generator):
    """Event onsets (sample index) and per-channel burst phases."""
    if label != ABNORMAL:
        return []
    fs = cfg.sample_rate_hz
    n_event = max(int(round(cfg.event_duration_s * fs)), 1)
    latest = cfg.duration_s - cfg.event_duration_s
    draws = []
    for _ in range(_event_count(rng, cfg.event_rate_per_recording)):
        start = int(np.floor(rng.uniform(0.0, latest) * fs))
        start = min(start, cfg.n_samples - n_event)
        draws.append((start, n_event, rng.uniform(0.0, TWOPI, size=cfg.channels)))
    return draws


def _annotations(cfg: GeneratorConfig, draws) -> list[EventAnnotation]:
    fs = cfg.sample_rate_hz
    return sorted(
        (EventAnnotation(onset_s=start / fs, duration_s=n / fs) for start, n, _ in draws),
        key=lambda e: e.onset_s,
    )


def generate_events(cfg: GeneratorConfig, label: str, seed: int) -> list[EventAnnotation]:
    """The event list :func:`generate_recording` would produce, without the samples."""
    cfg.validate()
    ev_rng, _ = _streams(seed)
    return _annotations(cfg, _draw_events(cfg, label, ev_rng))


def generate_recording(cfg: GeneratorConfig, label: str, seed: int, recording_id: str | None = None) -> Recording:
    cfg.validate()
    if label not in LABELS:
        raise ConfigurationError(f"label must be one of {LABELS}, got {label!r}")
    ev_rng, bg_rng = _streams(seed)
    draws = _draw_events(cfg, label, ev_rng)
    samples = _background(cfg, bg_rng)
    for start, n_event, phases in draws:
        for ch in range(cfg.channels):
            samples[ch, start : start + n_event] += _burst(cfg, n_event, phases[ch])
    rid = recording_id if recording_id is not None else f"rec-{seed}"
    return Recording(
        id=rid,
        sample_rate_hz=cfg.sample_rate_hz,
        samples=samples,
        label=label,
        events=_annotations(cfg, draws),
    )


@dataclass(frozen=True)
class RecordingHeader:
    """Everything about a recording except its samples."""

    id: str
    sample_rate_hz: float
    duration_s: float
    label: str
    events: list[EventAnnotation] | None


class RecordingSet(Sequence):
    """Lazily generated recordings of one split.

    Each element is rebuilt from its seed on access, so a full-size
    dataset never has to sit in memory.
    """

    def __init__(self, cfg: GeneratorConfig, split: str, specs: list[tuple[str, str, int]]):
        self.cfg = cfg
        self.split = split
        self._specs = specs

    def __len__(self) -> int:
        return len(self._specs)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        rid, label, seed = self._specs[i]
        return generate_recording(self.cfg, label, seed, recording_id=rid)

    def header(self, i: int) -> RecordingHeader:
        rid, label, seed = self._specs[i]
        return RecordingHeader(
            id=rid,
            sample_rate_hz=self.cfg.sample_rate_hz,
            duration_s=self.cfg.n_samples / self.cfg.sample_rate_hz,
            label=label,
            events=generate_events(self.cfg, label, seed),
        )

    def headers(self) -> list[RecordingHeader]:
        return [self.header(i) for i in range(len(self))]

    @property
    def ids(self) -> list[str]:
        return [s[0] for s in self._specs]

    @property
    def labels(self) -> list[str]:
        return [s[1] for s in self._specs]


def _split_specs(cfg: GeneratorConfig, split: str, split_code: int, n_normal: int, n_abnormal: int):
    specs = []
    labels = [NORMAL] * n_normal + [ABNORMAL] * n_abnormal
    for i, label in enumerate(labels):
        seed = int(np.random.SeedSequence([cfg.rng_seed, split_code, i]).generate_state(1)[0])
        specs.append((f"{split}-{i:04d}", label, seed))
    return specs


def generate_dataset(cfg: GeneratorConfig) -> tuple[RecordingSet, RecordingSet]:
    """Train and test splits; ids are ``train-NNNN`` / ``test-NNNN``, normals first."""
    cfg.validate()
    train = RecordingSet(cfg, "train", _split_specs(cfg, "train", 0, cfg.n_normal_train, cfg.n_abnormal_train))
    test = RecordingSet(cfg, "test", _split_specs(cfg, "test", 1, cfg.n_normal_test, cfg.n_abnormal_test))
    return train, test


# --- on-disk format ------------------------------------------------------------
#
# <id>.meta   UTF-8 "key=value" lines: id, fs, channels, label, n_samples and
#             events as "onset,duration" pairs separated by ';' (empty when
#             none, key absent when the recording is unannotated).
# <id>.csv    header ch0,ch1,...; one row per sample, '.' decimal, 17 sig. digits.


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_recording(rec: Recording, directory) -> tuple[Path, Path]:
    from .formats import atomic_write_text

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = [
        f"id={rec.id}",
        f"fs={_fmt(rec.sample_rate_hz)}",
        f"channels={rec.channels}",
        f"label={rec.label}",
        f"n_samples={rec.samples.shape[1]}",
    ]
    if rec.events is not None:
        meta.append("events=" + ";".join(f"{_fmt(e.onset_s)},{_fmt(e.duration_s)}" for e in rec.events))
    meta_path = directory / f"{rec.id}.meta"
    csv_path = directory / f"{rec.id}.csv"
    header = ",".join(f"ch{c}" for c in range(rec.channels))
    body = "\n".join(",".join(_fmt(v) for v in row) for row in rec.samples.T)
    atomic_write_text(csv_path, header + "\n" + body + "\n")
    atomic_write_text(meta_path, "\n".join(meta) + "\n")
    return meta_path, csv_path


def load_recording(meta_path) -> Recording:
    meta_path = Path(meta_path)
    fields: dict[str, str] = {}
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FileFormatError(meta_path, f"expected key=value, got {line!r}", row=lineno)
        fields[key.strip()] = value.strip()
    try:
        rid = fields["id"]
        fs = float(fields["fs"])
        channels = int(fields["channels"])
        label = fields["label"]
    except (KeyError, ValueError) as exc:
        raise FileFormatError(meta_path, f"missing or invalid field: {exc}") from None
    if label not in LABELS:
        raise FileFormatError(meta_path, f"invalid label {label!r}")
    events = None
    if "events" in fields:
        events = []
        for pair in filter(None, fields["events"].split(";")):
            try:
                onset, dur = (float(v) for v in pair.split(","))
            except ValueError:
                raise FileFormatError(meta_path, f"invalid event {pair!r}") from None
            events.append(EventAnnotation(onset, dur))
    csv_path = meta_path.with_suffix(".csv")
    try:
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except (OSError, ValueError) as exc:
        raise FileFormatError(csv_path, f"cannot read samples: {exc}") from None
    if data.shape[1] != channels:
        raise FileFormatError(csv_path, f"expected {channels} columns, got {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        raise FileFormatError(csv_path, "non-finite sample")
    return Recording(id=rid, sample_rate_hz=fs, samples=np.ascontiguousarray(data.T), label=label, events=events)


def load_recordings(directory) -> list[Recording]:
    directory = Path(directory)
    return [load_recording(p) for p in sorted(directory.glob("*.meta"))]


def replace(cfg: GeneratorConfig, **changes) -> GeneratorConfig:
    """``dataclasses.replace`` that also accepts background-spectrum fields."""
    bg_fields = {f.name for f in dataclasses.fields(BackgroundSpectrum)}
    bg_changes = {k: changes.pop(k) for k in list(changes) if k in bg_fields}
    if bg_changes:
        changes["background_spectrum"] = dataclasses.replace(cfg.background_spectrum, **bg_changes)
    return dataclasses.replace(cfg, **changes)
