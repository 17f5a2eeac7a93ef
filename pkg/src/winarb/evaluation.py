"""Metrics and the experiment grid (window lengths x seeds x arbiters)."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import ABNORMAL, label_to_int
from .arbitration import (
    KINDS,
    N_BINS,
    N_MAX,
    ThresholdConfig,
    arbitrate_many,
    input_len,
    mean_arbitrate,
    threshold_or_mean,
    train_arbitration,
)
from .errors import ConfigurationError, DataError, WinarbError
from .firststage import FeatureConfig, build_tables, fit_first_stage, score_table, window_probabilities
from .neuralnet import MlpConfig, TrainConfig
from .synthgen import GeneratorConfig, generate_dataset
from .windowing import CONVENTIONAL_LENGTHS_S, WindowingConfig, event_flags

log = logging.getLogger(__name__)

ALL_KINDS = ("none", "mean", "threshold") + KINDS
LEARNED_KINDS = KINDS
METRIC_NAMES = ("accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class Metrics:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    sensitivity: float | None
    specificity: float | None

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _as_int_labels(labels) -> np.ndarray:
    return np.array([label_to_int(l) if isinstance(l, str) else int(l) for l in labels], dtype=np.int64)


def compute_metrics(pred, truth) -> Metrics:
    """Confusion counts with abnormal as the positive class; undefined ratios are None."""
    p = _as_int_labels(pred)
    t = _as_int_labels(truth)
    if p.size != t.size:
        raise DataError(f"{p.size} predictions but {t.size} ground-truth labels")
    if p.size == 0:
        raise DataError("cannot compute metrics on zero items")
    tp = int(np.sum((p == 1) & (t == 1)))
    tn = int(np.sum((p == 0) & (t == 0)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    return Metrics(
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        accuracy=(tp + tn) / p.size,
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
    )


def arbiter_template(hidden_depth: int = 0, hidden_len: int = 10, activation: str = "relu") -> MlpConfig:
    """An MlpConfig for the grid; ``input_len`` is filled in per input kind."""
    return MlpConfig(input_len=1, hidden_depth=hidden_depth, hidden_len=hidden_len, activation=activation)


def parse_descriptor(text: str) -> MlpConfig:
    """Inverse of :meth:`MlpConfig.descriptor`: ``d0`` or ``d2-h10-gelu``."""
    parts = text.strip().split("-")
    try:
        if not parts[0].startswith("d"):
            raise ValueError
        depth = int(parts[0][1:])
        if depth == 0 and len(parts) == 1:
            return arbiter_template(0)
        if len(parts) != 3 or not parts[1].startswith("h"):
            raise ValueError
        return arbiter_template(depth, int(parts[1][1:]), parts[2])
    except (ValueError, IndexError):
        raise ConfigurationError(f"invalid MLP descriptor {text!r}; expected e.g. 'd0' or 'd1-h10-relu'") from None


@dataclass(frozen=True)
class ProtocolConfig:
    first_stage_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    arbitration_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    window_lengths_s: tuple[float, ...] = CONVENTIONAL_LENGTHS_S
    arbitration_kinds: tuple[str, ...] = ALL_KINDS
    mlp_grid: tuple[MlpConfig, ...] = (arbiter_template(0),)
    first_stage_mlp: MlpConfig = arbiter_template(1, 10, "relu")
    first_stage_train: TrainConfig = TrainConfig()
    arbitration_train: TrainConfig = TrainConfig(learning_rate=0.05)
    thresholds: ThresholdConfig = ThresholdConfig()
    windowing: WindowingConfig = WindowingConfig()
    n_max: int = N_MAX
    n_bins: int = N_BINS

    def __post_init__(self):
        for name in ("first_stage_seeds", "arbitration_seeds", "window_lengths_s", "arbitration_kinds", "mlp_grid"):
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must not be empty")
        unknown = set(self.arbitration_kinds) - set(ALL_KINDS)
        if unknown:
            raise ConfigurationError(f"unknown arbitration kinds {sorted(unknown)}; expected a subset of {ALL_KINDS}")
        if len(set(self.mlp_grid)) != len(self.mlp_grid):
            raise ConfigurationError("mlp_grid contains duplicates")

    def windowing_for(self, length_s: float) -> WindowingConfig:
        return dataclasses.replace(self.windowing, window_len_s=float(length_s))


@dataclass(frozen=True)
class ResultRow:
    window_len_s: float
    arbitration_kind: str
    mlp: str
    first_stage_seed: int
    arbitration_seed: int | None
    level: str
    metrics: Metrics | None
    status: str = "ok"
    message: str = ""

    def sort_key(self):
        return (
            self.window_len_s,
            ALL_KINDS.index(self.arbitration_kind) if self.arbitration_kind in ALL_KINDS else len(ALL_KINDS),
            self.arbitration_kind,
            self.mlp,
            self.first_stage_seed,
            -1 if self.arbitration_seed is None else self.arbitration_seed,
        )


def expected_cells(pcfg: ProtocolConfig) -> list[tuple]:
    """Every (window length, kind, mlp, first seed, arbitration seed) the protocol must emit."""
    cells = []
    for length in pcfg.window_lengths_s:
        for fs in pcfg.first_stage_seeds:
            for kind in pcfg.arbitration_kinds:
                if kind in LEARNED_KINDS:
                    for m in pcfg.mlp_grid:
                        for a in pcfg.arbitration_seeds:
                            cells.append((float(length), kind, m.descriptor(), fs, a))
                else:
                    cells.append((float(length), kind, "", fs, None))
    return cells


def _failed(length, kind, mlp, fs, a, exc) -> ResultRow:
    level = "window" if kind == "none" else "recording"
    return ResultRow(float(length), kind, mlp, fs, a, level, None, status="failed", message=f"{type(exc).__name__}: {exc}")


def _evaluate_seed(pcfg: ProtocolConfig, length: float, fs_seed: int, table_tr, table_te) -> list[ResultRow]:
    rows: list[ResultRow] = []
    kinds = pcfg.arbitration_kinds
    mcfg = dataclasses.replace(pcfg.first_stage_mlp, input_len=table_tr.features.shape[1])
    tcfg = dataclasses.replace(pcfg.first_stage_train, seed=fs_seed)
    try:
        model, norm = fit_first_stage(table_tr.features, table_tr.labels, mcfg, tcfg)
    except (WinarbError, ArithmeticError) as exc:
        return [_failed(length, *cell[1:], exc) for cell in expected_cells(
            dataclasses.replace(pcfg, window_lengths_s=(length,), first_stage_seeds=(fs_seed,))
        )]

    if "none" in kinds:
        p = window_probabilities(model, norm, table_te.features)
        pred = (p >= 0.5).astype(np.int64)
        rows.append(ResultRow(length, "none", "", fs_seed, None, "window", compute_metrics(pred, table_te.labels)))

    scores_tr = score_table(model, norm, table_tr)
    scores_te = score_table(model, norm, table_te)
    truth = [rs.true_label for rs in scores_te]

    if "mean" in kinds:
        pred = [mean_arbitrate(rs) for rs in scores_te]
        rows.append(ResultRow(length, "mean", "", fs_seed, None, "recording", compute_metrics(pred, truth)))
    if "threshold" in kinds:
        pred = [threshold_or_mean(rs, pcfg.thresholds) for rs in scores_te]
        rows.append(ResultRow(length, "threshold", "", fs_seed, None, "recording", compute_metrics(pred, truth)))

    for kind in (k for k in kinds if k in LEARNED_KINDS):
        for template in pcfg.mlp_grid:
            amcfg = dataclasses.replace(template, input_len=input_len(kind, pcfg.n_max, pcfg.n_bins))
            for a_seed in pcfg.arbitration_seeds:
                try:
                    arb = train_arbitration(
                        scores_tr, kind, amcfg, dataclasses.replace(pcfg.arbitration_train, seed=a_seed),
                        pcfg.n_max, pcfg.n_bins,
                    )
                    pred = arbitrate_many(arb, scores_te, kind, pcfg.n_max, pcfg.n_bins)
                    rows.append(
                        ResultRow(length, kind, amcfg.descriptor(), fs_seed, a_seed, "recording", compute_metrics(pred, truth))
                    )
                except (WinarbError, ArithmeticError) as exc:
                    rows.append(_failed(length, kind, amcfg.descriptor(), fs_seed, a_seed, exc))
    return rows


def run_protocol(
    pcfg: ProtocolConfig,
    gcfg: GeneratorConfig,
    fcfg: FeatureConfig | None = None,
    datasets=None,
) -> list[ResultRow]:
    """Run the full grid on a synthetic dataset (fixed across seeds).

    ``datasets`` may supply ``(train, test)`` recordings instead of
    generating them from ``gcfg``.
    """
    if fcfg is None:
        fcfg = FeatureConfig.from_generator(gcfg)
    if datasets is None:
        gcfg = dataclasses.replace(gcfg, max_window_len_s=float(max(pcfg.window_lengths_s)))
        datasets = generate_dataset(gcfg)
    train, test = datasets
    wcfgs = [pcfg.windowing_for(length) for length in pcfg.window_lengths_s]
    log.info("extracting features for %d + %d recordings", len(train), len(test))
    tables_tr = build_tables(train, wcfgs, fcfg)
    tables_te = build_tables(test, wcfgs, fcfg)

    rows: list[ResultRow] = []
    for length, ttr, tte in zip(pcfg.window_lengths_s, tables_tr, tables_te):
        for fs_seed in pcfg.first_stage_seeds:
            log.info("window %g s, first-stage seed %d", length, fs_seed)
            rows.extend(_evaluate_seed(pcfg, float(length), fs_seed, ttr, tte))
    rows.sort(key=ResultRow.sort_key)
    return rows


@dataclass(frozen=True)
class SummaryRow:
    window_len_s: float
    arbitration_kind: str
    mlp: str
    level: str
    n_runs: int
    n_failed: int
    stats: dict = field(default_factory=dict)  # metric -> (mean, min, max, std) or None


def _describe(values: list[float]):
    if not values:
        return None
    a = np.asarray(values, dtype=np.float64)
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return float(a.mean()), float(a.min()), float(a.max()), std


def summarize(rows: Iterable[ResultRow]) -> list[SummaryRow]:
    """Mean, min, max and sample std of each metric per (window length, kind, mlp, level) cell."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.window_len_s, r.arbitration_kind, r.mlp, r.level), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: ResultRow(k[0], k[1], k[2], 0, None, k[3], None).sort_key()):
        members = groups[key]
        ok = [r.metrics for r in members if r.status == "ok" and r.metrics is not None]
        stats = {
            name: _describe([getattr(m, name) for m in ok if getattr(m, name) is not None])
            for name in METRIC_NAMES
        }
        out.append(SummaryRow(*key, n_runs=len(members), n_failed=len(members) - len(ok), stats=stats))
    return out


@dataclass(frozen=True)
class NoiseRow:
    window_len_s: float
    n_abnormal_windows: int
    n_clean_windows: int

    @property
    def label_noise_rate(self) -> float:
        return self.n_clean_windows / self.n_abnormal_windows if self.n_abnormal_windows else 0.0


def noise_sweep(recordings: Sequence, lengths: Sequence[float], windowing: WindowingConfig = WindowingConfig()) -> list[NoiseRow]:
    """Label-noise rate of abnormal recordings for each window length.

    Accepts anything with ``label``, ``events``, ``duration_s`` and ``id``
    (recordings or sample-free headers).
    """
    out = []
    for length in lengths:
        wcfg = dataclasses.replace(windowing, window_len_s=float(length))
        total = clean = 0
        for rec in recordings:
            if rec.label != ABNORMAL:
                continue
            flags = event_flags(rec, wcfg)
            total += len(flags)
            clean += sum(not f for f in flags)
        out.append(NoiseRow(float(length), total, clean))
    return out


def mean_metric(rows: Iterable[ResultRow], name: str, **filters) -> float:
    """Average of one metric over the ok rows matching ``filters`` (field=value)."""
    vals = [
        getattr(r.metrics, name)
        for r in rows
        if r.status == "ok"
        and r.metrics is not None
        and all(getattr(r, k) == v for k, v in filters.items())
        and getattr(r.metrics, name) is not None
    ]
    if not vals:
        raise DataError(f"no rows match {filters}")
    return float(np.mean(vals))
