"""Text interchange formats and atomic file writes.

Score file (UTF-8 CSV, '.' decimal, 17 significant digits)::

    recording_id,window_index,p_abnormal,true_label
    rec-a,0,0.47123456789012345,abnormal

Rows are sorted by (recording_id, window_index); window indices of a
recording run 0..k-1 without gaps.  ``p_abnormal`` must lie in [0, 1].

Results file: one :class:`~winarb.evaluation.ResultRow` per line, columns
as in :data:`RESULT_COLUMNS`; absent values are empty fields.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from . import LABELS
from .errors import FileFormatError
from .evaluation import METRIC_NAMES, Metrics, ResultRow, SummaryRow
from .firststage import RecordingScores

SCORE_COLUMNS = ("recording_id", "window_index", "p_abnormal", "true_label")
RESULT_COLUMNS = (
    "window_len_s",
    "arbitration_kind",
    "mlp",
    "first_stage_seed",
    "arbitration_seed",
    "level",
    "status",
    "n",
    "tp",
    "tn",
    "fp",
    "fn",
    "accuracy",
    "sensitivity",
    "specificity",
    "message",
)


def fmt_float(v: float | None) -> str:
    return "" if v is None else format(float(v), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# --- scores -----------------------------------------------------------------------


def dumps_scores(scores: Iterable[RecordingScores]) -> str:
    rows = []
    for rs in sorted(scores, key=lambda r: r.recording_id):
        for i, p in enumerate(rs.scores):
            rows.append((rs.recording_id, str(i), fmt_float(p), rs.true_label))
    return _csv_text(SCORE_COLUMNS, rows)


def write_scores(path, scores: Iterable[RecordingScores]) -> None:
    atomic_write_text(path, dumps_scores(scores))


def loads_scores(text: str, source: str = "<string>") -> list[RecordingScores]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise FileFormatError(source, "missing header", row=1)
    if tuple(h.strip() for h in header) != SCORE_COLUMNS:
        raise FileFormatError(source, f"header must be {','.join(SCORE_COLUMNS)}", row=1)

    grouped: dict[str, dict] = {}
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(SCORE_COLUMNS):
            raise FileFormatError(source, f"expected {len(SCORE_COLUMNS)} columns, got {len(row)}", row=rowno)
        rid, idx_text, p_text, label = (c.strip() for c in row)
        if not rid:
            raise FileFormatError(source, "empty recording_id", row=rowno)
        try:
            idx = int(idx_text)
        except ValueError:
            raise FileFormatError(source, f"non-integer window_index {idx_text!r}", row=rowno) from None
        if idx < 0:
            raise FileFormatError(source, f"negative window_index {idx}", row=rowno)
        try:
            p = float(p_text)
        except ValueError:
            raise FileFormatError(source, f"non-numeric p_abnormal {p_text!r}", row=rowno) from None
        if not 0.0 <= p <= 1.0:
            raise FileFormatError(source, f"p_abnormal {p_text} outside [0, 1]", row=rowno)
        if label not in LABELS:
            raise FileFormatError(source, f"true_label must be one of {LABELS}, got {label!r}", row=rowno)
        entry = grouped.setdefault(rid, {"label": label, "scores": {}, "row": rowno})
        if entry["label"] != label:
            raise FileFormatError(source, f"conflicting true_label for recording {rid!r}", row=rowno)
        if idx in entry["scores"]:
            raise FileFormatError(source, f"duplicate ({rid}, {idx})", row=rowno)
        entry["scores"][idx] = p

    out = []
    for rid in sorted(grouped):
        entry = grouped[rid]
        idxs = sorted(entry["scores"])
        if idxs != list(range(len(idxs))):
            raise FileFormatError(source, f"window indices of {rid!r} are not 0..{len(idxs) - 1}", row=entry["row"])
        out.append(RecordingScores(rid, [entry["scores"][i] for i in idxs], entry["label"]))
    return out


def read_scores(path) -> list[RecordingScores]:
    path = Path(path)
    return loads_scores(path.read_text(encoding="utf-8"), source=str(path))


# --- results ------------------------------------------------------------------------


def _result_fields(r: ResultRow) -> list[str]:
    m = r.metrics
    counts = ["", "", "", "", ""] if m is None else [str(m.n), str(m.tp), str(m.tn), str(m.fp), str(m.fn)]
    ratios = ["", "", ""] if m is None else [fmt_float(getattr(m, k)) for k in METRIC_NAMES]
    return [
        fmt_float(r.window_len_s),
        r.arbitration_kind,
        r.mlp,
        str(r.first_stage_seed),
        "" if r.arbitration_seed is None else str(r.arbitration_seed),
        r.level,
        r.status,
        *counts,
        *ratios,
        r.message,
    ]


def dumps_results(rows: Iterable[ResultRow]) -> str:
    return _csv_text(RESULT_COLUMNS, (_result_fields(r) for r in rows))


def write_results(path, rows: Iterable[ResultRow]) -> None:
    atomic_write_text(path, dumps_results(rows))


def _opt_float(text: str) -> float | None:
    return None if text == "" else float(text)


def loads_results(text: str, source: str = "<string>") -> list[ResultRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise FileFormatError(source, "unexpected results header", row=1)
    rows = []
    for rowno, rec in enumerate(reader, start=2):
        try:
            metrics = None
            if rec["n"]:
                metrics = Metrics(
                    tp=int(rec["tp"]),
                    tn=int(rec["tn"]),
                    fp=int(rec["fp"]),
                    fn=int(rec["fn"]),
                    accuracy=float(rec["accuracy"]),
                    sensitivity=_opt_float(rec["sensitivity"]),
                    specificity=_opt_float(rec["specificity"]),
                )
            rows.append(
                ResultRow(
                    window_len_s=float(rec["window_len_s"]),
                    arbitration_kind=rec["arbitration_kind"],
                    mlp=rec["mlp"],
                    first_stage_seed=int(rec["first_stage_seed"]),
                    arbitration_seed=None if rec["arbitration_seed"] == "" else int(rec["arbitration_seed"]),
                    level=rec["level"],
                    metrics=metrics,
                    status=rec["status"],
                    message=rec["message"],
                )
            )
        except (TypeError, ValueError) as exc:
            raise FileFormatError(source, str(exc), row=rowno) from None
    return rows


def read_results(path) -> list[ResultRow]:
    path = Path(path)
    return loads_results(path.read_text(encoding="utf-8"), source=str(path))


def dumps_summary(rows: Iterable[SummaryRow]) -> str:
    header = ["window_len_s", "arbitration_kind", "mlp", "level", "n_runs", "n_failed"]
    for name in METRIC_NAMES:
        header += [f"{name}_{s}" for s in ("mean", "min", "max", "std")]
    lines = []
    for s in rows:
        fields = [fmt_float(s.window_len_s), s.arbitration_kind, s.mlp, s.level, str(s.n_runs), str(s.n_failed)]
        for name in METRIC_NAMES:
            st = s.stats.get(name)
            fields += ["", "", "", ""] if st is None else [fmt_float(v) for v in st]
        lines.append(fields)
    return _csv_text(header, lines)


def write_summary(path, rows: Iterable[SummaryRow]) -> None:
    atomic_write_text(path, dumps_summary(rows))
