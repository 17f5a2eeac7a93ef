"""Command-line entry point.

Configuration is a flat UTF-8 ``key = value`` file (``#`` starts a
comment); every key can also be given as ``--key value`` on the command
line, and flags win over the file.  Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .arbitration import (
    KINDS,
    ThresholdConfig,
    arbitrate_many,
    input_len,
    mean_arbitrate,
    threshold_or_mean,
    train_arbitration,
)
from .errors import ConfigurationError, DataError, WinarbError
from .evaluation import (
    ALL_KINDS,
    ProtocolConfig,
    compute_metrics,
    noise_sweep,
    parse_descriptor,
    run_protocol,
    summarize,
)
from .firststage import FeatureConfig, Normalizer, build_table, fit_first_stage, score_recording
from .formats import atomic_write_text, fmt_float, read_scores, write_results, write_scores, write_summary
from .neuralnet import MlpConfig, TrainConfig, load_model, save_model
from .synthgen import BackgroundSpectrum, GeneratorConfig, generate_dataset, load_recordings, save_recording
from .windowing import WindowingConfig

log = logging.getLogger("winarb")

COMMANDS = ("generate", "train-first", "score", "arbitrate", "protocol", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


# --- value parsers ---------------------------------------------------------------


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _str(text: str) -> str:
    t = text.strip()
    if not t:
        raise ValueError("empty value")
    return t


def _list(item: Callable, sep: str = ",") -> Callable:
    def parse(text: str):
        parts = [p.strip() for p in text.split(sep) if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(p) for p in parts)

    return parse


def _band(text: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValueError(f"expected lo:hi, got {text!r}")
    return float(lo), float(hi)


def _choice(options) -> Callable:
    def parse(text: str):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t

    return parse


# key -> (section, field, parser). Sections map onto the config dataclasses.
KEYS: dict[str, tuple[str, str, Callable]] = {
    # paths
    "dataset": ("paths", "dataset", Path),
    "model": ("paths", "model", Path),
    "scores": ("paths", "scores", Path),
    "train_scores": ("paths", "train_scores", Path),
    "test_scores": ("paths", "test_scores", Path),
    "arbitration_model": ("paths", "arbitration_model", Path),
    "results": ("paths", "results", Path),
    "summary": ("paths", "summary", Path),
    "split": ("run", "split", _choice(("train", "test", "all"))),
    "arbitration_kind": ("run", "arbitration_kind", _choice(("mean", "threshold") + KINDS)),
    # generator
    "sample_rate_hz": ("generator", "sample_rate_hz", float),
    "channels": ("generator", "channels", int),
    "duration_s": ("generator", "duration_s", float),
    "n_normal_train": ("generator", "n_normal_train", int),
    "n_abnormal_train": ("generator", "n_abnormal_train", int),
    "n_normal_test": ("generator", "n_normal_test", int),
    "n_abnormal_test": ("generator", "n_abnormal_test", int),
    "event_rate_per_recording": ("generator", "event_rate_per_recording", float),
    "event_duration_s": ("generator", "event_duration_s", float),
    "event_snr": ("generator", "event_snr", float),
    "event_freq_hz": ("generator", "event_freq_hz", float),
    "rng_seed": ("generator", "rng_seed", int),
    "background_band_hz": ("background", "band_hz", _band),
    "background_components": ("background", "n_components", int),
    "background_amplitude": ("background", "component_amplitude", float),
    "white_noise_std": ("background", "white_noise_std", float),
    # windowing
    "window_len_s": ("windowing", "window_len_s", float),
    "start_offset_s": ("windowing", "start_offset_s", float),
    "max_span_s": ("windowing", "max_span_s", float),
    "max_windows": ("windowing", "max_windows", int),
    # features
    "bands_hz": ("features", "bands_hz", _list(_band)),
    "include_variance": ("features", "include_variance", _bool),
    "include_peak": ("features", "include_peak", _bool),
    # first-stage network and training
    "hidden_depth": ("first_mlp", "hidden_depth", int),
    "hidden_len": ("first_mlp", "hidden_len", int),
    "activation": ("first_mlp", "activation", _str),
    "learning_rate": ("first_train", "learning_rate", float),
    "epochs": ("first_train", "epochs", int),
    "batch_size": ("first_train", "batch_size", int),
    "l2": ("first_train", "l2", float),
    "seed": ("first_train", "seed", int),
    # arbitration network and training
    "arb_hidden_depth": ("arb_mlp", "hidden_depth", int),
    "arb_hidden_len": ("arb_mlp", "hidden_len", int),
    "arb_activation": ("arb_mlp", "activation", _str),
    "arb_learning_rate": ("arb_train", "learning_rate", float),
    "arb_epochs": ("arb_train", "epochs", int),
    "arb_batch_size": ("arb_train", "batch_size", int),
    "arb_l2": ("arb_train", "l2", float),
    "arb_seed": ("arb_train", "seed", int),
    "n_max": ("protocol", "n_max", int),
    "n_bins": ("protocol", "n_bins", int),
    "t_lower": ("thresholds", "t_lower", float),
    "t_upper": ("thresholds", "t_upper", float),
    # protocol grid
    "first_stage_seeds": ("protocol", "first_stage_seeds", _list(int)),
    "arbitration_seeds": ("protocol", "arbitration_seeds", _list(int)),
    "window_lengths_s": ("protocol", "window_lengths_s", _list(float)),
    "arbitration_kinds": ("protocol", "arbitration_kinds", _list(_choice(ALL_KINDS))),
    "mlp_grid": ("protocol", "mlp_grid", _list(parse_descriptor, sep=";")),
}


@dataclass
class RunConfig:
    command: str = "protocol"
    paths: dict = field(default_factory=dict)
    split: str = "test"
    arbitration_kind: str = "hybrid"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    features: FeatureConfig | None = None  # None: derived from the generator
    first_mlp: MlpConfig = field(default_factory=lambda: ProtocolConfig().first_stage_mlp)
    first_train: TrainConfig = field(default_factory=TrainConfig)
    arb_mlp: MlpConfig = field(default_factory=lambda: ProtocolConfig().mlp_grid[0])
    arb_train: TrainConfig = field(default_factory=lambda: ProtocolConfig().arbitration_train)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def feature_config(self) -> FeatureConfig:
        return self.features if self.features is not None else FeatureConfig.from_generator(self.generator)

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """``key = value`` lines to typed values; errors carry the line number."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: syntax error, expected 'key = value'")
        values[key] = _parse_value(key, value.strip(), f"{source}:{lineno}")
    return values


def _parse_value(key: str, text: str, where: str):
    if key not in KEYS:
        raise ConfigurationError(f"{where}: unknown key {key!r}")
    try:
        return KEYS[key][2](text)
    except (ValueError, ConfigurationError) as exc:
        raise ConfigurationError(f"{where}: invalid value for {key!r}: {exc}") from None


def build_run_config(command: str, values: dict[str, object]) -> RunConfig:
    sections: dict[str, dict] = {}
    for key, value in values.items():
        section, name, _ = KEYS[key]
        sections.setdefault(section, {})[name] = value

    def upd(obj, section):
        return dataclasses.replace(obj, **sections[section]) if section in sections else obj

    try:
        gen = GeneratorConfig()
        if "background" in sections:
            gen = dataclasses.replace(gen, background_spectrum=BackgroundSpectrum(**sections["background"]))
        gen = upd(gen, "generator")
        windowing = upd(WindowingConfig(), "windowing")
        features = None
        if "features" in sections:
            features = upd(FeatureConfig.from_generator(gen), "features")
        rc = RunConfig(command=command, generator=gen, windowing=windowing, features=features)
        rc.paths = dict(sections.get("paths", {}))
        rc.split = sections.get("run", {}).get("split", rc.split)
        rc.arbitration_kind = sections.get("run", {}).get("arbitration_kind", rc.arbitration_kind)
        rc.first_mlp = upd(rc.first_mlp, "first_mlp")
        rc.first_train = upd(rc.first_train, "first_train")
        rc.arb_mlp = upd(rc.arb_mlp, "arb_mlp")
        rc.arb_train = upd(rc.arb_train, "arb_train")
        rc.thresholds = upd(rc.thresholds, "thresholds")
        protocol = dataclasses.replace(
            rc.protocol,
            first_stage_mlp=rc.first_mlp,
            first_stage_train=rc.first_train,
            arbitration_train=rc.arb_train,
            thresholds=rc.thresholds,
            windowing=windowing,
        )
        if "arb_mlp" in sections:
            protocol = dataclasses.replace(protocol, mlp_grid=(rc.arb_mlp,))
        rc.protocol = upd(protocol, "protocol")
    except TypeError as exc:
        raise ConfigurationError(f"type mismatch: {exc}") from None
    return rc


def parse_config(config_path=None, overrides: dict[str, str] | None = None, command: str = "protocol") -> RunConfig:
    """Load ``config_path`` (optional), apply string ``overrides`` on top."""
    values: dict[str, object] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), source=str(path)))
    for key, text in (overrides or {}).items():
        values[key] = _parse_value(key, text, f"--{key}")
    return build_run_config(command, values)


# --- commands ----------------------------------------------------------------------


def _require(rc: RunConfig, key: str, must_exist: bool = True) -> Path:
    path = rc.path(key)
    if path is None:
        raise ConfigurationError(f"command '{rc.command}' needs '{key}' (use --{key} PATH)")
    if must_exist and not path.exists():
        raise DataError(f"{key} path does not exist: {path}")
    return path


def _out(rc: RunConfig, key: str, default: str) -> Path:
    return rc.path(key) or Path(default)


def _load_split(dataset: Path, split: str):
    splits = ("train", "test") if split == "all" else (split,)
    recs = []
    for s in splits:
        d = dataset / s
        if not d.is_dir():
            raise DataError(f"dataset split directory does not exist: {d}")
        recs.extend(load_recordings(d))
    if not recs:
        raise DataError(f"no recordings found under {dataset} ({split})")
    return recs


def cmd_generate(rc: RunConfig) -> int:
    out = _out(rc, "dataset", "dataset")
    gcfg = dataclasses.replace(rc.generator, max_window_len_s=rc.windowing.window_len_s)
    train, test = generate_dataset(gcfg)
    for name, recs in (("train", train), ("test", test)):
        for rec in recs:
            save_recording(rec, out / name)
    print(f"wrote {len(train)} train and {len(test)} test recordings to {out}")
    return EXIT_OK


def _first_stage_meta(rc: RunConfig, fcfg: FeatureConfig, norm: Normalizer) -> dict[str, str]:
    w = rc.windowing
    return {
        "stage": "first",
        "window_len_s": fmt_float(w.window_len_s),
        "start_offset_s": fmt_float(w.start_offset_s),
        "max_span_s": fmt_float(w.max_span_s),
        "max_windows": str(w.max_windows),
        "bands_hz": ",".join(f"{fmt_float(lo)}:{fmt_float(hi)}" for lo, hi in fcfg.bands_hz),
        "include_variance": str(fcfg.include_variance).lower(),
        "include_peak": str(fcfg.include_peak).lower(),
        "feature_mean": ",".join(fmt_float(v) for v in norm.mean),
        "feature_std": ",".join(fmt_float(v) for v in norm.std),
    }


def _first_stage_from_meta(meta: dict[str, str]):
    if meta.get("stage") != "first":
        raise DataError("model file is not a first-stage model")
    wcfg = WindowingConfig(
        window_len_s=float(meta["window_len_s"]),
        start_offset_s=float(meta["start_offset_s"]),
        max_span_s=float(meta["max_span_s"]),
        max_windows=int(meta["max_windows"]),
    )
    fcfg = FeatureConfig(
        bands_hz=_list(_band)(meta["bands_hz"]),
        include_variance=_bool(meta["include_variance"]),
        include_peak=_bool(meta["include_peak"]),
    )
    norm = Normalizer(
        np.array([float(v) for v in meta["feature_mean"].split(",")]),
        np.array([float(v) for v in meta["feature_std"].split(",")]),
    )
    return wcfg, fcfg, norm


def cmd_train_first(rc: RunConfig) -> int:
    dataset = _require(rc, "dataset")
    out = _out(rc, "model", "first_stage.model")
    recs = _load_split(dataset, "train")
    fcfg = rc.features or FeatureConfig.from_generator(
        dataclasses.replace(rc.generator, sample_rate_hz=recs[0].sample_rate_hz)
    )
    table = build_table(recs, rc.windowing, fcfg)
    mcfg = dataclasses.replace(rc.first_mlp, input_len=table.features.shape[1])
    model, norm = fit_first_stage(table.features, table.labels, mcfg, rc.first_train)
    save_model(model, out, _first_stage_meta(rc, fcfg, norm))
    print(f"trained first stage on {len(table)} windows from {len(recs)} recordings -> {out}")
    return EXIT_OK


def cmd_score(rc: RunConfig) -> int:
    dataset = _require(rc, "dataset")
    model_path = _require(rc, "model")
    out = _out(rc, "scores", f"scores_{rc.split}.csv")
    model, meta = load_model(model_path)
    wcfg, fcfg, norm = _first_stage_from_meta(meta)
    recs = _load_split(dataset, rc.split)
    write_scores(out, [score_recording(model, norm, r, wcfg, fcfg) for r in recs])
    print(f"scored {len(recs)} recordings -> {out}")
    return EXIT_OK


def cmd_arbitrate(rc: RunConfig) -> int:
    kind = rc.arbitration_kind
    test = read_scores(_require(rc, "test_scores"))
    if not test:
        raise DataError("test score file holds no recordings")
    n_max, n_bins = rc.protocol.n_max, rc.protocol.n_bins
    if kind == "mean":
        pred = [mean_arbitrate(rs) for rs in test]
    elif kind == "threshold":
        pred = [threshold_or_mean(rs, rc.thresholds) for rs in test]
    else:
        model_path = rc.path("arbitration_model")
        if rc.path("train_scores") is not None:
            train = read_scores(_require(rc, "train_scores"))
            mcfg = dataclasses.replace(rc.arb_mlp, input_len=input_len(kind, n_max, n_bins))
            model = train_arbitration(train, kind, mcfg, rc.arb_train, n_max, n_bins)
            if model_path is not None:
                save_model(model, model_path, {"stage": "arbitration", "kind": kind, "n_max": str(n_max), "n_bins": str(n_bins)})
        elif model_path is not None and model_path.exists():
            model, meta = load_model(model_path)
            if meta.get("stage") != "arbitration" or meta.get("kind") != kind:
                raise DataError(f"{model_path} is not a '{kind}' arbitration model")
            n_max, n_bins = int(meta["n_max"]), int(meta["n_bins"])
        else:
            raise ConfigurationError(f"'{kind}' arbitration needs --train_scores or an existing --arbitration_model")
        pred = arbitrate_many(model, test, kind, n_max, n_bins)
    truth = [rs.true_label for rs in test]
    out = _out(rc, "results", "predictions.csv")
    lines = ["recording_id,true_label,predicted_label"]
    lines += [f"{rs.recording_id},{rs.true_label},{p}" for rs, p in zip(test, pred)]
    atomic_write_text(out, "\n".join(lines) + "\n")
    m = compute_metrics(pred, truth)
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"
    print(
        f"{kind}: n={m.n} accuracy={fmt(m.accuracy)} sensitivity={fmt(m.sensitivity)} "
        f"specificity={fmt(m.specificity)} -> {out}"
    )
    return EXIT_OK


def cmd_protocol(rc: RunConfig) -> int:
    out = _out(rc, "results", "results.csv")
    rows = run_protocol(rc.protocol, rc.generator, rc.features)
    write_results(out, rows)
    if rc.path("summary") is not None:
        write_summary(rc.path("summary"), summarize(rows))
    failed = sum(r.status != "ok" for r in rows)
    print(f"wrote {len(rows)} result rows ({failed} failed) -> {out}")
    return EXIT_OK


def cmd_sweep(rc: RunConfig) -> int:
    out = _out(rc, "results", "label_noise.csv")
    if rc.path("dataset") is not None:
        recs = _load_split(_require(rc, "dataset"), rc.split)
    else:
        gcfg = dataclasses.replace(rc.generator, max_window_len_s=max(rc.protocol.window_lengths_s))
        train, _ = generate_dataset(gcfg)
        recs = train.headers()
    rows = noise_sweep(recs, rc.protocol.window_lengths_s, rc.windowing)
    lines = ["window_len_s,n_abnormal_windows,n_clean_windows,label_noise_rate"]
    lines += [
        f"{fmt_float(r.window_len_s)},{r.n_abnormal_windows},{r.n_clean_windows},{fmt_float(r.label_noise_rate)}"
        for r in rows
    ]
    atomic_write_text(out, "\n".join(lines) + "\n")
    for r in rows:
        print(f"window {r.window_len_s:g} s: label noise {r.label_noise_rate:.3f} over {r.n_abnormal_windows} windows")
    return EXIT_OK


HANDLERS = {
    "generate": cmd_generate,
    "train-first": cmd_train_first,
    "score": cmd_score,
    "arbitrate": cmd_arbitrate,
    "protocol": cmd_protocol,
    "sweep": cmd_sweep,
}


def run(config: RunConfig) -> int:
    """Execute ``config.command``; maps every failure to a diagnostic and exit code."""
    try:
        return HANDLERS[config.command](config)
    except ConfigurationError as exc:
        print(f"winarb: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"winarb: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except WinarbError as exc:
        print(f"winarb: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"winarb: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="winarb", description="Windowed classification with second-stage arbitration.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", help="flat key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"winarb {__version__}")
    for key in KEYS:
        p.add_argument(f"--{key}", dest=f"key_{key}", metavar="VALUE", default=None)
    return p


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
        rc = parse_config(args.config, overrides, command=args.command)
    except ConfigurationError as exc:
        print(f"winarb: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return run(rc)


if __name__ == "__main__":
    sys.exit(main())
