import numpy as np
import pytest

from oracles import event_sample_mask
from winarb.errors import ConfigurationError
from winarb.synthgen import (
    GeneratorConfig,
    generate_dataset,
    generate_events,
    generate_recording,
    load_recording,
    load_recordings,
    replace,
    save_recording,
)


def _band_power(x: np.ndarray, fs: float, lo: float, hi: float) -> float:
    """Direct DFT power in [lo, hi) Hz, by explicit summation."""
    n = x.size
    freqs = np.arange(n // 2 + 1) * fs / n
    t = np.arange(n)
    total = 0.0
    for k in np.nonzero((freqs >= lo) & (freqs < hi))[0]:
        c = np.sum(x * np.exp(-2j * np.pi * k * t / n))
        total += abs(c) ** 2
    return total / n**2


class TestGenerateRecording:
    def test_normal_has_no_events(self):
        rec = generate_recording(GeneratorConfig(), "normal", seed=1)
        assert rec.events == []
        assert rec.label == "normal"
        assert rec.samples.shape == (4, 132000)

    def test_abnormal_has_events(self):
        rec = generate_recording(GeneratorConfig(), "abnormal", seed=1)
        assert len(rec.events) >= 1
        assert all(0 <= e.onset_s and e.end_s <= rec.duration_s for e in rec.events)

    def test_event_rms(self):
        rec = generate_recording(GeneratorConfig(event_snr=3.0), "abnormal", seed=7)
        mask = event_sample_mask(rec.events, rec.samples.shape[1], rec.sample_rate_hz)
        assert mask.any() and (~mask).any()
        for ch in rec.samples:
            inside = np.sqrt(np.mean(ch[mask] ** 2))
            outside = np.sqrt(np.mean(ch[~mask] ** 2))
            assert inside / outside >= 2.0

    def test_deterministic(self):
        cfg = GeneratorConfig()
        a = generate_recording(cfg, "abnormal", seed=42)
        b = generate_recording(cfg, "abnormal", seed=42)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.events == b.events
        c = generate_recording(cfg, "abnormal", seed=43)
        assert not np.array_equal(a.samples, c.samples)

    def test_events_without_samples_match(self):
        cfg = GeneratorConfig()
        for seed in range(5):
            assert generate_events(cfg, "abnormal", seed) == generate_recording(cfg, "abnormal", seed).events

    def test_bad_label(self):
        with pytest.raises(ConfigurationError):
            generate_recording(GeneratorConfig(), "unknown", seed=0)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(duration_s=300.0),
            dict(event_rate_per_recording=0.0),
            dict(event_freq_hz=8.0),
            dict(event_freq_hz=60.0),
            dict(n_normal_train=-1),
            dict(event_snr=0.0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(**kw).validate()

    def test_replace_background_field(self):
        cfg = replace(GeneratorConfig(), white_noise_std=0.0, event_snr=2.0)
        assert cfg.background_spectrum.white_noise_std == 0.0
        assert cfg.event_snr == 2.0

    def test_event_band(self):
        assert GeneratorConfig().event_band_hz == (20.0, 30.0)


class TestDataset:
    def test_default_counts_and_ids(self):
        train, test = generate_dataset(GeneratorConfig())
        assert (len(train), len(test)) == (400, 100)
        assert train.labels.count("abnormal") == 200 and test.labels.count("normal") == 50
        assert len(set(train.ids) | set(test.ids)) == 500
        assert train.ids[0] == "train-0000" and test.ids[-1] == "test-0099"

    def test_no_abnormal_train(self):
        train, _ = generate_dataset(GeneratorConfig(n_abnormal_train=0))
        assert len(train) == 200
        assert set(train.labels) == {"normal"}

    def test_class_purity(self):
        train, test = generate_dataset(GeneratorConfig())
        for split in (train, test):
            for h in split.headers():
                assert (len(h.events) >= 1) == (h.label == "abnormal")

    def test_same_config_identical(self, small_gen):
        a, _ = generate_dataset(small_gen)
        b, _ = generate_dataset(small_gen)
        for i in (0, len(a) - 1):
            assert a[i].samples.tobytes() == b[i].samples.tobytes()

    def test_splits_use_different_seeds(self, small_gen):
        train, test = generate_dataset(small_gen)
        assert not np.array_equal(train[0].samples, test[0].samples)

    def test_header_matches_recording(self, small_gen):
        train, _ = generate_dataset(small_gen)
        i = len(train) - 1
        h, rec = train.header(i), train[i]
        assert (h.id, h.label, h.events, h.duration_s) == (rec.id, rec.label, rec.events, rec.duration_s)

    def test_event_detectability(self):
        """Event-band power inside events beats the same band outside, over 120 recordings."""
        cfg = GeneratorConfig(duration_s=120.0, max_window_len_s=60.0, event_rate_per_recording=1.0)
        fs = cfg.sample_rate_hz
        lo, hi = cfg.event_band_hz
        wins = 0
        n = 120
        for seed in range(n):
            rec = generate_recording(cfg, "abnormal", seed)
            ev = rec.events[0]
            a = int(round(ev.onset_s * fs))
            b = a + int(round(ev.duration_s * fs))
            inside = rec.samples[0, a:b]
            mask = event_sample_mask(rec.events, rec.samples.shape[1], fs)
            clean = np.nonzero(~mask)[0]
            # an event-free stretch of the same length
            start = next(s for s in clean if s + (b - a) <= mask.size and not mask[s : s + (b - a)].any())
            outside = rec.samples[0, start : start + (b - a)]
            wins += _band_power(inside, fs, lo, hi) > _band_power(outside, fs, lo, hi)
        assert wins / n >= 0.99


class TestSerialisation:
    def test_round_trip(self, tmp_path, small_gen):
        rec = generate_recording(small_gen, "abnormal", seed=3, recording_id="r-3")
        meta_path, csv_path = save_recording(rec, tmp_path)
        back = load_recording(meta_path)
        assert back.id == "r-3" and back.label == "abnormal"
        assert back.events == rec.events
        np.testing.assert_array_equal(back.samples, rec.samples)
        assert csv_path.read_text().startswith("ch0,ch1,ch2,ch3\n")

    def test_load_directory(self, tmp_path, small_gen):
        for seed, label in [(1, "normal"), (2, "abnormal")]:
            save_recording(generate_recording(small_gen, label, seed, recording_id=f"r{seed}"), tmp_path)
        recs = load_recordings(tmp_path)
        assert [r.id for r in recs] == ["r1", "r2"]
        assert recs[0].events == []
