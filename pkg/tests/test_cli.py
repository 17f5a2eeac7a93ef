import subprocess
import sys

import pytest

from winarb.cli import KEYS, main, parse_config, parse_config_text
from winarb.errors import ConfigurationError
from winarb.evaluation import ProtocolConfig, expected_cells
from winarb.formats import read_results, read_scores
from winarb.synthgen import GeneratorConfig
from winarb.windowing import WindowingConfig

SMALL = """\
# a small run
duration_s = 420
n_normal_train = 6
n_abnormal_train = 6
n_normal_test = 4
n_abnormal_test = 4
window_lengths_s = 60, 300
first_stage_seeds = 0,1
arbitration_seeds = 0
epochs = 10
arb_epochs = 10
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


class TestParseConfig:
    def test_defaults(self, tmp_path):
        empty = tmp_path / "empty.cfg"
        empty.write_text("")
        rc = parse_config(empty)
        assert rc.generator == GeneratorConfig()
        assert rc.windowing == WindowingConfig()
        assert rc.protocol == ProtocolConfig()
        assert rc.paths == {}

    def test_flag_wins(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("window_len_s = 300\n")
        assert parse_config(path).windowing.window_len_s == 300.0
        assert parse_config(path, {"window_len_s": "600"}).windowing.window_len_s == 600.0

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="windw_len"):
            parse_config_text("windw_len = 60\n")
        with pytest.raises(ConfigurationError, match="windw_len"):
            parse_config(None, {"windw_len": "60"})

    def test_syntax_error_line(self):
        with pytest.raises(ConfigurationError, match="cfg:3"):
            parse_config_text("# c\nepochs = 3\njust words\n", source="cfg")

    def test_bad_value(self):
        with pytest.raises(ConfigurationError, match="epochs"):
            parse_config_text("epochs = many\n")
        with pytest.raises(ConfigurationError):
            parse_config(None, {"hidden_len": "99"})

    def test_lists_and_sections(self):
        rc = parse_config(None, {
            "mlp_grid": "d0; d1-h5-elu",
            "bands_hz": "1:12,20:30",
            "background_band_hz": "2:10",
            "arb_learning_rate": "0.2",
            "t_upper": "0.8",
        })
        assert [m.descriptor() for m in rc.protocol.mlp_grid] == ["d0", "d1-h5-elu"]
        assert rc.feature_config().bands_hz == ((1.0, 12.0), (20.0, 30.0))
        assert rc.generator.background_spectrum.band_hz == (2.0, 10.0)
        assert rc.protocol.arbitration_train.learning_rate == 0.2
        assert rc.protocol.thresholds.t_upper == 0.8

    def test_every_key_is_a_flag(self):
        from winarb.cli import make_parser

        opts = {a.option_strings[0] for a in make_parser()._actions if a.option_strings}
        assert {f"--{k}" for k in KEYS} <= opts


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["protocol", "--windw_len", "60"]) == 1
        assert "windw_len" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["protocol", "-c", str(tmp_path / "none.cfg")]) == 1

    def test_missing_dataset(self, tmp_path, capsys):
        missing = tmp_path / "nowhere"
        assert main(["train-first", "--dataset", str(missing), "--model", str(tmp_path / "m.txt")]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_missing_required_path(self):
        assert main(["score"]) == 1

    def test_bad_scores_file(self, tmp_path, capsys):
        bad = tmp_path / "s.csv"
        bad.write_text("recording_id,window_index,p_abnormal,true_label\nr,0,1.5,normal\n")
        assert main(["arbitrate", "--test_scores", str(bad), "--arbitration_kind", "mean"]) == 2
        assert "row 2" in capsys.readouterr().err

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "winarb", "protocol", "--epochs", "x"], capture_output=True, text=True)
        assert out.returncode == 1
        assert "epochs" in out.stderr


class TestCommands:
    def test_protocol_rows_and_determinism(self, small_cfg, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["protocol", "-c", str(small_cfg), "--results", str(a), "--summary", str(tmp_path / "s.csv")]) == 0
        assert main(["protocol", "-c", str(small_cfg), "--results", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        rows = read_results(a)
        assert len(rows) == len(expected_cells(parse_config(small_cfg).protocol)) == 2 * 2 * (3 + 3)
        assert (tmp_path / "s.csv").read_text().count("\n") == 1 + 2 * 6

    def test_pipeline(self, small_cfg, tmp_path):
        data, model = tmp_path / "data", tmp_path / "first.txt"
        tr, te = tmp_path / "train_scores.csv", tmp_path / "test_scores.csv"
        arb, pred = tmp_path / "arb.txt", tmp_path / "pred.csv"
        cfg = ["-c", str(small_cfg)]
        assert main(["generate", *cfg, "--dataset", str(data)]) == 0
        assert len(list((data / "train").glob("*.meta"))) == 12
        assert main(["train-first", *cfg, "--dataset", str(data), "--model", str(model)]) == 0
        assert main(["score", *cfg, "--dataset", str(data), "--model", str(model), "--split", "train", "--scores", str(tr)]) == 0
        assert main(["score", *cfg, "--dataset", str(data), "--model", str(model), "--scores", str(te)]) == 0
        test_scores = read_scores(te)
        assert len(test_scores) == 8 and all(len(rs) == 6 for rs in test_scores)

        args = ["arbitrate", *cfg, "--test_scores", str(te), "--results", str(pred)]
        assert main([*args, "--train_scores", str(tr), "--arbitration_model", str(arb)]) == 0
        first = pred.read_text()
        assert first.splitlines()[0] == "recording_id,true_label,predicted_label"
        assert len(first.splitlines()) == 9
        # reuse the saved arbiter without training data
        assert main([*args, "--arbitration_model", str(arb)]) == 0
        assert pred.read_text() == first
        assert main(["arbitrate", *cfg, "--test_scores", str(te), "--arbitration_kind", "mean", "--results", str(pred)]) == 0
        assert main(["arbitrate", *cfg, "--test_scores", str(te), "--arbitration_kind", "threshold", "--results", str(pred)]) == 0

    def test_arbiter_kind_mismatch(self, small_cfg, tmp_path):
        data, model = tmp_path / "data", tmp_path / "first.txt"
        tr, arb = tmp_path / "tr.csv", tmp_path / "arb.txt"
        cfg = ["-c", str(small_cfg)]
        main(["generate", *cfg, "--dataset", str(data)])
        main(["train-first", *cfg, "--dataset", str(data), "--model", str(model)])
        main(["score", *cfg, "--dataset", str(data), "--model", str(model), "--split", "train", "--scores", str(tr)])
        assert main(["arbitrate", *cfg, "--test_scores", str(tr), "--train_scores", str(tr), "--arbitration_model", str(arb),
                     "--arbitration_kind", "raw", "--results", str(tmp_path / "p.csv")]) == 0
        assert main(["arbitrate", *cfg, "--test_scores", str(tr), "--arbitration_model", str(arb),
                     "--arbitration_kind", "histogram", "--results", str(tmp_path / "p.csv")]) == 2

    def test_sweep(self, small_cfg, tmp_path):
        out = tmp_path / "noise.csv"
        assert main(["sweep", "-c", str(small_cfg), "--results", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "window_len_s,n_abnormal_windows,n_clean_windows,label_noise_rate"
        assert [l.split(",")[:2] for l in lines[1:]] == [["60", "36"], ["300", "6"]]
