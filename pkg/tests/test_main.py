"""
命令行入口测试
"""
import json
import os
from unittest.mock import patch
import numpy as np
import pytest
from app.main import main, parse_values
from app.utils.errors import ConfigError

SPEC = {"n_views": 3, "latent_dim": 1, "view_dims": [1, 8, 8], "snr_db": [10.0, 0.0, 0.0],
        "m": 6000, "seed": 2}
CONFIG = {"pipeline": "lcca", "preprocessing": {"bandpass": None}, "cv": {"folds": 3},
          "eval": {"segment_seconds": [1.0, 5.0]}}


def write_json(path, payload) -> str:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = write_json(root / "spec.json", SPEC)
    out = root / "synth"
    assert main(["synth", "--spec", spec, "--out-dir", str(out)]) == 0
    return root


def data_args(synth_dir):
    out = synth_dir / "synth"
    return ["--stimulus", str(out / "view0.csv"),
            "--response", str(out / "view1.csv"), "--response", str(out / "view2.csv")]


class TestSynthAndFit:
    """synth → fit → evaluate → report 全流程"""

    def test_synth_outputs(self, synth_dir):
        out = synth_dir / "synth"
        summary = json.loads((out / "bundle.json").read_text(encoding="utf-8"))
        assert len(summary["views"]) == 3
        assert summary["spec"]["view_dims"] == [1, 8, 8]
        for name in ("view0.csv", "view0.csv.meta.json", "latent.csv"):
            assert os.path.exists(out / name)

    def test_fit_evaluate_report(self, synth_dir, capsys):
        config = write_json(synth_dir / "config.json", CONFIG)
        fit_dir = synth_dir / "fit"
        capsys.readouterr()
        code = main(["fit", "--config", config, "--out-dir", str(fit_dir), "--threads", "2"]
                    + data_args(synth_dir))
        assert code == 0
        printed = json.loads(capsys.readouterr().out)
        assert set(printed["per_subject"]) == {"0", "1"}
        assert printed["overall"] > 0.2

        out = synth_dir / "synth"
        code = main(["evaluate", "--bundle", str(fit_dir / "bundles" / "subject1.json"),
                     "--stimulus", str(out / "view0.csv"), "--response", str(out / "view2.csv"),
                     "--out-dir", str(synth_dir / "eval")])
        assert code == 0
        evaluated = json.loads(capsys.readouterr().out)
        assert evaluated["subject"] == 1
        assert os.path.exists(synth_dir / "eval" / "evaluate.json")

        code = main(["report", "--report", str(fit_dir / "report.json"),
                     "--baseline", str(fit_dir / "report.json"), "--out-dir", str(synth_dir / "plots")])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["overall"] == pytest.approx(printed["overall"])
        assert summary["comparison"]["overall"]["p"] is None
        assert os.path.exists(synth_dir / "plots" / "subjects.svg")

    def test_seed_override_changes_nothing_for_lcca(self, synth_dir, capsys):
        """lcca 不含随机成分，不同种子结果一致"""
        config = write_json(synth_dir / "config_seed.json", CONFIG)
        results = []
        for seed in ("1", "2"):
            capsys.readouterr()
            assert main(["fit", "--config", config, "--seed", seed] + data_args(synth_dir)) == 0
            report = json.loads(capsys.readouterr().out)
            assert report["config"]["seed"] == int(seed)
            results.append(report["entries"])
        assert results[0] == results[1]


class TestExitCodes:
    """退出码测试"""

    def test_config_error(self, synth_dir, tmp_path):
        bad = write_json(tmp_path / "bad.json", {"pipeline": "lcca", "typo": 1})
        assert main(["fit", "--config", bad] + data_args(synth_dir)) == 2

    def test_data_error(self, tmp_path):
        missing = str(tmp_path / "missing.csv")
        assert main(["fit", "--stimulus", missing, "--response", missing, "--fs", "64"]) == 3

    def test_synth_errors(self, tmp_path):
        spec = write_json(tmp_path / "spec.json", {"n_views": 2, "colour": "red"})
        assert main(["synth", "--spec", spec, "--out-dir", str(tmp_path / "o")]) == 2
        assert main(["synth"]) == 2

    def test_unknown_sweep_parameter(self, synth_dir):
        config = write_json(synth_dir / "config_sweep.json", CONFIG)
        code = main(["sweep", "--config", config, "--param", "momentum", "--values", "0.1,0.2"]
                    + data_args(synth_dir))
        assert code == 2

    def test_evaluate_rejects_plain_model(self, synth_dir, tmp_path):
        model = write_json(tmp_path / "model.json", {"kind": "lcca", "proj_x": [[1.0]], "proj_y": [[1.0]],
                                                     "canon_corr": [0.5], "mean_x": [0.0], "mean_y": [0.0],
                                                     "ridge_used": [0.0, 0.0]})
        out = synth_dir / "synth"
        code = main(["evaluate", "--bundle", model, "--stimulus", str(out / "view0.csv"),
                     "--response", str(out / "view1.csv")])
        assert code == 2

    def test_unexpected_error(self, synth_dir):
        with patch("app.main.PipelineManager.run", side_effect=RuntimeError("boom")):
            assert main(["fit"] + data_args(synth_dir)) == 1


class TestFeatures:
    """features 子命令测试（音频读取用 mock 替代）"""

    def test_features(self, tmp_path, capsys):
        fs = 16000
        t = np.arange(fs * 2) / fs
        audio = (np.sin(2 * np.pi * 220 * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))).astype(np.float32)
        with patch("app.main.librosa.load", return_value=(audio, fs)) as load:
            code = main(["features", "--audio", "speech.wav", "--out-dir", str(tmp_path)])
        assert code == 0
        load.assert_called_once_with("speech.wav", sr=None, mono=True)
        out = json.loads(capsys.readouterr().out)
        assert out["frame_rate_hz"] == 80.0
        for name in ("features.csv", "stimulus_3d.csv", "envelope.csv"):
            assert os.path.exists(tmp_path / name)

    def test_unreadable_audio(self, tmp_path):
        with patch("app.main.librosa.load", side_effect=FileNotFoundError("no such file")):
            assert main(["features", "--audio", "x.wav", "--out-dir", str(tmp_path)]) == 3


class TestParseValues:

    def test_json_items(self):
        assert parse_values("0, 0.1,10,") == [0, 0.1, 10]

    def test_bad_item(self):
        with pytest.raises(ConfigError):
            parse_values("0.1,abc")
