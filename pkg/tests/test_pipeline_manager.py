"""
流水线管理器测试
"""
import os
import numpy as np
import pytest
from app.components.signal_processor import SignalProcessor
from app.components.synth_generator import SynthGenerator
from app.layers.eval_metrics import clip_for_average, z_average
from app.pipeline.pipeline_config import PIPELINES
from app.pipeline.pipeline_manager import PipelineManager, PreparedData, StageBundle
from app.pipeline.report_builder import ReportBuilder
from app.storage.model_store import ModelRepository
from app.storage.models import SynthSpec, TimeSeriesMatrix
from app.utils.errors import ConfigError, DataError, InputError, PipelineStageError
from tests.conftest import FS, make_recording, small_config

PAPER_DIMS = {
    "response_pca_first": 60,
    "response_filterbank": 1260,
    "response_pca_second": 139,
    "stimulus_filterbank": 21,
}


def without_clock(report):
    report = dict(report)
    report.pop("wall_clock_seconds")
    return ReportBuilder.dumps(report)


class TestPrepareAndFolds:
    """预处理与折划分测试"""

    def test_select_feature(self):
        stim = TimeSeriesMatrix(np.ones((10, 3)), FS, ["pc1", "rms", "flux"])
        manager = PipelineManager(small_config(stimulus__feature="rms"))
        assert manager.select_feature(stim).labels() == ["rms"]
        manager = PipelineManager(small_config())
        assert manager.select_feature(stim).labels() == ["pc1"]
        with pytest.raises(DataError):
            PipelineManager(small_config(stimulus__feature="flux")).select_feature(
                TimeSeriesMatrix(np.ones((10, 1)), FS, ["envelope"]))

    def test_burn_in(self):
        fb_edge = SignalProcessor().design_filterbank(FS, order=64).edge
        assert fb_edge > 64
        manager = PipelineManager(small_config())
        assert (manager.burn_in(), manager.burn_out()) == (fb_edge, fb_edge)
        cfg = small_config("lmlc", stimulus={"feature": "envelope", "lags": 100})
        assert (PipelineManager(cfg).burn_in(), PipelineManager(cfg).burn_out()) == (fb_edge + 100, fb_edge)
        cfg = small_config(preprocessing__filterbank=False)
        assert (PipelineManager(cfg).burn_in(), PipelineManager(cfg).burn_out()) == (0, 0)
        cfg = small_config(preprocessing__burn_in=7)
        assert (PipelineManager(cfg).burn_in(), PipelineManager(cfg).burn_out()) == (7, fb_edge)

    def test_burn_in_covers_bandpass_kernel(self):
        """默认 0.1–12 Hz 带通核长 4225，单侧瞬态 2112 个样本"""
        bp_edge = SignalProcessor().bandpass_edge(FS, 0.1, 12.0)
        assert bp_edge == 2112
        fb_edge = SignalProcessor().design_filterbank(FS, order=64).edge
        manager = PipelineManager(small_config(preprocessing__bandpass=[0.1, 12.0]))
        assert manager.burn_in() == bp_edge + fb_edge
        assert manager.burn_out() == bp_edge + fb_edge

    def test_valid_window_matches_uncut_recording(self):
        """有效窗口内的带通+滤波器组输出与在更长录音上处理后截取的结果一致，两端瞬态不泄漏"""
        rng = np.random.default_rng(0)
        m, pad = 8000, 3000
        longer = TimeSeriesMatrix(rng.standard_normal((m + 2 * pad, 4)), FS)
        cut = longer.rows(slice(pad, pad + m))
        manager = PipelineManager(small_config(preprocessing__bandpass=[0.1, 12.0]))
        assert pad >= manager.burn_in()
        fb = manager.processor.design_filterbank(FS, order=64)

        def filtered(X):
            prepared = manager.prepare(X.column(X.labels()[0]), [X])
            return prepared, manager.processor.apply_filterbank(prepared.responses[0], fb).data

        prepared, short_out = filtered(cut)
        _, long_out = filtered(longer)
        valid = prepared.valid
        assert valid[0] == prepared.burn_in and valid[-1] == m - prepared.burn_out - 1
        scale = long_out.std()
        np.testing.assert_allclose(short_out[valid], long_out[valid + pad], atol=1e-9 * scale)
        assert np.max(np.abs(short_out[:64] - long_out[pad:pad + 64])) > 1e-3 * scale
        assert np.max(np.abs(short_out[-64:] - long_out[pad + m - 64:pad + m])) > 1e-3 * scale

    def test_truncates_to_common_length(self):
        stim, responses = make_recording(m=1000, n_subjects=1, channels=4)
        short = responses[0].rows(slice(0, 900))
        prepared = PipelineManager(small_config(preprocessing__filterbank=False)).prepare(stim, [short])
        assert prepared.n_samples == 900
        assert prepared.responses[0].n_samples == 900

    def test_kfold_blocks(self):
        manager = PipelineManager(small_config())
        prepared = PreparedData(TimeSeriesMatrix(np.zeros(1064), FS), [], burn_in=64)
        folds = manager.make_folds(prepared)
        assert len(folds) == 4
        tests = np.concatenate([f.test for f in folds])
        np.testing.assert_array_equal(np.sort(tests), np.arange(64, 1064))
        for i, f in enumerate(folds):
            np.testing.assert_array_equal(f.val, folds[(i + 1) % 4].test)
            assert len(np.intersect1d(f.train, np.concatenate([f.val, f.test]))) == 0
            assert len(f.train) + len(f.val) + len(f.test) == 1000

    def test_holdout(self):
        cfg = small_config(cv={"scheme": "holdout", "folds": 3, "fractions": [0.8, 0.1, 0.1],
                               "contiguous": False})
        prepared = PreparedData(TimeSeriesMatrix(np.zeros(1000), FS), [], burn_in=0)
        (split,) = PipelineManager(cfg).make_folds(prepared)
        assert (len(split.train), len(split.val), len(split.test)) == (800, 100, 100)
        assert np.all(np.diff(split.test) > 0)
        assert not np.array_equal(split.test, np.arange(900, 1000))
        again = PipelineManager(cfg).make_folds(prepared)[0]
        np.testing.assert_array_equal(again.test, split.test)

    def test_too_short(self):
        stim, responses = make_recording(m=60, n_subjects=1, channels=4)
        with pytest.raises(InputError):
            PipelineManager(small_config()).prepare(stim, responses)
        with pytest.raises(InputError):
            PipelineManager(small_config()).prepare(stim, [])


class TestRun:
    """端到端运行测试"""

    def test_lcca_dimensions_and_report(self, recording):
        stim, responses = recording
        report = PipelineManager(small_config()).run(stim, responses).report
        dims = report["stage_dims"]
        for key, value in PAPER_DIMS.items():
            assert dims[key] == value
        assert dims["response_input"] == 64 and dims["stimulus_input"] == 1
        assert len(report["entries"]) == 4 * 2
        assert [(e["fold"], e["subject"]) for e in report["entries"]] == sorted(
            (f, s) for f in range(4) for s in range(2))
        assert report["overall"] > 0.2
        assert [row["segment_seconds"] for row in report["d_prime"]] == [1.0, 5.0, 30.0]

    def test_overall_recomputable(self, recording):
        """整体值可由报告条目复算"""
        stim, responses = recording
        report = PipelineManager(small_config()).run(stim, responses).report
        corrs = [e["correlations"][0] for e in report["entries"]]
        assert report["overall"] == z_average(clip_for_average(corrs))
        assert report["per_subject"] == ReportBuilder.aggregate(report["entries"])["per_subject"]

    def test_deterministic_across_threads(self, recording):
        stim, responses = recording
        a = PipelineManager(small_config(), threads=1).run(stim, responses).report
        b = PipelineManager(small_config(), threads=3).run(stim, responses).report
        assert without_clock(a) == without_clock(b)

    def test_multiway_dimensions(self, recording):
        stim, responses = recording
        report = PipelineManager(small_config("lmlc")).run(stim, responses).report
        dims = report["stage_dims"]
        assert dims["response_mstage"] == 64
        assert dims["stimulus_reduced"] == 1
        for key, value in PAPER_DIMS.items():
            assert dims[key] == value

    def test_multiway_needs_two_subjects(self, recording):
        stim, responses = recording
        with pytest.raises(InputError):
            PipelineManager(small_config("lmlc")).run(stim, responses[:1])

    def test_stage_error_names_stage_and_fold(self, recording):
        stim, responses = recording
        cfg = small_config(model={**small_config().model.model_dump(), "d_cca": 30})
        with pytest.raises(PipelineStageError) as exc:
            PipelineManager(cfg).run(stim, responses)
        assert exc.value.stage == "lcca"
        assert exc.value.fold == 0
        assert exc.value.exit_code == 2

    def test_short_recording_d_prime_note(self, recording):
        stim, responses = recording
        cfg = small_config(eval={"segment_seconds": [60.0], "n_segments": 50})
        row = PipelineManager(cfg).run(stim, responses).report["d_prime"][0]
        assert row["per_subject"] == {"0": None, "1": None}
        assert row["mean"] is None
        assert set(row["notes"]) == {"0", "1"}

    def test_baseline_comparison(self, recording):
        stim, responses = recording
        cfg = small_config("lmlc", eval={"baseline": "lcca"})
        comparison = PipelineManager(cfg).run(stim, responses).report["comparison"]
        assert comparison["proposed"] == "lmlc" and comparison["baseline"] == "lcca"
        assert comparison["overall"]["n"] == 8
        assert comparison["alpha_corrected"] == 0.025
        assert set(comparison["per_subject"]) == {"0", "1"}
        assert len(comparison["baseline_entries"]) == 8

    @pytest.mark.slow
    @pytest.mark.parametrize("pipeline", PIPELINES)
    @pytest.mark.parametrize("feature", ["envelope", "pc1"])
    def test_smoke_matrix(self, pipeline, feature):
        """六种流水线 × 两种刺激特征均可运行，维度符合约定"""
        stim, responses = make_recording(feature_labels=("pc1", "rms", "flux", "envelope"))
        cfg = small_config(pipeline, stimulus={"feature": feature, "lags": 64})
        report = PipelineManager(cfg).run(stim, responses).report
        for key, value in PAPER_DIMS.items():
            assert report["stage_dims"][key] == value
        assert np.isfinite(report["overall"])


class TestBundles:
    """处理链保存与评估测试"""

    @pytest.fixture(scope="class")
    def fitted(self, tmp_path_factory):
        stim, responses = make_recording(seed=1)
        out_dir = str(tmp_path_factory.mktemp("fit"))
        result = PipelineManager(small_config(), out_dir=out_dir).run(stim, responses)
        return result, out_dir, stim, responses

    def test_outputs_written(self, fitted):
        _, out_dir, _, _ = fitted
        for name in ("report.json", "folds.csv", "subjects.svg", "d_prime.svg",
                     os.path.join("bundles", "subject0.json"), os.path.join("bundles", "subject1.json")):
            assert os.path.exists(os.path.join(out_dir, name))
        report = ReportBuilder.load_json(os.path.join(out_dir, "report.json"))
        assert len(ReportBuilder.fold_table(report)) == 8

    def test_bundle_round_trip(self, fitted):
        result, out_dir, stim, responses = fitted
        loaded = ModelRepository.load(os.path.join(out_dir, "bundles", "subject1.json"))
        assert isinstance(loaded, StageBundle)
        original = result.bundles[1]
        np.testing.assert_allclose(
            loaded.transform_response(responses[1]).data,
            original.transform_response(responses[1]).data,
            atol=1e-10,
        )

    def test_evaluate(self, fitted):
        result, _, _, _ = fitted
        stim, responses = make_recording(seed=1)
        manager = PipelineManager(small_config())
        out = manager.evaluate(result.bundles[0], stim, responses[0])
        assert out["subject"] == 0
        assert out["n_samples"] == 6000 - manager.burn_in() - manager.burn_out()
        assert len(out["correlations"]) == 1
        assert out["correlations"][0] > 0.2
        with pytest.raises(ConfigError):
            PipelineManager(small_config("dcca")).evaluate(result.bundles[0], stim, responses[0])


def synth_config(pipeline: str, pca: int = 1, **model):
    """白噪声合成数据：无带通、无滤波器组、单延迟、5折"""
    overrides = {f"model__{key}": value for key, value in model.items()}
    return small_config(pipeline, preprocessing__filterbank=False, preprocessing__pca_first=pca,
                        preprocessing__pca_second=pca, stimulus__lags=1, cv__folds=5, **overrides)


def synth_recording(spec: SynthSpec):
    bundle = SynthGenerator().generate(spec)
    return bundle.views[0], bundle.views[1:]


class TestSyntheticOracles:
    """合成数据上的端到端验收"""

    @pytest.mark.slow
    def test_lcca_recovers_population_correlation(self):
        """0 dB 线性数据，m=1e5：lcca 整体相关为 0.5 ± 0.03"""
        spec = SynthSpec(n_views=2, latent_dim=1, view_dims=[1, 8], snr_db=[0.0, 0.0], m=100000, seed=11)
        stim, responses = synth_recording(spec)
        report = PipelineManager(synth_config("lcca", pca=8)).run(stim, responses).report
        assert len(report["entries"]) == 5
        assert report["overall"] == pytest.approx(0.5, abs=0.03)

    @pytest.mark.slow
    def test_deep_mstage_beats_linear_on_cubic_data(self):
        """三次失真响应：5折 Fisher-z 平均的 dmlc 比 lmlc 高至少0.05"""
        spec = SynthSpec(n_views=3, latent_dim=1, view_dims=[1, 4, 4], snr_db=[20.0, 20.0, 20.0],
                         mixing="cubic", m=20000, seed=12)
        stim, responses = synth_recording(spec)
        hyper = dict(d_mcca=1, eta=0.01, batch=512, epochs=100, seeds=2, patience=15, mse_weight=0.1,
                     hidden_encoder=[32, 32], hidden_decoder=[32])
        deep = PipelineManager(synth_config("dmlc", **hyper)).run(stim, responses).report
        linear = PipelineManager(synth_config("lmlc", **hyper)).run(stim, responses).report
        assert deep["overall"] - linear["overall"] >= 0.05
