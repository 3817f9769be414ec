"""
公共测试数据：共享潜变量驱动的刺激与多通道响应
"""
from typing import List, Tuple
import numpy as np
import pytest
from app.layers.training_support import DataSplit
from app.pipeline.pipeline_config import PipelineConfig, validate_config
from app.storage.models import TimeSeriesMatrix

FS = 64.0


def make_recording(m: int = 6000, n_subjects: int = 2, channels: int = 64, seed: int = 0,
                   feature_labels: Tuple[str, ...] = ("envelope",)
                   ) -> Tuple[TimeSeriesMatrix, List[TimeSeriesMatrix]]:
    """平滑潜变量 → 刺激（可多列）与各被试响应（潜变量的随机混合加噪声）"""
    rng = np.random.default_rng(seed)
    kernel = np.hanning(16)
    latent = np.convolve(rng.standard_normal(m + 15), kernel / kernel.sum(), mode="valid")
    latent /= latent.std()
    stim_cols = [latent + 0.5 * rng.standard_normal(m) for _ in feature_labels]
    stimulus = TimeSeriesMatrix(np.column_stack(stim_cols), FS, list(feature_labels))
    responses = []
    for _ in range(n_subjects):
        a = rng.standard_normal(channels)
        data = np.outer(latent, a) + 2.0 * rng.standard_normal((m, channels))
        responses.append(TimeSeriesMatrix(data, FS, [f"e{j}" for j in range(channels)]))
    return stimulus, responses


def split_for(m: int) -> DataSplit:
    """前70%训练、中间15%验证、最后15%测试"""
    a, b = int(m * 0.7), int(m * 0.85)
    return DataSplit(train=np.arange(a), val=np.arange(a, b), test=np.arange(b, m))


def small_config(pipeline: str = "lcca", **overrides) -> PipelineConfig:
    """小网络、少折数、无带通的快速配置"""
    data = PipelineConfig().model_dump(mode="json")
    data["pipeline"] = pipeline
    data["preprocessing"]["bandpass"] = None
    data["stimulus"]["lags"] = 64
    data["model"].update({
        "d_mcca": 64, "batch": 512, "epochs": 2, "seeds": 1, "patience": 2,
        "hidden_dcca": [8], "hidden_encoder": [16], "hidden_decoder": [16],
    })
    data["cv"]["folds"] = 4
    for key, value in overrides.items():
        section, _, name = key.partition("__")
        if name:
            data[section][name] = value
        else:
            data[section] = value
    return validate_config(data)


@pytest.fixture(scope="module")
def recording():
    return make_recording()
