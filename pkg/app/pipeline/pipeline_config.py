"""
流水线配置
JSON 文件，带版本号 schema_version，未知字段报错
"""
import json
from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from app.utils.errors import ConfigError

PIPELINES = ("lcca", "dcca", "lmlc", "lmdc", "dmlc", "dmdc")
PipelineName = Literal["lcca", "dcca", "lmlc", "lmdc", "dmlc", "dmdc"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PreprocessingConfig(StrictModel):
    """预处理：采样率、带通、PCA维数、滤波器组"""
    fs_hz: float = Field(64.0, gt=0)
    bandpass: Optional[Tuple[float, float]] = (0.1, 12.0)
    pca_first: int = Field(60, ge=1)
    pca_second: int = Field(139, ge=1)
    filterbank: bool = True
    filterbank_order: int = Field(64, ge=2)
    burn_in: Optional[int] = Field(None, ge=0)

    @field_validator("bandpass")
    @classmethod
    def check_band(cls, v):
        if v is not None and not 0 < v[0] < v[1]:
            raise ValueError(f"通带必须满足 0 < low < high: {v}")
        return v


class StimulusConfig(StrictModel):
    """刺激特征与时间延迟数 d_s"""
    feature: Literal["envelope", "pc1", "rms", "flux"] = "envelope"
    lags: int = Field(60, ge=1)


class ModelConfig(StrictModel):
    """模型超参数"""
    d_cca: int = Field(1, ge=1)
    d_mcca: int = Field(10, ge=1)
    eta: float = Field(1e-3, ge=0)
    batch: int = Field(2048, ge=2)
    dropout: float = Field(0.0, ge=0, lt=1)
    mse_weight: float = Field(0.1, ge=0)
    epochs: int = Field(100, ge=0)
    seeds: int = Field(5, ge=1)
    patience: int = Field(10, ge=1)
    hidden_dcca: List[int] = Field(default_factory=lambda: [2038, 1608])
    hidden_encoder: List[int] = Field(default_factory=lambda: [60, 60])
    hidden_decoder: List[int] = Field(default_factory=lambda: [60, 110])
    activation: Literal["leaky_relu", "linear"] = "leaky_relu"
    leaky_slope: float = Field(0.1, ge=0)
    ridge: Optional[float] = Field(None, ge=0)
    corr_ridge: Optional[float] = Field(None, ge=0)

    @field_validator("hidden_dcca", "hidden_encoder", "hidden_decoder")
    @classmethod
    def check_widths(cls, v):
        if any(w < 1 for w in v):
            raise ValueError(f"隐层宽度必须≥1: {v}")
        return v


class CvConfig(StrictModel):
    """交叉验证：kfold（测试块 i、验证块 i+1、其余训练）或 holdout 比例划分"""
    scheme: Literal["kfold", "holdout"] = "kfold"
    folds: int = Field(20, ge=3)
    fractions: Tuple[float, float, float] = (0.9, 0.05, 0.05)
    contiguous: bool = True

    @field_validator("fractions")
    @classmethod
    def check_fractions(cls, v):
        if any(f <= 0 for f in v):
            raise ValueError(f"划分比例必须为正: {v}")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"划分比例之和必须为1: {v}")
        return v


class EvalConfig(StrictModel):
    """评价：d′ 片段长度、片段数、基线对比"""
    segment_seconds: List[float] = Field(default_factory=lambda: [1.0, 5.0, 30.0])
    n_segments: int = Field(200, ge=2)
    baseline: Optional[PipelineName] = None
    bonferroni_tests: int = Field(2, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)


class PipelineConfig(StrictModel):
    """流水线配置"""
    schema_version: Literal[1] = 1
    pipeline: PipelineName = "lcca"
    preprocessing: PreprocessingConfig = Field(default_factory=PreprocessingConfig)
    stimulus: StimulusConfig = Field(default_factory=StimulusConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    cv: CvConfig = Field(default_factory=CvConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    seed: int = 0

    @model_validator(mode="after")
    def check_baseline(self):
        if self.eval.baseline == self.pipeline:
            raise ValueError(f"基线不能与当前流水线相同: {self.pipeline}")
        return self

    @property
    def is_multiway(self) -> bool:
        """是否先经过MCCA去噪阶段（LM*/DM*）"""
        return self.pipeline in ("lmlc", "lmdc", "dmlc", "dmdc")

    @property
    def m_stage(self) -> Optional[str]:
        if not self.is_multiway:
            return None
        return "lmcca" if self.pipeline.startswith("l") else "dmcca"

    @property
    def cca_stage(self) -> str:
        return "lcca" if self.pipeline in ("lcca", "lmlc", "dmlc") else "dcca"


def validate_config(data: dict) -> PipelineConfig:
    """校验配置字典，失败时抛出 ConfigError"""
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"配置校验失败: {details}") from e


def load_pipeline_config(path: str) -> PipelineConfig:
    """读取并校验JSON配置文件"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"配置文件不存在: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件解析失败: {path} 第{e.lineno}行第{e.colno}列: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件必须是JSON对象: {path}")
    return validate_config(data)
