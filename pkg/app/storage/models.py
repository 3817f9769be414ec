"""
数据模型定义
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence
import numpy as np
from app.utils.errors import DataError, ShapeError


@dataclass
class TimeSeriesMatrix:
    """时间序列矩阵：样本 × 通道，附带采样率与通道名"""
    data: np.ndarray
    fs_hz: float
    channel_labels: Optional[List[str]] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"时间序列必须是非空二维矩阵，实际形状: {data.shape}")
        if not np.isfinite(self.fs_hz) or self.fs_hz <= 0:
            raise DataError(f"采样率必须为正数: {self.fs_hz}")
        bad = np.argwhere(~np.isfinite(data))
        if bad.size:
            row, col = bad[0]
            raise DataError(f"数据包含非有限值: 行={row}, 列={col}")
        if self.channel_labels is not None:
            labels = [str(label) for label in self.channel_labels]
            if len(labels) != data.shape[1]:
                raise ShapeError(
                    f"通道名数量({len(labels)})与列数({data.shape[1]})不一致"
                )
            self.channel_labels = labels
        self.data = data
        self.fs_hz = float(self.fs_hz)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def labels(self) -> List[str]:
        """通道名（未命名时生成 ch0, ch1, ...）"""
        if self.channel_labels is not None:
            return list(self.channel_labels)
        return [f"ch{i}" for i in range(self.n_channels)]

    def with_data(self, data: np.ndarray, labels: Optional[Sequence[str]] = None,
                  fs_hz: Optional[float] = None) -> "TimeSeriesMatrix":
        """沿用采样率生成新的时间序列"""
        return TimeSeriesMatrix(
            data=data,
            fs_hz=self.fs_hz if fs_hz is None else fs_hz,
            channel_labels=list(labels) if labels is not None else None,
        )

    def rows(self, index) -> "TimeSeriesMatrix":
        """按样本索引取子序列"""
        return TimeSeriesMatrix(self.data[index], self.fs_hz, self.channel_labels)

    def column(self, label: str) -> "TimeSeriesMatrix":
        """按通道名取单列"""
        labels = self.labels()
        if label not in labels:
            raise ShapeError(f"通道不存在: {label}，可选: {labels}")
        idx = labels.index(label)
        return TimeSeriesMatrix(self.data[:, idx:idx + 1], self.fs_hz, [label])


@dataclass
class SynthSpec:
    """合成数据规格"""
    n_views: int = 4
    latent_dim: int = 2
    view_dims: List[int] = field(default_factory=lambda: [16, 16, 16, 8])
    snr_db: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    mixing: str = "linear"  # linear / cubic / tanh
    temporal: str = "white"  # white / ar1
    ar_coef: float = 0.95
    m: int = 50000
    seed: int = 0
    fs_hz: float = 64.0
    distorted_views: Optional[List[int]] = None  # None = 除第0个视图外全部


@dataclass
class SynthBundle:
    """合成数据包：潜变量、各视图、以及解析总体相关"""
    latent: TimeSeriesMatrix
    views: List[TimeSeriesMatrix]
    population_corr: List[Optional[float]]
    noise: List[np.ndarray]
    spec: SynthSpec
