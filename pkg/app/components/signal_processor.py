"""
信号预处理器
包络提取、重采样、零相位带通、21带对数间隔FIR滤波器组、PCA、时间延迟嵌入
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple
import numpy as np
from scipy import signal as sps
from app.components import linalg_core
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, InputError, ShapeError
from app.utils.logger import logger


@dataclass
class FilterBank:
    """FIR 带通滤波器组（对称抽头，线性相位）"""
    taps: List[np.ndarray]
    bands: List[Tuple[float, float]]
    fs_hz: float

    @property
    def n_bands(self) -> int:
        return len(self.taps)

    @property
    def max_order(self) -> int:
        return max(len(h) for h in self.taps) - 1

    @property
    def edge(self) -> int:
        """居中卷积单侧受零填充影响的样本数"""
        return self.max_order // 2

    def centers(self) -> np.ndarray:
        """几何中心频率"""
        return np.array([math.sqrt(lo * hi) for lo, hi in self.bands])

    def to_dict(self) -> Dict:
        return {
            "fs_hz": self.fs_hz,
            "bands": [list(b) for b in self.bands],
            "taps": [h.tolist() for h in self.taps],
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "FilterBank":
        return cls(
            taps=[np.asarray(h, dtype=np.float64) for h in d["taps"]],
            bands=[(float(lo), float(hi)) for lo, hi in d["bands"]],
            fs_hz=float(d["fs_hz"]),
        )


@dataclass
class PcaTransform:
    """PCA 变换：均值、主轴（列正交）、各主轴方差"""
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    input_labels: Optional[List[str]] = field(default=None)

    @property
    def k(self) -> int:
        return self.components.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.components.shape[0]

    def to_dict(self) -> Dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "input_labels": self.input_labels,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "PcaTransform":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64),
            explained_variance=np.asarray(d["explained_variance"], dtype=np.float64),
            input_labels=d.get("input_labels"),
        )


def _rational(fs_out: float, fs_in: float) -> Tuple[int, int]:
    """采样率比值的有理近似 up/down"""
    ratio = Fraction(fs_out / fs_in).limit_denominator(1000)
    if ratio.numerator < 1:
        raise ConfigError(f"采样率比值过小: {fs_out}/{fs_in}")
    return ratio.numerator, ratio.denominator


class SignalProcessor:
    """信号预处理器"""

    def envelope(
        self,
        audio,
        fs_in: float,
        fs_out: float = 64.0,
        smooth_ms: float = 15.6,
        compress: bool = True
    ) -> TimeSeriesMatrix:
        """
        提取语音/音乐包络

        平方 → 矩形窗滑动平均 → 抗混叠低通并降采样 → 立方根压缩

        Args:
            audio: 音频采样序列
            fs_in: 输入采样率
            fs_out: 输出采样率，默认64Hz
            smooth_ms: 平滑窗长（毫秒），默认一个64Hz采样周期
            compress: 是否立方根压缩

        Returns:
            m×1 的包络时间序列（非负）
        """
        x = np.asarray(audio, dtype=np.float64).ravel()
        if x.size == 0:
            raise InputError("音频为空，无法提取包络")
        if fs_in < 2 * fs_out:
            raise ConfigError(f"输入采样率({fs_in})必须不小于输出采样率({fs_out})的2倍")

        power = x ** 2
        win = max(1, int(round(smooth_ms * fs_in / 1000.0)))
        smoothed = np.convolve(power, np.ones(win) / win, mode="same")

        up, down = _rational(fs_out, fs_in)
        env = sps.resample_poly(smoothed, up, down)
        env = np.clip(env, 0.0, None)
        if compress:
            env = np.cbrt(env)
        return TimeSeriesMatrix(env[:, None], fs_out, ["envelope"])

    def resample(self, X: TimeSeriesMatrix, fs_out: float) -> TimeSeriesMatrix:
        """多相抗混叠重采样"""
        if fs_out <= 0:
            raise ConfigError(f"目标采样率必须为正数: {fs_out}")
        if math.isclose(X.fs_hz, fs_out):
            return X.with_data(X.data.copy(), X.channel_labels)
        up, down = _rational(fs_out, X.fs_hz)
        data = sps.resample_poly(X.data, up, down, axis=0)
        logger.debug(f"重采样 {X.fs_hz}Hz → {fs_out}Hz: {X.n_samples} → {data.shape[0]} 个样本")
        return X.with_data(data, X.channel_labels, fs_hz=fs_out)

    def bandpass_kernel(self, fs_hz: float, low_hz: float = 0.1, high_hz: float = 12.0) -> np.ndarray:
        """
        零相位带通核：FIR 与自身卷积（等价于前向-后向滤波）

        过渡带宽取 low_hz 与 (Nyquist - high_hz) 的较小者
        """
        nyq = fs_hz / 2
        if not (0 < low_hz < high_hz < nyq):
            raise ConfigError(f"无效的通带: [{low_hz}, {high_hz}] Hz（Nyquist={nyq}Hz）")
        tw = min(low_hz, nyq - high_hz)
        numtaps = int(math.ceil(3.3 * fs_hz / tw)) | 1
        h = sps.firwin(numtaps, [low_hz, high_hz], pass_zero=False, fs=fs_hz)
        return np.convolve(h, h)

    def bandpass_edge(self, fs_hz: float, low_hz: float = 0.1, high_hz: float = 12.0) -> int:
        """带通后单侧受零填充影响的样本数"""
        return (len(self.bandpass_kernel(fs_hz, low_hz, high_hz)) - 1) // 2

    def bandpass(self, X: TimeSeriesMatrix, low_hz: float = 0.1, high_hz: float = 12.0) -> TimeSeriesMatrix:
        """零相位FIR带通（卷积边界零填充）"""
        kernel = self.bandpass_kernel(X.fs_hz, low_hz, high_hz)
        data = sps.fftconvolve(X.data, kernel[:, None], mode="same", axes=0)
        return X.with_data(data, X.channel_labels)

    def design_filterbank(
        self,
        fs_hz: float,
        n_bands: int = 21,
        order: int = 64,
        f_min: float = 0.25,
        f_max_ratio: float = 0.8
    ) -> FilterBank:
        """
        设计对数间隔的倍频程带通滤波器组

        中心频率在 [f_min, f_max_ratio × Nyquist] 上几何等分，每带一个倍频程宽，
        上沿不超过 0.95 × Nyquist；抽头数取 order+1 与 3.3·fs/带宽 的较大者（奇数）
        """
        nyq = fs_hz / 2
        f_max = f_max_ratio * nyq
        if n_bands < 1 or not (0 < f_min < f_max):
            raise ConfigError(f"无效的滤波器组参数: n_bands={n_bands}, f_min={f_min}, f_max={f_max}")
        centers = np.geomspace(f_min, f_max, n_bands)
        taps, bands = [], []
        for fc in centers:
            lo = fc / math.sqrt(2)
            hi = min(fc * math.sqrt(2), 0.95 * nyq)
            numtaps = max(order + 1, int(math.ceil(3.3 * fs_hz / (hi - lo)))) | 1
            taps.append(sps.firwin(numtaps, [lo, hi], pass_zero=False, fs=fs_hz))
            bands.append((float(lo), float(hi)))
        return FilterBank(taps=taps, bands=bands, fs_hz=float(fs_hz))

    def apply_filterbank(self, X: TimeSeriesMatrix, fb: FilterBank) -> TimeSeriesMatrix:
        """
        每个通道经过每个滤波器（居中卷积，零填充）

        输出列顺序：通道为主、滤波器为次（列 = 通道 × n_bands + 滤波器）
        """
        if not math.isclose(fb.fs_hz, X.fs_hz):
            raise ConfigError(f"滤波器组采样率({fb.fs_hz})与数据采样率({X.fs_hz})不一致")
        m, c = X.data.shape
        out = np.empty((m, c * fb.n_bands))
        for j, h in enumerate(fb.taps):
            out[:, j::fb.n_bands] = sps.fftconvolve(X.data, h[:, None], mode="same", axes=0)
        labels = [f"{label}_fb{j:02d}" for label in X.labels() for j in range(fb.n_bands)]
        return X.with_data(out, labels)

    def fit_pca(self, X: TimeSeriesMatrix, k: int) -> PcaTransform:
        """在样本协方差上求前k个主轴（符号约定同 linalg_core）"""
        c = X.n_channels
        if not 1 <= k <= c:
            raise ConfigError(f"PCA维度k={k}超出范围[1, {c}]")
        mean = X.data.mean(axis=0)
        cov = linalg_core.covariance(X.data - mean, centered=True)
        eig = linalg_core.sym_eig(cov)
        return PcaTransform(
            mean=mean,
            components=eig.eigenvectors[:, :k].copy(),
            explained_variance=np.clip(eig.eigenvalues[:k], 0.0, None),
            input_labels=X.labels(),
        )

    def apply_pca(self, t: PcaTransform, X: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """去均值后投影到主轴"""
        if X.n_channels != t.n_inputs:
            raise ShapeError(f"PCA输入维度不匹配: 期望{t.n_inputs}，实际{X.n_channels}")
        Z = (X.data - t.mean) @ t.components
        return X.with_data(Z, [f"pc{i + 1}" for i in range(t.k)])

    def reconstruct_pca(self, t: PcaTransform, Z: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """由主成分重建原空间"""
        if Z.n_channels != t.k:
            raise ShapeError(f"主成分维度不匹配: 期望{t.k}，实际{Z.n_channels}")
        return Z.with_data(Z.data @ t.components.T + t.mean, t.input_labels)

    def time_lag(self, X: TimeSeriesMatrix, lags: int) -> TimeSeriesMatrix:
        """
        时间延迟嵌入：列为 X 延迟 0…lags-1 个样本，前导样本补零

        输出列顺序：通道为主、延迟为次
        """
        m, c = X.data.shape
        if lags < 1:
            raise ConfigError(f"延迟数必须≥1: {lags}")
        if lags >= m:
            raise ConfigError(f"延迟数({lags})必须小于样本数({m})")
        out = np.zeros((m, c * lags))
        for j in range(lags):
            out[j:, j::lags] = X.data[:m - j]
        labels = [f"{label}_lag{j}" for label in X.labels() for j in range(lags)]
        return X.with_data(out, labels)
