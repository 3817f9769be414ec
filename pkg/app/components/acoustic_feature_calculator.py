"""
声学特征计算器
25ms 帧、50% 重叠上的 20 个频谱/时域特征，以及 PC1/RMS/谱通量三维刺激表示
"""
from dataclasses import dataclass
from typing import List, Optional
import numpy as np
import librosa
from scipy import signal as sps
from scipy.spatial.distance import pdist
from scipy.stats import entropy
from app.components.signal_processor import SignalProcessor
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DataError, InputError
from app.utils.logger import logger

FEATURE_NAMES: List[str] = [
    "zcr",
    "centroid",
    "high_low_ratio",
    "spread",
    "rolloff",
    "entropy",
    "flatness",
    "roughness",
    "rms",
    "flux",
] + [f"subband_flux_{i:02d}" for i in range(1, 11)]

STIMULUS_3D_NAMES: List[str] = ["pc1", "rms", "flux"]


@dataclass
class FrameSpec:
    """分帧参数"""
    frame_ms: float = 25.0
    hop_fraction: float = 0.5
    window: str = "rectangular"  # rectangular / hann

    def __post_init__(self):
        if not 0 < self.hop_fraction <= 1:
            raise ConfigError(f"hop_fraction 必须在 (0, 1] 内: {self.hop_fraction}")
        if self.frame_ms <= 0:
            raise ConfigError(f"frame_ms 必须为正数: {self.frame_ms}")
        if self.window not in ("rectangular", "hann"):
            raise ConfigError(f"不支持的窗函数: {self.window}")

    def frame_length(self, fs: float) -> int:
        return max(2, int(round(self.frame_ms * fs / 1000.0)))

    def hop_length(self, fs: float) -> int:
        return max(1, int(round(self.frame_length(fs) * self.hop_fraction)))


class AcousticFeatureCalculator:
    """声学特征计算器"""

    def __init__(self, spec: Optional[FrameSpec] = None):
        self.spec = spec or FrameSpec()
        self.processor = SignalProcessor()

    def extract_features(self, audio, fs: float) -> TimeSeriesMatrix:
        """
        逐帧计算 20 个特征，列顺序见 FEATURE_NAMES

        Args:
            audio: 音频采样序列
            fs: 采样率

        Returns:
            帧数 × 20 的特征矩阵，采样率为帧率 fs/hop
        """
        x = np.ascontiguousarray(np.asarray(audio, dtype=np.float64).ravel())
        L = self.spec.frame_length(fs)
        hop = self.spec.hop_length(fs)
        if x.size < L:
            raise InputError(f"音频长度({x.size})小于一帧({L}个采样)")
        nyq = fs / 2
        if nyq <= 50:
            raise ConfigError(f"采样率过低，无法划分子带: {fs}Hz")

        frames = librosa.util.frame(x, frame_length=L, hop_length=hop)
        if self.spec.window == "hann":
            win = sps.get_window("hann", L, fftbins=True)
        else:
            win = np.ones(L)
        M = np.abs(np.fft.rfft(frames * win[:, None], axis=0))
        freqs = np.fft.rfftfreq(L, d=1.0 / fs)
        F, T = M.shape

        zcr = np.rint(
            librosa.feature.zero_crossing_rate(x, frame_length=L, hop_length=hop, center=False)[0] * L
        )[:T]
        centroid = librosa.feature.spectral_centroid(S=M, freq=freqs)[0]
        spread = librosa.feature.spectral_bandwidth(S=M, freq=freqs, p=2)[0]
        rolloff = librosa.feature.spectral_rolloff(S=M, freq=freqs, roll_percent=0.85)[0]
        flatness = librosa.feature.spectral_flatness(S=M, power=1.0, amin=1e-10)[0]
        rms = librosa.feature.rms(S=M, frame_length=L)[0]

        high_low = M.max(axis=0) / np.maximum(M.min(axis=0), 1e-12)

        total = M.sum(axis=0)
        voiced = total > 0
        ent = np.zeros(T)
        if voiced.any():
            ent[voiced] = entropy(M[:, voiced], axis=0) / np.log(F)

        roughness = np.array([self._roughness(M[:, t], freqs) for t in range(T)])

        # 单位和归一化后的谱通量，首帧定义为0
        N = np.where(voiced, M / np.where(voiced, total, 1.0), 0.0)
        flux = np.zeros(T)
        flux[1:] = np.linalg.norm(np.diff(N, axis=1), axis=0)

        edges = np.geomspace(50.0, nyq, 11)
        diff_sq = np.zeros_like(M)
        diff_sq[:, 1:] = np.diff(M, axis=1) ** 2
        subband = np.zeros((T, 10))
        for b in range(10):
            if b == 9:
                sel = (freqs >= edges[b]) & (freqs <= edges[b + 1])
            else:
                sel = (freqs >= edges[b]) & (freqs < edges[b + 1])
            subband[:, b] = diff_sq[sel].sum(axis=0)

        data = np.column_stack([
            zcr, centroid, high_low, spread, rolloff, np.clip(ent, 0.0, 1.0),
            np.clip(flatness, 0.0, 1.0), roughness, rms, flux, subband,
        ])
        logger.debug(f"提取声学特征: {T} 帧, 帧长 {L}, 帧移 {hop}")
        return TimeSeriesMatrix(data, fs / hop, list(FEATURE_NAMES))

    def _roughness(self, mag: np.ndarray, freqs: np.ndarray) -> float:
        """谱峰（高于帧最大幅值10%的局部极大）之间的平均两两距离（Hz）"""
        peak_max = mag.max()
        if peak_max <= 0:
            return 0.0
        peaks, _ = sps.find_peaks(mag, height=0.1 * peak_max)
        if len(peaks) < 2:
            return 0.0
        return float(np.mean(pdist(freqs[peaks][:, None])))

    def stimulus_3d(self, features: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """
        三维刺激表示：标准化特征的第一主成分、RMS、宽带谱通量

        常数特征列不参与PCA并给出警告
        """
        if features.n_samples < 2:
            raise InputError(f"至少需要2帧，实际: {features.n_samples}")
        labels = features.labels()
        data = features.data
        std = data.std(axis=0, ddof=1)
        keep = std > 0
        if not keep.all():
            dropped = [labels[i] for i in np.flatnonzero(~keep)]
            logger.warning(f"常数特征列不参与PCA: {dropped}")
        if not keep.any():
            raise DataError("所有特征列均为常数，无法计算PC1")
        z = (data[:, keep] - data[:, keep].mean(axis=0)) / std[keep]
        zs = features.with_data(z, [labels[i] for i in np.flatnonzero(keep)])
        pca = self.processor.fit_pca(zs, 1)
        pc1 = self.processor.apply_pca(pca, zs).data[:, 0]
        rms = features.column("rms").data[:, 0]
        flux = features.column("flux").data[:, 0]
        return features.with_data(np.column_stack([pc1, rms, flux]), STIMULUS_3D_NAMES)
