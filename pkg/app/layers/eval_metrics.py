"""
评价指标
Pearson 相关、Fisher z 平均、对齐/错位片段分类的 d′、单尾配对 t 检验与 Bonferroni 校正
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence
import numpy as np
from scipy import stats
from app.components import linalg_core
from app.utils.errors import (
    BoundaryError, ConfigError, DegenerateVarianceError, InputError, ShapeError
)
from app.utils.logger import logger


@dataclass(frozen=True)
class SegmentClassResult:
    """片段分类结果"""
    segment_seconds: float
    aligned_corrs: np.ndarray
    misaligned_corrs: np.ndarray
    d_prime: float


@dataclass(frozen=True)
class TTestResult:
    """配对 t 检验结果"""
    t: float
    p: float
    n: int
    alternative: str = "greater"

    def significant(self, alpha: float) -> bool:
        return self.p < alpha


def _vector(a, name: str) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} 包含非有限值")
    return v


def pearson(a, b) -> float:
    """样本 Pearson 相关系数"""
    x, y = _vector(a, "a"), _vector(b, "b")
    if x.size != y.size:
        raise ShapeError(f"序列长度不一致: {x.size} vs {y.size}")
    if x.size < 2:
        raise InputError(f"Pearson 相关至少需要2个样本，实际: {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateVarianceError("输入为常数序列，相关系数无定义")
    return float(stats.pearsonr(x, y)[0])


def z_average(corrs: Sequence[float]) -> float:
    """Fisher z 平均：tanh(mean(atanh(r)))，求和顺序无关"""
    r = _vector(corrs, "corrs")
    if r.size == 0:
        raise InputError("相关系数序列为空")
    if np.any(np.abs(r) >= 1.0):
        raise BoundaryError(f"|r| = 1 时 atanh 发散: {r[np.abs(r) >= 1.0].tolist()}")
    z = np.arctanh(r)
    return float(np.tanh(math.fsum(z.tolist()) / r.size))


def clip_for_average(corrs: Sequence[float], eps: float = 1e-12) -> List[float]:
    """报告聚合前将 |r| ≥ 1 的值截断到 ±(1-eps)"""
    out = []
    for r in corrs:
        if abs(r) >= 1.0:
            logger.warning(f"相关系数 {r} 落在边界，聚合前截断")
            r = math.copysign(1.0 - eps, r)
        out.append(float(r))
    return out


def cohens_d_prime(aligned, misaligned) -> float:
    """d′ = |μ1 − μ2| / sqrt(½(σ1² + σ2²))，样本方差"""
    a, b = _vector(aligned, "aligned"), _vector(misaligned, "misaligned")
    if a.size < 2 or b.size < 2:
        raise InputError(f"两组样本至少各需2个，实际: {a.size}, {b.size}")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        raise DegenerateVarianceError("两组样本方差均为0，d′无定义")
    return float(abs(a.mean() - b.mean()) / math.sqrt(0.5 * (va + vb)))


def aligned_segment_corrs(stim, resp, starts: Sequence[int], length: int) -> np.ndarray:
    """在给定起点上截取同起点片段，返回第一维的逐片段相关"""
    s = linalg_core.as_matrix(stim, "stim")[:, 0]
    r = linalg_core.as_matrix(resp, "resp")[:, 0]
    if s.size != r.size:
        raise ShapeError(f"刺激与响应长度不一致: {s.size} vs {r.size}")
    return np.array([pearson(s[i:i + length], r[i:i + length]) for i in starts])


def segment_classify(stim, resp, seg_seconds: float, n_segments: int = 200,
                     rng_seed: int = 0, fs_hz: Optional[float] = None) -> SegmentClassResult:
    """
    对齐/错位片段分类

    对齐片段在两信号中取同一起点；错位片段的两个起点独立随机，相距至少一个片段长度；
    使用投影第一维计算逐片段 Pearson 相关，再求 d′

    Args:
        stim, resp: 投影后的刺激与响应（TimeSeriesMatrix 或数组）
        seg_seconds: 片段时长（秒）
        n_segments: 对齐与错位片段各自的数量
        rng_seed: 随机种子
        fs_hz: 采样率；缺省取 stim 的采样率
    """
    if fs_hz is None:
        fs_hz = getattr(stim, "fs_hz", None)
    if not fs_hz:
        raise ConfigError("片段分类需要采样率")
    if n_segments < 2:
        raise ConfigError(f"片段数至少为2: {n_segments}")
    s = linalg_core.as_matrix(stim, "stim")[:, :1]
    r = linalg_core.as_matrix(resp, "resp")[:, :1]
    m = s.shape[0]
    if r.shape[0] != m:
        raise ShapeError(f"刺激与响应长度不一致: {m} vs {r.shape[0]}")
    L = int(round(seg_seconds * fs_hz))
    if L < 2 or m < 2 * L:
        raise InputError(f"记录长度({m})不足以抽取相距至少{L}个样本的错位片段")

    rng = np.random.default_rng(rng_seed)
    aligned_starts = rng.integers(0, m - L + 1, size=n_segments)
    aligned = aligned_segment_corrs(s, r, aligned_starts, L)

    last = m - L
    misaligned = np.empty(n_segments)
    for k in range(n_segments):
        while True:
            s1 = int(rng.integers(0, last + 1))
            left = max(0, s1 - L + 1)
            right = max(0, last - (s1 + L) + 1)
            if left + right:
                break
        j = int(rng.integers(0, left + right))
        s2 = j if j < left else s1 + L + (j - left)
        misaligned[k] = pearson(s[s1:s1 + L, 0], r[s2:s2 + L, 0])

    d_prime = cohens_d_prime(aligned, misaligned)
    return SegmentClassResult(
        segment_seconds=float(seg_seconds),
        aligned_corrs=aligned,
        misaligned_corrs=misaligned,
        d_prime=d_prime,
    )


def paired_t_test(a, b, alternative: str = "greater") -> TTestResult:
    """单尾配对 t 检验，自由度 n-1，p 值取 t 分布生存函数"""
    x, y = _vector(a, "a"), _vector(b, "b")
    if x.size != y.size:
        raise ShapeError(f"配对样本长度不一致: {x.size} vs {y.size}")
    if x.size < 2:
        raise InputError(f"配对样本至少需要2对，实际: {x.size}")
    if alternative not in ("greater", "less"):
        raise ConfigError(f"不支持的备择假设: {alternative}")
    diff = x - y
    sd = diff.std(ddof=1)
    if sd == 0:
        raise DegenerateVarianceError("配对差值方差为0，t 统计量无定义")
    n = diff.size
    t = float(diff.mean() / (sd / math.sqrt(n)))
    p = stats.t.sf(t, n - 1) if alternative == "greater" else stats.t.cdf(t, n - 1)
    return TTestResult(t=t, p=float(p), n=n, alternative=alternative)


def bonferroni_alpha(alpha: float, n_tests: int) -> float:
    """Bonferroni 校正后的显著性阈值"""
    if n_tests < 1:
        raise ConfigError(f"检验次数至少为1: {n_tests}")
    return alpha / n_tests
