"""
合成数据生成器
共享潜变量经线性/非线性混合进入 N 个带噪视图，已知解析总体相关，用于验证
"""
import math
from typing import List, Optional
import numpy as np
from scipy import signal as sps
from app.storage.models import SynthBundle, SynthSpec, TimeSeriesMatrix
from app.utils.errors import ConfigError
from app.utils.logger import logger

MIXINGS = ("linear", "cubic", "tanh")
TEMPORALS = ("white", "ar1")


class SynthGenerator:
    """合成数据生成器"""

    def validate(self, spec: SynthSpec) -> None:
        """校验合成规格"""
        if spec.n_views < 2:
            raise ConfigError(f"视图数必须≥2: {spec.n_views}")
        if len(spec.view_dims) != spec.n_views or len(spec.snr_db) != spec.n_views:
            raise ConfigError(
                f"view_dims({len(spec.view_dims)})、snr_db({len(spec.snr_db)})长度必须等于视图数({spec.n_views})"
            )
        if spec.latent_dim < 1:
            raise ConfigError(f"潜变量维度必须≥1: {spec.latent_dim}")
        for n, dim in enumerate(spec.view_dims):
            if dim < spec.latent_dim:
                raise ConfigError(f"视图{n}维度({dim})小于潜变量维度({spec.latent_dim})")
        for n, snr in enumerate(spec.snr_db):
            if math.isnan(snr) or snr == -math.inf:
                raise ConfigError(f"视图{n}的信噪比无效: {snr}")
        if spec.mixing not in MIXINGS:
            raise ConfigError(f"不支持的混合方式: {spec.mixing}，可选: {MIXINGS}")
        if spec.temporal not in TEMPORALS:
            raise ConfigError(f"不支持的时间模型: {spec.temporal}，可选: {TEMPORALS}")
        if not -1 < spec.ar_coef < 1:
            raise ConfigError(f"AR(1)系数必须在(-1, 1)内: {spec.ar_coef}")
        if spec.m < 2:
            raise ConfigError(f"样本数必须≥2: {spec.m}")
        for n in self.distorted_views(spec):
            if not 0 <= n < spec.n_views:
                raise ConfigError(f"distorted_views 越界: {n}")

    def distorted_views(self, spec: SynthSpec) -> List[int]:
        """接受非线性混合的视图（缺省为除视图0外全部）"""
        if spec.mixing == "linear":
            return []
        if spec.distorted_views is None:
            return list(range(1, spec.n_views))
        return list(spec.distorted_views)

    def population_corr(self, snr_db: float) -> float:
        """线性视图沿每个潜变量方向的最佳线性相关 sqrt(s/(1+s))"""
        if snr_db == math.inf:
            return 1.0
        s = 10.0 ** (snr_db / 10.0)
        return math.sqrt(s / (1.0 + s))

    def generate(self, spec: SynthSpec) -> SynthBundle:
        """
        生成合成数据包

        视图 n = g(z)·A_n + 噪声，A_n 为 k×D_n 的正交行矩阵，
        噪声为各向同性高斯，方差 10^(-snr/10)，即每个潜变量方向上的信噪比为 snr_db
        """
        self.validate(spec)
        rng = np.random.default_rng(spec.seed)
        k, m = spec.latent_dim, spec.m

        eps = rng.standard_normal((m, k))
        if spec.temporal == "ar1":
            c = spec.ar_coef
            s = math.sqrt(1.0 - c * c)
            eps[0] /= s
            z = sps.lfilter([s], [1.0, -c], eps, axis=0)
        else:
            z = eps
        latent = TimeSeriesMatrix(z, spec.fs_hz, [f"z{i}" for i in range(k)])

        distorted = set(self.distorted_views(spec))
        views: List[TimeSeriesMatrix] = []
        noises: List[np.ndarray] = []
        corrs: List[Optional[float]] = []
        for n, (dim, snr) in enumerate(zip(spec.view_dims, spec.snr_db)):
            Q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
            A = Q.T
            source = z
            if n in distorted:
                source = z ** 3 if spec.mixing == "cubic" else np.tanh(z)
                source = (source - source.mean(axis=0)) / source.std(axis=0)
            sigma = 0.0 if snr == math.inf else 10.0 ** (-snr / 20.0)
            noise = sigma * rng.standard_normal((m, dim))
            views.append(TimeSeriesMatrix(source @ A + noise, spec.fs_hz,
                                          [f"v{n}_ch{j}" for j in range(dim)]))
            noises.append(noise)
            corrs.append(None if n in distorted else self.population_corr(snr))

        logger.info(
            f"生成合成数据: {spec.n_views} 个视图, 潜变量维度 {k}, 样本数 {m}, "
            f"混合={spec.mixing}, 时间模型={spec.temporal}"
        )
        return SynthBundle(latent=latent, views=views, population_corr=corrs, noise=noises, spec=spec)

    def empirical_snr_db(self, bundle: SynthBundle, view_index: int) -> float:
        """潜变量子空间内的经验信噪比（信号功率/噪声功率）"""
        noise = bundle.noise[view_index]
        signal = bundle.views[view_index].data - noise
        # 信号子空间由信号协方差的前k个主轴张成
        k = bundle.spec.latent_dim
        _, _, Vt = np.linalg.svd(signal - signal.mean(axis=0), full_matrices=False)
        basis = Vt[:k].T
        p_signal = np.sum(np.var(signal @ basis, axis=0))
        p_noise = np.sum(np.var(noise @ basis, axis=0))
        return float(10.0 * np.log10(p_signal / p_noise))
