"""
两视图线性CCA
对白化后的互协方差 T = Cxx^(-1/2) Cxy Cyy^(-1/2) 做SVD
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import numpy as np
from app.components import linalg_core
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DegenerateSampleError, ShapeError
from app.utils.logger import logger

VIEWS = ("stimulus", "response")


@dataclass(frozen=True)
class LinearCcaModel:
    """线性CCA模型；x 视图为刺激，y 视图为响应"""
    proj_x: np.ndarray
    proj_y: np.ndarray
    canon_corr: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    ridge_used: Tuple[float, float]
    clamped: int = 0

    @property
    def d(self) -> int:
        return self.proj_x.shape[1]

    def reported_corr(self) -> np.ndarray:
        """报告用的典型相关（超过1的部分截断为1）"""
        return np.clip(self.canon_corr, -1.0, 1.0)

    def to_dict(self) -> Dict:
        return {
            "kind": "lcca",
            "proj_x": self.proj_x.tolist(),
            "proj_y": self.proj_y.tolist(),
            "canon_corr": self.canon_corr.tolist(),
            "mean_x": self.mean_x.tolist(),
            "mean_y": self.mean_y.tolist(),
            "ridge_used": list(self.ridge_used),
            "clamped": self.clamped,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "LinearCcaModel":
        return cls(
            proj_x=np.asarray(d["proj_x"], dtype=np.float64),
            proj_y=np.asarray(d["proj_y"], dtype=np.float64),
            canon_corr=np.asarray(d["canon_corr"], dtype=np.float64),
            mean_x=np.asarray(d["mean_x"], dtype=np.float64),
            mean_y=np.asarray(d["mean_y"], dtype=np.float64),
            ridge_used=tuple(float(r) for r in d["ridge_used"]),
            clamped=int(d.get("clamped", 0)),
        )


def fit_cca(X, Y, d: int = 1, ridge: Optional[float] = None) -> LinearCcaModel:
    """
    拟合线性CCA

    Args:
        X: m×D1 刺激视图
        Y: m×D2 响应视图
        d: 典型维数，1 ≤ d ≤ min(D1, D2)
        ridge: 自协方差岭系数；None 时各视图取 1e-6·trace/p

    Returns:
        LinearCcaModel
    """
    Xd = linalg_core.as_matrix(X, "X")
    Yd = linalg_core.as_matrix(Y, "Y")
    m = Xd.shape[0]
    if Yd.shape[0] != m:
        raise ShapeError(f"两视图样本数不一致: {m} vs {Yd.shape[0]}")
    D1, D2 = Xd.shape[1], Yd.shape[1]
    if not 1 <= d <= min(D1, D2):
        raise ConfigError(f"典型维数d={d}超出范围[1, {min(D1, D2)}]")
    if m <= max(D1, D2):
        raise DegenerateSampleError(f"样本数({m})必须大于视图维度({max(D1, D2)})")

    mean_x, mean_y = Xd.mean(axis=0), Yd.mean(axis=0)
    Xc, Yc = Xd - mean_x, Yd - mean_y
    Cxx = linalg_core.covariance(Xc, centered=True)
    Cyy = linalg_core.covariance(Yc, centered=True)
    Cxy = linalg_core.covariance(Xc, Yc, centered=True)
    rx = linalg_core.default_ridge(Cxx) if ridge is None else float(ridge)
    ry = linalg_core.default_ridge(Cyy) if ridge is None else float(ridge)

    wx = linalg_core.inv_sqrt_sym(Cxx, rx)
    wy = linalg_core.inv_sqrt_sym(Cyy, ry)
    T = wx.matrix @ Cxy @ wy.matrix
    res = linalg_core.svd(T)

    canon = res.singular_values[:d].copy()
    clamped = wx.clamped + wy.clamped
    if clamped:
        logger.warning(f"CCA白化时截断了 {clamped} 个特征值，协方差接近奇异")
    if np.any(canon > 1.0):
        logger.warning(f"典型相关超过1（最大{canon.max():.6f}），报告时截断为1")

    return LinearCcaModel(
        proj_x=wx.matrix @ res.U[:, :d],
        proj_y=wy.matrix @ res.V[:, :d],
        canon_corr=canon,
        mean_x=mean_x,
        mean_y=mean_y,
        ridge_used=(rx, ry),
        clamped=clamped,
    )


def project(model: LinearCcaModel, X, which_view: str = "stimulus") -> TimeSeriesMatrix:
    """按保存的均值中心化后乘以对应视图的投影矩阵"""
    if which_view not in VIEWS:
        raise ConfigError(f"未知视图: {which_view}，可选: {VIEWS}")
    data = linalg_core.as_matrix(X, "X")
    proj, mean = (model.proj_x, model.mean_x) if which_view == "stimulus" else (model.proj_y, model.mean_y)
    if data.shape[1] != proj.shape[0]:
        raise ShapeError(f"{which_view} 视图维度应为{proj.shape[0]}，实际{data.shape[1]}")
    Z = (data - mean) @ proj
    fs = X.fs_hz if isinstance(X, TimeSeriesMatrix) else 1.0
    return TimeSeriesMatrix(Z, fs, [f"cc{i + 1}" for i in range(model.d)])
