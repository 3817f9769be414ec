"""
多路线性CCA（MCCA）
构建全体互协方差块矩阵 R 与自协方差块对角阵 D，求解 R v = λ D v
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import numpy as np
import scipy.linalg
from app.components import linalg_core
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DegenerateVarianceError, ShapeError
from app.utils.logger import logger


@dataclass(frozen=True)
class MccaModel:
    """
    MCCA 模型

    proj[n] 为 d_n×d 的视图变换，逐列缩放到训练集上各视图单位方差；
    vectors 为堆叠特征向量（vᵀDv = N），eigenvalues 即 R v = λ D v 的 λ（lambda_eig）；
    backproj[n] 为 d×d_n 的最小二乘回投影矩阵；train_isc 为 proj 投影在训练集上的 ISC
    """
    proj: List[np.ndarray]
    eigenvalues: np.ndarray
    view_dims: List[int]
    means: List[np.ndarray]
    backproj: List[np.ndarray]
    ridge_used: List[float]
    clamped: int = 0
    vectors: Optional[np.ndarray] = None
    train_isc: Optional[np.ndarray] = None

    @property
    def n_views(self) -> int:
        return len(self.proj)

    @property
    def d(self) -> int:
        return self.proj[0].shape[1]

    @property
    def lambda_eig(self) -> np.ndarray:
        return self.eigenvalues

    def isc_values(self) -> np.ndarray:
        """由特征值换算的训练集ISC：(λ-1)/(N-1)"""
        return (self.eigenvalues - 1.0) / (self.n_views - 1)

    def stacked(self, dim: int = 0) -> np.ndarray:
        """第 dim 维的堆叠特征向量"""
        if self.vectors is None:
            return np.concatenate([p[:, dim] for p in self.proj])
        return self.vectors[:, dim]

    def to_dict(self) -> Dict:
        return {
            "kind": "lmcca",
            "proj": [p.tolist() for p in self.proj],
            "eigenvalues": self.eigenvalues.tolist(),
            "view_dims": list(self.view_dims),
            "means": [mu.tolist() for mu in self.means],
            "backproj": [b.tolist() for b in self.backproj],
            "ridge_used": list(self.ridge_used),
            "clamped": self.clamped,
            "vectors": self.vectors.tolist() if self.vectors is not None else None,
            "train_isc": self.train_isc.tolist() if self.train_isc is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "MccaModel":
        return cls(
            proj=[np.asarray(p, dtype=np.float64) for p in d["proj"]],
            eigenvalues=np.asarray(d["eigenvalues"], dtype=np.float64),
            view_dims=[int(v) for v in d["view_dims"]],
            means=[np.asarray(mu, dtype=np.float64) for mu in d["means"]],
            backproj=[np.asarray(b, dtype=np.float64) for b in d["backproj"]],
            ridge_used=[float(r) for r in d["ridge_used"]],
            clamped=int(d.get("clamped", 0)),
            vectors=np.asarray(d["vectors"], dtype=np.float64) if d.get("vectors") is not None else None,
            train_isc=np.asarray(d["train_isc"], dtype=np.float64) if d.get("train_isc") is not None else None,
        )


def fit_mcca(views: Sequence, d: int = 1, ridge: Optional[float] = None) -> MccaModel:
    """
    拟合MCCA

    Args:
        views: N 个样本数相同的视图
        d: 共享维数，1 ≤ d ≤ min(d_n)
        ridge: 各自协方差块的岭系数；None 时每块取 1e-6·trace/p，
               同时加在 R 与 D 的对角块上

    Returns:
        MccaModel（各视图投影在训练集上逐维单位方差；特征向量另存于 vectors）
    """
    if len(views) < 2:
        raise ConfigError(f"MCCA 至少需要2个视图，实际: {len(views)}")
    data = [linalg_core.as_matrix(v, f"view[{n}]") for n, v in enumerate(views)]
    m = data[0].shape[0]
    for n, X in enumerate(data):
        if X.shape[0] != m:
            raise ShapeError(f"视图{n}样本数({X.shape[0]})与视图0({m})不一致")
    dims = [X.shape[1] for X in data]
    if not 1 <= d <= min(dims):
        raise ConfigError(f"共享维数d={d}超出范围[1, {min(dims)}]")

    means = [X.mean(axis=0) for X in data]
    centered = [X - mu for X, mu in zip(data, means)]
    R = linalg_core.covariance(np.hstack(centered), centered=True)
    R = 0.5 * (R + R.T)
    offsets = np.concatenate([[0], np.cumsum(dims)])
    blocks, ridges = [], []
    for n in range(len(data)):
        sl = slice(offsets[n], offsets[n + 1])
        block = R[sl, sl]
        r = linalg_core.default_ridge(block) if ridge is None else float(ridge)
        R[sl, sl] = block + r * np.eye(dims[n])
        blocks.append(R[sl, sl])
        ridges.append(r)
    D = scipy.linalg.block_diag(*blocks)

    eig = linalg_core.generalized_sym_eig(R, D, 0.0)
    if eig.clamped:
        logger.warning(f"MCCA白化时截断了 {eig.clamped} 个特征值，自协方差接近奇异")
    V = eig.eigenvectors[:, :d] * np.sqrt(len(data))
    proj = []
    for n, block in enumerate(blocks):
        P = V[offsets[n]:offsets[n + 1]]
        var = np.einsum("ij,ik,kj->j", P, block, P)
        proj.append(P / np.sqrt(np.where(var > 0, var, 1.0)))
    train_isc = np.array([isc([Xc @ P for Xc, P in zip(centered, proj)], k) for k in range(d)])

    backproj = []
    for Xc, P in zip(centered, proj):
        B, *_ = np.linalg.lstsq(Xc @ P, Xc, rcond=None)
        backproj.append(B)

    model = MccaModel(
        proj=proj,
        eigenvalues=eig.eigenvalues[:d].copy(),
        view_dims=dims,
        means=means,
        backproj=backproj,
        ridge_used=ridges,
        clamped=eig.clamped,
        vectors=V,
        train_isc=train_isc,
    )
    logger.debug(f"MCCA拟合完成: {len(data)} 个视图, d={d}, 训练ISC={train_isc[0]:.4f}")
    return model


def isc(projections: Sequence, dim: int = 0) -> float:
    """
    组间/组内协方差之比：ISC = r_B / ((N-1)·r_W)

    r_B 为不同视图两两协方差之和（有序对），r_W 为各视图方差之和
    """
    data = [linalg_core.as_matrix(p, f"projection[{n}]") for n, p in enumerate(projections)]
    N = len(data)
    if N < 2:
        raise ConfigError(f"ISC 至少需要2个视图，实际: {N}")
    shape = data[0].shape
    for n, Y in enumerate(data):
        if Y.shape != shape:
            raise ShapeError(f"投影{n}形状{Y.shape}与投影0{shape}不一致")
    if not 0 <= dim < shape[1]:
        raise ConfigError(f"维度索引{dim}超出范围[0, {shape[1]})")
    cols = np.column_stack([Y[:, dim] for Y in data])
    C = linalg_core.covariance(cols)
    r_w = float(np.trace(C))
    if r_w <= 0:
        raise DegenerateVarianceError("组内协方差为0，ISC无定义")
    r_b = float(C.sum() - r_w)
    return r_b / ((N - 1) * r_w)


def denoise(model: MccaModel, view_index: int, X, back_project: bool = True) -> TimeSeriesMatrix:
    """
    投影到 d 个共享维度；back_project 时经最小二乘回投影映射回原通道空间（秩 d 去噪）
    """
    if not 0 <= view_index < model.n_views:
        raise ConfigError(f"视图索引{view_index}超出范围[0, {model.n_views})")
    data = linalg_core.as_matrix(X, "X")
    if data.shape[1] != model.view_dims[view_index]:
        raise ShapeError(f"视图{view_index}维度应为{model.view_dims[view_index]}，实际{data.shape[1]}")
    Z = (data - model.means[view_index]) @ model.proj[view_index]
    fs = X.fs_hz if isinstance(X, TimeSeriesMatrix) else 1.0
    if not back_project:
        return TimeSeriesMatrix(Z, fs, [f"mc{i + 1}" for i in range(model.d)])
    labels = X.channel_labels if isinstance(X, TimeSeriesMatrix) else None
    out = Z @ model.backproj[view_index] + model.means[view_index]
    return TimeSeriesMatrix(out, fs, labels)
