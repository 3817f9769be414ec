"""
线性代数基础
协方差估计、对称特征分解、SVD、带岭正则的逆矩阵平方根、广义对称特征问题
所有函数均为纯函数，输入不被修改，全部使用 float64
"""
from dataclasses import dataclass
from typing import Optional, Tuple
import numpy as np
import scipy.linalg
from app.config import settings
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import (
    DataError, DegenerateSampleError, ShapeError, SymmetryError
)
from app.utils.logger import logger


@dataclass(frozen=True)
class SymEigResult:
    """对称特征分解结果（特征值降序，特征向量按列对应）"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clamped: int = 0  # 白化时被截断的特征值个数


@dataclass(frozen=True)
class SvdResult:
    """瘦SVD结果：A = U · diag(s) · Vᵀ"""
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class InvSqrtResult:
    """(A + ridge·I)^(-1/2) 及截断信息"""
    matrix: np.ndarray
    ridge: float
    floor: float
    clamped: int

    @property
    def singular(self) -> bool:
        """是否触发了特征值截断"""
        return self.clamped > 0


def as_matrix(A, name: str = "A") -> np.ndarray:
    """转换为二维 float64 矩阵并校验有限性（接受 TimeSeriesMatrix）"""
    if isinstance(A, TimeSeriesMatrix):
        A = A.data
    M = np.asarray(A, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeError(f"{name} 必须是非空二维矩阵，实际形状: {M.shape}")
    if not np.all(np.isfinite(M)):
        row, col = np.argwhere(~np.isfinite(M))[0]
        raise DataError(f"{name} 包含非有限值: 行={row}, 列={col}")
    return M


def check_symmetric(A: np.ndarray, name: str = "A", tol: float = 1e-10) -> None:
    """校验方阵对称（容差相对最大元素）"""
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"{name} 必须是方阵，实际形状: {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    asym = float(np.max(np.abs(A - A.T)))
    if asym > tol * scale:
        raise SymmetryError(f"{name} 不对称: max|A-Aᵀ|={asym:.3e}")


def covariance(X, Y=None, centered: bool = False) -> np.ndarray:
    """
    样本协方差 (1/(m-1)) · X̄ᵀȲ

    Args:
        X: m×p 矩阵
        Y: m×q 矩阵，缺省时取 X
        centered: True 表示输入已去均值，跳过中心化

    Returns:
        p×q 协方差矩阵
    """
    X = as_matrix(X, "X")
    Y = X if Y is None else as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"样本数不一致: X={X.shape[0]}, Y={Y.shape[0]}")
    m = X.shape[0]
    if m < 2:
        raise DegenerateSampleError(f"协方差至少需要2个样本，实际: {m}")
    if not centered:
        X = X - X.mean(axis=0)
        Y = Y - Y.mean(axis=0)
    return X.T @ Y / (m - 1)


def default_ridge(A: np.ndarray, scale: Optional[float] = None) -> float:
    """尺度相对的默认岭系数：scale · trace(A) / p"""
    if scale is None:
        scale = settings.WHITEN_RIDGE_SCALE
    p = A.shape[0]
    return float(scale * max(np.trace(A), 0.0) / p)


def _fix_signs(U: np.ndarray, V: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """符号约定：每列绝对值最大的元素取非负，V 同步翻转"""
    if U.size == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    if V is not None:
        V = V * signs
    return U, V


def sym_eig(A) -> SymEigResult:
    """标准对称特征分解，特征值降序"""
    A = as_matrix(A, "A")
    check_symmetric(A, "A")
    A = 0.5 * (A + A.T)
    w, W = scipy.linalg.eigh(A)
    order = np.argsort(w)[::-1]
    w, W = w[order], W[:, order]
    W, _ = _fix_signs(W)
    return SymEigResult(eigenvalues=w, eigenvectors=W)


def inv_sqrt_sym(A, ridge: Optional[float] = None) -> InvSqrtResult:
    """
    计算 (A + ridge·I)^(-1/2)，ridge 缺省时取 default_ridge(A)

    低于 EIG_FLOOR × 最大特征值 的特征值被截断到该下限，截断次数记录在结果中，
    不作为失败处理
    """
    A = as_matrix(A, "A")
    check_symmetric(A, "A")
    if ridge is None:
        ridge = default_ridge(A)
    if ridge < 0:
        raise DataError(f"岭系数不能为负: {ridge}")
    p = A.shape[0]
    A = 0.5 * (A + A.T) + ridge * np.eye(p)
    w, W = scipy.linalg.eigh(A)
    lam_max = float(np.max(w))
    floor = settings.EIG_FLOOR * lam_max if lam_max > 0 else settings.EIG_FLOOR
    mask = w < floor
    clamped = int(np.count_nonzero(mask))
    if clamped:
        logger.debug(f"逆平方根截断了 {clamped}/{p} 个特征值（下限 {floor:.3e}）")
    w = np.where(mask, floor, w)
    M = (W * w ** -0.5) @ W.T
    M = 0.5 * (M + M.T)
    return InvSqrtResult(matrix=M, ridge=float(ridge), floor=float(floor), clamped=clamped)


def svd(A) -> SvdResult:
    """瘦SVD，符号约定：左奇异向量绝对值最大的元素非负"""
    A = as_matrix(A, "A")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    return SvdResult(U=U, singular_values=s, V=V)


def generalized_sym_eig(R, D, ridge: Optional[float] = None) -> SymEigResult:
    """
    求解 R v = λ D v（ridge 加在 D 上，缺省时取 default_ridge(D)）

    以 D^(-1/2) 变换为标准问题：对 D^(-1/2) R D^(-1/2) 做特征分解，
    再通过 v = D^(-1/2) w 映射回原空间，特征值降序
    """
    R = as_matrix(R, "R")
    D = as_matrix(D, "D")
    if R.shape != D.shape:
        raise ShapeError(f"R 与 D 形状不一致: {R.shape} vs {D.shape}")
    check_symmetric(R, "R")
    whiten = inv_sqrt_sym(D, ridge)
    M = whiten.matrix @ R @ whiten.matrix
    inner = sym_eig(0.5 * (M + M.T))
    V = whiten.matrix @ inner.eigenvectors
    return SymEigResult(eigenvalues=inner.eigenvalues, eigenvectors=V, clamped=whiten.clamped)
