"""
深度CCA
相关目标取 T_H 的迹范数，解析梯度，小批量梯度上升，验证集早停
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional
import numpy as np
from app.components import linalg_core
from app.components.dense_network import DenseNetwork
from app.config import settings
from app.layers.eval_metrics import pearson
from app.layers.linear_cca import LinearCcaModel, fit_cca, project
from app.layers.training_support import (
    DataSplit, EarlyStopping, Standardizer, TrainingHistory,
    contiguous_batches, seed_for
)
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DegenerateSampleError, NumericError, ShapeError
from app.utils.logger import logger


@dataclass(frozen=True)
class CorrObjective:
    """相关目标值及对两组网络输出的梯度"""
    rho: float
    grad_x: np.ndarray
    grad_y: np.ndarray
    singular_values: np.ndarray


def corr_objective(Hx: np.ndarray, Hy: np.ndarray, ridge: Optional[float] = None) -> CorrObjective:
    """
    ρ(Hx, Hy) = ‖T_H‖_tr 及其解析梯度（行为样本）

    ∂ρ/∂Hx = (1/(m-1))·(2·H̄x·∇xx + H̄y·∇xyᵀ)，其中
    ∇xy = Cxx^(-1/2) U Vᵀ Cyy^(-1/2)，∇xx = -½·Cxx^(-1/2) U D Uᵀ Cxx^(-1/2)；Hy 对称

    Args:
        Hx, Hy: m×d 网络输出
        ridge: 自协方差岭系数；None 时取 CORR_RIDGE_SCALE·trace/d（求导时视为常数）
    """
    Hx = np.asarray(Hx, dtype=np.float64)
    Hy = np.asarray(Hy, dtype=np.float64)
    if Hx.shape != Hy.shape or Hx.ndim != 2:
        raise ShapeError(f"两组输出形状不一致: {Hx.shape} vs {Hy.shape}")
    m, d = Hx.shape
    if m <= d:
        raise DegenerateSampleError(f"批大小({m})必须大于输出维数({d})")
    Xc = Hx - Hx.mean(axis=0)
    Yc = Hy - Hy.mean(axis=0)
    Cxx = Xc.T @ Xc / (m - 1)
    Cyy = Yc.T @ Yc / (m - 1)
    Cxy = Xc.T @ Yc / (m - 1)
    if ridge is None:
        rx = linalg_core.default_ridge(Cxx, settings.CORR_RIDGE_SCALE)
        ry = linalg_core.default_ridge(Cyy, settings.CORR_RIDGE_SCALE)
    else:
        rx = ry = float(ridge)
    Wx = linalg_core.inv_sqrt_sym(Cxx, rx).matrix
    Wy = linalg_core.inv_sqrt_sym(Cyy, ry).matrix
    res = linalg_core.svd(Wx @ Cxy @ Wy)
    U, s, V = res.U, res.singular_values, res.V

    nabla_xy = Wx @ U @ V.T @ Wy
    nabla_xx = -0.5 * Wx @ (U * s) @ U.T @ Wx
    nabla_yy = -0.5 * Wy @ (V * s) @ V.T @ Wy
    grad_x = (2.0 * Xc @ nabla_xx + Yc @ nabla_xy.T) / (m - 1)
    grad_y = (2.0 * Yc @ nabla_yy + Xc @ nabla_xy) / (m - 1)
    return CorrObjective(rho=float(s.sum()), grad_x=grad_x, grad_y=grad_y, singular_values=s)


@dataclass
class DccaHyper:
    """DCCA 超参数"""
    d: int = 1
    eta: float = 1e-3
    batch: int = 2048
    dropout: float = 0.0
    epochs: int = 100
    seeds_tried: int = 5
    hidden: List[int] = field(default_factory=lambda: [2038, 1608])
    activation: str = "leaky_relu"
    slope: float = 0.1
    patience: int = 10
    corr_ridge: Optional[float] = None
    seed: int = 0


@dataclass
class DccaModel:
    """DCCA 模型：两路网络、输入标准化器、训练结束后拟合一次的线性CCA读出"""
    net_x: DenseNetwork
    net_y: DenseNetwork
    readout_cca: LinearCcaModel
    hyper: DccaHyper
    scaler_x: Standardizer
    scaler_y: Standardizer
    best_val_rho: float = 0.0
    chosen_seed: int = 0

    def to_dict(self) -> Dict:
        return {
            "kind": "dcca",
            "net_x": self.net_x.to_dict(),
            "net_y": self.net_y.to_dict(),
            "readout_cca": self.readout_cca.to_dict(),
            "hyper": asdict(self.hyper),
            "scaler_x": self.scaler_x.to_dict(),
            "scaler_y": self.scaler_y.to_dict(),
            "best_val_rho": self.best_val_rho,
            "chosen_seed": self.chosen_seed,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "DccaModel":
        return cls(
            net_x=DenseNetwork.from_dict(d["net_x"]),
            net_y=DenseNetwork.from_dict(d["net_y"]),
            readout_cca=LinearCcaModel.from_dict(d["readout_cca"]),
            hyper=DccaHyper(**d["hyper"]),
            scaler_x=Standardizer.from_dict(d["scaler_x"]),
            scaler_y=Standardizer.from_dict(d["scaler_y"]),
            best_val_rho=float(d.get("best_val_rho", 0.0)),
            chosen_seed=int(d.get("chosen_seed", 0)),
        )


class DeepCcaTrainer:
    """DCCA 训练器"""

    def __init__(self, hyper: Optional[DccaHyper] = None, threads: int = 1,
                 history_path: Optional[str] = None):
        self.hyper = hyper or DccaHyper()
        self.threads = max(1, threads)
        self.history_path = history_path

    def _build_pair(self, dx: int, dy: int, seed: int):
        h = self.hyper
        net_x = DenseNetwork.build([dx] + list(h.hidden) + [h.d], h.activation, h.slope, h.dropout, seed)
        net_y = DenseNetwork.build([dy] + list(h.hidden) + [h.d], h.activation, h.slope, h.dropout, seed + 1)
        return net_x, net_y

    def _rho(self, net_x: DenseNetwork, net_y: DenseNetwork, X: np.ndarray, Y: np.ndarray) -> float:
        Hx, _ = net_x.forward(X, "eval")
        Hy, _ = net_y.forward(Y, "eval")
        return corr_objective(Hx, Hy, self.hyper.corr_ridge).rho

    def train(self, X, Y, split: DataSplit) -> DccaModel:
        """
        训练DCCA

        先对 seeds_tried 个随机初始化在验证集上评估 ρ 并保留最优者，
        再以连续时间块小批量梯度上升训练，验证 ρ 早停并恢复最优快照，
        最后在训练集网络输出上拟合线性CCA读出
        """
        h = self.hyper
        Xd = linalg_core.as_matrix(X, "X")
        Yd = linalg_core.as_matrix(Y, "Y")
        if Xd.shape[0] != Yd.shape[0]:
            raise ShapeError(f"两视图样本数不一致: {Xd.shape[0]} vs {Yd.shape[0]}")
        if h.batch <= h.d:
            raise ConfigError(f"批大小({h.batch})必须大于输出维数({h.d})")
        if len(split.train) <= h.d or len(split.val) <= h.d:
            raise DegenerateSampleError(
                f"训练集({len(split.train)})与验证集({len(split.val)})样本数必须大于输出维数({h.d})"
            )

        scaler_x = Standardizer.fit(Xd[split.train])
        scaler_y = Standardizer.fit(Yd[split.train])
        Xs, Ys = scaler_x.apply(Xd), scaler_y.apply(Yd)
        Xv, Yv = Xs[split.val], Ys[split.val]

        seeds = [seed_for(h.seed, k) for k in range(max(1, h.seeds_tried))]

        def candidate(seed: int):
            net_x, net_y = self._build_pair(Xd.shape[1], Yd.shape[1], seed)
            return self._rho(net_x, net_y, Xv, Yv), net_x, net_y

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(candidate, seeds))
        scores = [r[0] if np.isfinite(r[0]) else -np.inf for r in results]
        best_k = int(np.argmax(scores))
        if not np.isfinite(scores[best_k]):
            raise NumericError("所有初始化的验证相关均为非有限值", diagnostics={"scores": scores})
        _, net_x, net_y = results[best_k]
        logger.info(f"DCCA 种子选择: 候选{len(seeds)}个, 选中第{best_k}个, 初始验证ρ={scores[best_k]:.4f}")

        rng = np.random.default_rng([h.seed, 2])
        history = TrainingHistory(self.history_path)
        stopper = EarlyStopping(h.patience)
        stopper.update(scores[best_k], net_x, net_y)
        start = time.time()
        for epoch in range(1, h.epochs + 1):
            rhos = []
            for b, idx in enumerate(contiguous_batches(split.train, h.batch, h.d + 1, rng)):
                Hx, tape_x = net_x.forward(Xs[idx], "train")
                Hy, tape_y = net_y.forward(Ys[idx], "train")
                obj = corr_objective(Hx, Hy, h.corr_ridge)
                if not np.isfinite(obj.rho):
                    raise NumericError(
                        f"训练相关出现非有限值: 轮次={epoch}, 批={b}",
                        diagnostics={"epoch": epoch, "batch": b, "rho": obj.rho,
                                     "history": history.records[-5:]},
                    )
                net_x.ascend(net_x.backward(tape_x, obj.grad_x), h.eta)
                net_y.ascend(net_y.backward(tape_y, obj.grad_y), h.eta)
                rhos.append(obj.rho)
            val_rho = self._rho(net_x, net_y, Xv, Yv)
            if not np.isfinite(val_rho):
                raise NumericError(
                    f"验证相关出现非有限值: 轮次={epoch}",
                    diagnostics={"epoch": epoch, "history": history.records[-5:]},
                )
            history.append(epoch, float(np.mean(rhos)) if rhos else float("nan"), val_rho, time.time() - start)
            stopper.update(val_rho, net_x, net_y)
            if stopper.should_stop:
                logger.debug(f"DCCA 早停: 轮次={epoch}, 最优轮次={stopper.best_epoch}")
                break

        net_x, net_y = stopper.best_state
        Hx, _ = net_x.forward(Xs[split.train], "eval")
        Hy, _ = net_y.forward(Ys[split.train], "eval")
        readout = fit_cca(Hx, Hy, h.d, ridge=0.0)
        logger.info(f"DCCA 训练完成: 最优验证ρ={stopper.best_score:.4f}, 读出相关={readout.canon_corr.tolist()}")
        return DccaModel(
            net_x=net_x, net_y=net_y, readout_cca=readout, hyper=h,
            scaler_x=scaler_x, scaler_y=scaler_y,
            best_val_rho=float(stopper.best_score), chosen_seed=seeds[best_k],
        )

    def transform(self, model: DccaModel, X, which_view: str = "stimulus") -> TimeSeriesMatrix:
        """评估模式前向后经读出CCA投影"""
        data = linalg_core.as_matrix(X, "X")
        if which_view == "stimulus":
            net, scaler = model.net_x, model.scaler_x
        elif which_view == "response":
            net, scaler = model.net_y, model.scaler_y
        else:
            raise ConfigError(f"未知视图: {which_view}")
        H, _ = net.forward(scaler.apply(data), "eval")
        Z = project(model.readout_cca, H, which_view)
        fs = X.fs_hz if isinstance(X, TimeSeriesMatrix) else 1.0
        return TimeSeriesMatrix(Z.data, fs, Z.channel_labels)

    def evaluate(self, model: DccaModel, X, Y) -> np.ndarray:
        """各典型维度上的 Pearson 相关"""
        Zx = self.transform(model, X, "stimulus").data
        Zy = self.transform(model, Y, "response").data
        if Zx.shape[0] != Zy.shape[0]:
            raise ShapeError(f"两视图样本数不一致: {Zx.shape[0]} vs {Zy.shape[0]}")
        return np.array([pearson(Zx[:, i], Zy[:, i]) for i in range(Zx.shape[1])])
