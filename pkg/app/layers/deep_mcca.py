"""
深度多路CCA（DMCCA）
N 个编码器映射到共享 d 维空间，两两相关之和作为相关项；
解码器以拼接后的全部编码重建各视图，联合代价 E = ρ_total − mse_weight·Σ MSE
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np
from app.components import linalg_core
from app.components.dense_network import DenseNetwork, Gradients
from app.layers.deep_cca import corr_objective
from app.layers.training_support import (
    DataSplit, EarlyStopping, Standardizer, TrainingHistory,
    contiguous_batches, seed_for
)
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DegenerateSampleError, NumericError, ShapeError
from app.utils.logger import logger


def total_pairwise_corr(codes: Sequence[np.ndarray], ridge: Optional[float] = None
                        ) -> Tuple[float, List[np.ndarray]]:
    """
    ρ_total = Σ_j Σ_{k≠j} ρ(code_j, code_k)

    每个无序对按有序对计两次；各编码的梯度累加所有包含它的对的贡献，按 (j, k) 字典序累加
    """
    if len(codes) < 2:
        raise ConfigError(f"至少需要2路编码，实际: {len(codes)}")
    shape = np.shape(codes[0])
    for n, c in enumerate(codes):
        if np.shape(c) != shape:
            raise ShapeError(f"编码{n}形状{np.shape(c)}与编码0{shape}不一致")
    rho_total = 0.0
    grads = [np.zeros(shape) for _ in codes]
    for j in range(len(codes)):
        for k in range(j + 1, len(codes)):
            obj = corr_objective(codes[j], codes[k], ridge)
            rho_total += 2.0 * obj.rho
            grads[j] += 2.0 * obj.grad_x
            grads[k] += 2.0 * obj.grad_y
    return rho_total, grads


@dataclass
class DmccaCost:
    """联合代价及全部网络的参数梯度"""
    E: float
    rho_total: float
    mse: List[float]
    encoder_grads: List[Gradients]
    decoder_grads: List[Gradients]


def dmcca_cost(encoders: Sequence[DenseNetwork], decoders: Sequence[DenseNetwork],
               views: Sequence[np.ndarray], mse_weight: float,
               ridge: Optional[float] = None, mode: str = "train") -> DmccaCost:
    """
    计算 E = ρ_total − mse_weight·Σ_n MSE_n 及梯度

    MSE 在样本与通道上取平均；相关项只作用于编码器，
    重建项经解码器并通过拼接编码反传回编码器
    """
    N = len(encoders)
    if len(decoders) != N or len(views) != N:
        raise ShapeError(f"编码器({N})、解码器({len(decoders)})与视图({len(views)})数量不一致")
    codes, enc_tapes = [], []
    for enc, X in zip(encoders, views):
        H, tape = enc.forward(X, mode)
        codes.append(H)
        enc_tapes.append(tape)
    d = codes[0].shape[1]
    y = np.hstack(codes)
    rho_total, code_grads = total_pairwise_corr(codes, ridge)

    mses, dec_grads = [], []
    dy = np.zeros_like(y)
    for dec, X in zip(decoders, views):
        rec, tape = dec.forward(y, mode)
        err = rec - X
        mses.append(float(np.mean(err ** 2)))
        g = dec.backward(tape, -mse_weight * 2.0 * err / err.size)
        dec_grads.append(g)
        dy += g.d_input

    enc_grads = []
    for n, (enc, tape) in enumerate(zip(encoders, enc_tapes)):
        upstream = code_grads[n] + dy[:, n * d:(n + 1) * d]
        enc_grads.append(enc.backward(tape, upstream))

    E = rho_total - mse_weight * float(np.sum(mses))
    return DmccaCost(E=E, rho_total=rho_total, mse=mses, encoder_grads=enc_grads, decoder_grads=dec_grads)


@dataclass
class DmccaHyper:
    """DMCCA 超参数"""
    d: int = 10
    eta: float = 1e-3
    batch: int = 2048
    dropout: float = 0.0
    epochs: int = 100
    seeds_tried: int = 5
    mse_weight: float = 0.1
    encoder_hidden: List[int] = field(default_factory=lambda: [60, 60])
    decoder_hidden: List[int] = field(default_factory=lambda: [60, 110])
    activation: str = "leaky_relu"
    slope: float = 0.1
    patience: int = 10
    corr_ridge: Optional[float] = None
    seed: int = 0


@dataclass
class DmccaModel:
    """DMCCA 模型：N 个编码器、N 个解码器（输入为 N·d 维拼接编码）与各视图标准化器"""
    encoders: List[DenseNetwork]
    decoders: List[DenseNetwork]
    scalers: List[Standardizer]
    hyper: DmccaHyper
    best_val_rho: float = 0.0
    chosen_seed: int = 0

    @property
    def n_views(self) -> int:
        return len(self.encoders)

    @property
    def mse_weight(self) -> float:
        return self.hyper.mse_weight

    def to_dict(self) -> Dict:
        return {
            "kind": "dmcca",
            "encoders": [net.to_dict() for net in self.encoders],
            "decoders": [net.to_dict() for net in self.decoders],
            "scalers": [s.to_dict() for s in self.scalers],
            "hyper": asdict(self.hyper),
            "best_val_rho": self.best_val_rho,
            "chosen_seed": self.chosen_seed,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "DmccaModel":
        return cls(
            encoders=[DenseNetwork.from_dict(x) for x in d["encoders"]],
            decoders=[DenseNetwork.from_dict(x) for x in d["decoders"]],
            scalers=[Standardizer.from_dict(x) for x in d["scalers"]],
            hyper=DmccaHyper(**d["hyper"]),
            best_val_rho=float(d.get("best_val_rho", 0.0)),
            chosen_seed=int(d.get("chosen_seed", 0)),
        )


class DeepMccaTrainer:
    """DMCCA 训练器"""

    def __init__(self, hyper: Optional[DmccaHyper] = None, threads: int = 1,
                 history_path: Optional[str] = None):
        self.hyper = hyper or DmccaHyper()
        self.threads = max(1, threads)
        self.history_path = history_path

    def build_networks(self, view_dims: Sequence[int], seed: int):
        """构建 N 个编码器 d_n→…→d 与 N 个解码器 N·d→…→d_n"""
        h = self.hyper
        N = len(view_dims)
        encoders = [
            DenseNetwork.build([dn] + list(h.encoder_hidden) + [h.d], h.activation, h.slope, h.dropout,
                               seed_for(seed, n))
            for n, dn in enumerate(view_dims)
        ]
        decoders = [
            DenseNetwork.build([N * h.d] + list(h.decoder_hidden) + [dn], h.activation, h.slope, h.dropout,
                               seed_for(seed, N + n))
            for n, dn in enumerate(view_dims)
        ]
        return encoders, decoders

    def _val_rho(self, encoders, views: List[np.ndarray]) -> float:
        codes = [enc.forward(X, "eval")[0] for enc, X in zip(encoders, views)]
        return total_pairwise_corr(codes, self.hyper.corr_ridge)[0]

    def train(self, views: Sequence, split: DataSplit) -> DmccaModel:
        """
        训练DMCCA：种子选择同DCCA，小批量梯度上升最大化 E，验证 ρ_total 早停
        """
        h = self.hyper
        if len(views) < 2:
            raise ConfigError(f"DMCCA 至少需要2个视图，实际: {len(views)}")
        data = [linalg_core.as_matrix(v, f"view[{n}]") for n, v in enumerate(views)]
        m = data[0].shape[0]
        for n, X in enumerate(data):
            if X.shape[0] != m:
                raise ShapeError(f"视图{n}样本数({X.shape[0]})与视图0({m})不一致")
        if h.batch <= h.d:
            raise ConfigError(f"批大小({h.batch})必须大于输出维数({h.d})")
        if len(split.train) <= h.d or len(split.val) <= h.d:
            raise DegenerateSampleError(
                f"训练集({len(split.train)})与验证集({len(split.val)})样本数必须大于输出维数({h.d})"
            )

        scalers = [Standardizer.fit(X[split.train]) for X in data]
        scaled = [s.apply(X) for s, X in zip(scalers, data)]
        val_views = [X[split.val] for X in scaled]
        dims = [X.shape[1] for X in data]

        seeds = [seed_for(h.seed, k) for k in range(max(1, h.seeds_tried))]

        def candidate(seed: int):
            encoders, decoders = self.build_networks(dims, seed)
            return self._val_rho(encoders, val_views), encoders, decoders

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(candidate, seeds))
        scores = [r[0] if np.isfinite(r[0]) else -np.inf for r in results]
        best_k = int(np.argmax(scores))
        if not np.isfinite(scores[best_k]):
            raise NumericError("所有初始化的验证相关均为非有限值", diagnostics={"scores": scores})
        _, encoders, decoders = results[best_k]
        logger.info(f"DMCCA 种子选择: 候选{len(seeds)}个, 选中第{best_k}个, 初始验证ρ_total={scores[best_k]:.4f}")

        N = len(data)
        rng = np.random.default_rng([h.seed, 2])
        history = TrainingHistory(self.history_path)
        stopper = EarlyStopping(h.patience)
        stopper.update(scores[best_k], *encoders, *decoders)
        start = time.time()
        for epoch in range(1, h.epochs + 1):
            rhos = []
            for b, idx in enumerate(contiguous_batches(split.train, h.batch, h.d + 1, rng)):
                cost = dmcca_cost(encoders, decoders, [X[idx] for X in scaled],
                                  h.mse_weight, h.corr_ridge, mode="train")
                if not np.isfinite(cost.E):
                    raise NumericError(
                        f"DMCCA 代价出现非有限值: 轮次={epoch}, 批={b}",
                        diagnostics={"epoch": epoch, "batch": b, "rho_total": cost.rho_total,
                                     "mse": cost.mse, "history": history.records[-5:]},
                    )
                for net, g in zip(encoders, cost.encoder_grads):
                    net.ascend(g, h.eta)
                for net, g in zip(decoders, cost.decoder_grads):
                    net.ascend(g, h.eta)
                rhos.append(cost.rho_total)
            val_rho = self._val_rho(encoders, val_views)
            if not np.isfinite(val_rho):
                raise NumericError(
                    f"DMCCA 验证相关出现非有限值: 轮次={epoch}",
                    diagnostics={"epoch": epoch, "history": history.records[-5:]},
                )
            history.append(epoch, float(np.mean(rhos)) if rhos else float("nan"), val_rho, time.time() - start)
            stopper.update(val_rho, *encoders, *decoders)
            if stopper.should_stop:
                logger.debug(f"DMCCA 早停: 轮次={epoch}, 最优轮次={stopper.best_epoch}")
                break

        best = list(stopper.best_state)
        logger.info(f"DMCCA 训练完成: 最优验证ρ_total={stopper.best_score:.4f}")
        return DmccaModel(
            encoders=best[:N], decoders=best[N:], scalers=scalers, hyper=h,
            best_val_rho=float(stopper.best_score), chosen_seed=seeds[best_k],
        )

    def cost(self, model: DmccaModel, views: Sequence, mode: str = "eval") -> DmccaCost:
        """已训练模型在原始尺度视图上的联合代价（先套用训练集标准化）"""
        if len(views) != model.n_views:
            raise ShapeError(f"视图数({len(views)})与模型({model.n_views})不一致")
        data = [s.apply(linalg_core.as_matrix(v, f"view[{n}]"))
                for n, (s, v) in enumerate(zip(model.scalers, views))]
        return dmcca_cost(model.encoders, model.decoders, data, model.mse_weight,
                          model.hyper.corr_ridge, mode)

    def encode(self, model: DmccaModel, view_index: int, X) -> TimeSeriesMatrix:
        """评估模式编码器前向，即送往下一级CCA的去噪表示"""
        if not 0 <= view_index < model.n_views:
            raise ConfigError(f"视图索引{view_index}超出范围[0, {model.n_views})")
        data = linalg_core.as_matrix(X, "X")
        enc = model.encoders[view_index]
        if data.shape[1] != enc.n_inputs:
            raise ShapeError(f"视图{view_index}维度应为{enc.n_inputs}，实际{data.shape[1]}")
        H, _ = enc.forward(model.scalers[view_index].apply(data), "eval")
        fs = X.fs_hz if isinstance(X, TimeSeriesMatrix) else 1.0
        return TimeSeriesMatrix(H, fs, [f"dm{i + 1}" for i in range(H.shape[1])])
