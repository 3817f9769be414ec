"""
深度模型训练的公共部件：数据划分、输入标准化、连续块批次、早停、训练历史
"""
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional
import numpy as np
from app.utils.logger import logger


@dataclass
class DataSplit:
    """样本索引划分"""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


@dataclass
class Standardizer:
    """按训练集统计量做 z-score（零方差列保持尺度1）"""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        std = X.std(axis=0)
        return cls(mean=X.mean(axis=0), std=np.where(std > 0, std, 1.0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: Dict) -> "Standardizer":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64), std=np.asarray(d["std"], dtype=np.float64))


def seed_for(base: int, k: int) -> int:
    """由主种子派生第 k 个子种子"""
    return int(np.random.SeedSequence([base, k]).generate_state(1)[0])


def contiguous_batches(indices: np.ndarray, batch: int, min_size: int,
                       rng: np.random.Generator) -> List[np.ndarray]:
    """
    按连续时间块切分批次并打乱块顺序

    不足 min_size 的尾块并入前一块
    """
    indices = np.asarray(indices)
    blocks = [indices[i:i + batch] for i in range(0, len(indices), batch)]
    if len(blocks) > 1 and len(blocks[-1]) < min_size:
        tail = blocks.pop()
        blocks[-1] = np.concatenate([blocks[-1], tail])
    blocks = [b for b in blocks if len(b) >= min_size]
    order = rng.permutation(len(blocks))
    return [blocks[i] for i in order]


class EarlyStopping:
    """验证指标早停，保存最优参数快照"""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = 0
        self.best_state = None
        self._epoch = -1
        self._since_best = 0

    def update(self, score: float, *nets) -> bool:
        """记录一轮结果；提升时对网络做快照并返回 True"""
        self._epoch += 1
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = self._epoch
            self.best_state = tuple(net.snapshot() for net in nets)
            self._since_best = 0
            return True
        self._since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self._since_best >= self.patience


class TrainingHistory:
    """训练历史：JSON-lines（epoch, train_rho, val_rho, wall_time）"""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[Dict] = []
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            open(path, "w", encoding="utf-8").close()

    def append(self, epoch: int, train_rho: float, val_rho: float, wall_time: float) -> None:
        record = {
            "epoch": epoch,
            "train_rho": train_rho,
            "val_rho": val_rho,
            "wall_time": round(wall_time, 6),
        }
        self.records.append(record)
        logger.debug(f"轮次 {epoch}: 训练ρ={train_rho:.4f}, 验证ρ={val_rho:.4f}")
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
