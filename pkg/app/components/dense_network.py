"""
全连接前馈网络
手写前向/反向传播，leaky ReLU 与线性激活，反向 dropout，梯度上升更新
"""
import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import numpy as np
from app.config import settings
from app.utils.errors import ConfigError, NumericError, ShapeError, StateError

ACTIVATIONS = ("leaky_relu", "linear")


@dataclass
class DenseLayer:
    """单层：权重 (输入×输出)、偏置、激活、dropout 比例"""
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "leaky_relu"
    slope: float = 0.1
    dropout: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"不支持的激活函数: {self.activation}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout 必须在 [0, 1) 内: {self.dropout}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"偏置形状{self.bias.shape}与权重{self.weights.shape}不匹配")

    def activate(self, pre: np.ndarray) -> np.ndarray:
        if self.activation == "linear":
            return pre
        return np.where(pre > 0, pre, self.slope * pre)

    def derivative(self, pre: np.ndarray) -> np.ndarray:
        if self.activation == "linear":
            return np.ones_like(pre)
        return np.where(pre > 0, 1.0, self.slope)


@dataclass
class ForwardTape:
    """一次前向的记录：各层输入、预激活、dropout 掩码"""
    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    masks: List[Optional[np.ndarray]] = field(default_factory=list)
    dims: List[int] = field(default_factory=list)


@dataclass
class LayerGradient:
    dW: np.ndarray
    db: np.ndarray


@dataclass
class Gradients:
    """各层参数梯度及对网络输入的梯度"""
    layers: List[LayerGradient]
    d_input: np.ndarray

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            layers=[LayerGradient(g.dW * factor, g.db * factor) for g in self.layers],
            d_input=self.d_input * factor,
        )


class DenseNetwork:
    """全连接前馈网络"""

    def __init__(self, layers: List[DenseLayer], rng_seed: int = 0):
        if not layers:
            raise ConfigError("网络至少需要一层")
        for k in range(1, len(layers)):
            if layers[k - 1].weights.shape[1] != layers[k].weights.shape[0]:
                raise ShapeError(
                    f"第{k}层输入维度({layers[k].weights.shape[0]})与上一层输出"
                    f"({layers[k - 1].weights.shape[1]})不衔接"
                )
        self.layers = layers
        self.rng_seed = rng_seed
        self._rng = np.random.default_rng([rng_seed, 1])

    @classmethod
    def build(
        cls,
        dims: Sequence[int],
        activation: str = "leaky_relu",
        slope: Optional[float] = None,
        dropout: float = 0.0,
        seed: int = 0
    ) -> "DenseNetwork":
        """
        按维度序列构建网络

        隐层使用给定激活与 dropout，输出层为线性且无 dropout；
        权重 Glorot 均匀初始化 U(±sqrt(6/(fan_in+fan_out)))，偏置为0

        Args:
            dims: [输入, 隐层..., 输出]
            activation: leaky_relu 或 linear（linear 时所有层线性）
            slope: leaky ReLU 负半轴斜率，缺省取配置
            dropout: 隐层 dropout 比例
            seed: 初始化与 dropout 的随机种子
        """
        if len(dims) < 2:
            raise ConfigError(f"网络维度序列至少包含输入与输出: {list(dims)}")
        if slope is None:
            slope = settings.LEAKY_SLOPE
        rng = np.random.default_rng([seed, 0])
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            is_output = k == len(dims) - 2
            layers.append(DenseLayer(
                weights=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                bias=np.zeros(fan_out),
                activation="linear" if is_output else activation,
                slope=slope,
                dropout=0.0 if is_output else dropout,
            ))
        return cls(layers, rng_seed=seed)

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].weights.shape[0]] + [layer.weights.shape[1] for layer in self.layers]

    @property
    def n_inputs(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].weights.shape[1]

    def forward(self, X: np.ndarray, mode: str = "eval",
                masks: Optional[List[Optional[np.ndarray]]] = None):
        """
        前向传播：仿射 → 激活 →（仅训练模式）反向 dropout

        masks 可显式指定每层的缩放掩码（用于有限差分校验），否则训练模式每次重新采样

        Returns:
            (输出 H, 前向记录 tape)
        """
        if mode not in ("train", "eval"):
            raise ConfigError(f"未知模式: {mode}")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ShapeError(f"网络输入维度应为{self.n_inputs}，实际形状{X.shape}")
        tape = ForwardTape(dims=self.dims)
        a = X
        for k, layer in enumerate(self.layers):
            tape.inputs.append(a)
            pre = a @ layer.weights + layer.bias
            tape.pre.append(pre)
            a = layer.activate(pre)
            mask = None
            if masks is not None:
                mask = masks[k]
            elif mode == "train" and layer.dropout > 0:
                keep = 1.0 - layer.dropout
                mask = (self._rng.random(a.shape) < keep) / keep
            if mask is not None:
                a = a * mask
            tape.masks.append(mask)
        return a, tape

    def backward(self, tape: ForwardTape, dL_dH: np.ndarray) -> Gradients:
        """链式法则反向传播，经过记录的激活与 dropout 掩码"""
        if tape.dims != self.dims or len(tape.pre) != len(self.layers):
            raise StateError(f"前向记录与网络结构不匹配: {tape.dims} vs {self.dims}")
        expected = tape.pre[-1].shape
        if dL_dH.shape != expected:
            raise ShapeError(f"上游梯度形状{dL_dH.shape}与网络输出{expected}不匹配")
        g = dL_dH
        grads: List[LayerGradient] = []
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if tape.masks[k] is not None:
                g = g * tape.masks[k]
            g = g * layer.derivative(tape.pre[k])
            grads.append(LayerGradient(dW=tape.inputs[k].T @ g, db=g.sum(axis=0)))
            g = g @ layer.weights.T
        grads.reverse()
        return Gradients(layers=grads, d_input=g)

    def ascend(self, grads: Gradients, eta: float) -> "DenseNetwork":
        """梯度上升：θ ← θ + η·∂/∂θ（原地更新并返回自身）"""
        if eta < 0:
            raise ConfigError(f"学习率不能为负: {eta}")
        if len(grads.layers) != len(self.layers):
            raise StateError(f"梯度层数({len(grads.layers)})与网络层数({len(self.layers)})不一致")
        for k, g in enumerate(grads.layers):
            bad = int(np.count_nonzero(~np.isfinite(g.dW)) + np.count_nonzero(~np.isfinite(g.db)))
            if bad:
                raise NumericError(
                    f"第{k}层梯度包含{bad}个非有限值",
                    diagnostics={"layer": k, "nonfinite": bad},
                )
        for layer, g in zip(self.layers, grads.layers):
            layer.weights += eta * g.dW
            layer.bias += eta * g.db
        return self

    def snapshot(self) -> "DenseNetwork":
        """参数深拷贝"""
        return copy.deepcopy(self)

    def to_dict(self) -> Dict:
        return {
            "dims": self.dims,
            "rng_seed": self.rng_seed,
            "layers": [
                {
                    "activation": layer.activation,
                    "slope": layer.slope,
                    "dropout": layer.dropout,
                    "shape": list(layer.weights.shape),
                    "weights": layer.weights.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "DenseNetwork":
        layers = [
            DenseLayer(
                weights=np.asarray(item["weights"], dtype=np.float64).reshape(item["shape"]),
                bias=np.asarray(item["bias"], dtype=np.float64),
                activation=item["activation"],
                slope=float(item["slope"]),
                dropout=float(item["dropout"]),
            )
            for item in d["layers"]
        ]
        return cls(layers, rng_seed=int(d.get("rng_seed", 0)))
