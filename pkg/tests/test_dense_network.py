"""
全连接网络测试
"""
import numpy as np
import pytest
from app.components.dense_network import DenseLayer, DenseNetwork
from app.utils.errors import ConfigError, NumericError, ShapeError, StateError


@pytest.fixture
def net():
    return DenseNetwork.build([3, 5, 4, 2], seed=3)


def fd_weight_grad(net: DenseNetwork, X, G, layer: int, i: int, j: int,
                   masks=None, h: float = 1e-6) -> float:
    """L = Σ H·G 对单个权重的中心差分"""
    W = net.layers[layer].weights
    orig = W[i, j]
    W[i, j] = orig + h
    up = float(np.sum(net.forward(X, masks=masks)[0] * G))
    W[i, j] = orig - h
    down = float(np.sum(net.forward(X, masks=masks)[0] * G))
    W[i, j] = orig
    return (up - down) / (2 * h)


class TestBuild:
    """网络构建测试"""

    def test_dims_and_output_layer(self, net):
        assert net.dims == [3, 5, 4, 2]
        assert net.layers[-1].activation == "linear"
        assert net.layers[0].activation == "leaky_relu"
        np.testing.assert_array_equal(net.layers[0].bias, 0.0)

    def test_glorot_limits(self):
        net = DenseNetwork.build([100, 50], seed=0)
        limit = np.sqrt(6.0 / 150)
        assert np.all(np.abs(net.layers[0].weights) <= limit)

    def test_seeded(self):
        a = DenseNetwork.build([4, 3, 1], seed=9)
        b = DenseNetwork.build([4, 3, 1], seed=9)
        np.testing.assert_array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            DenseNetwork.build([3])
        with pytest.raises(ConfigError):
            DenseNetwork.build([3, 4, 2], activation="tanh")
        with pytest.raises(ConfigError):
            DenseNetwork.build([3, 4, 2], dropout=1.0)
        with pytest.raises(ShapeError):
            DenseNetwork([DenseLayer(np.ones((3, 4)), np.zeros(4)), DenseLayer(np.ones((5, 1)), np.zeros(1))])


class TestForwardBackward:
    """前向与反向传播测试"""

    def test_leaky_relu(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), slope=0.1)
        np.testing.assert_allclose(layer.activate(np.array([-2.0, 3.0])), [-0.2, 3.0])

    def test_eval_deterministic(self, net):
        X = np.random.default_rng(0).standard_normal((10, 3))
        np.testing.assert_array_equal(net.forward(X)[0], net.forward(X)[0])

    def test_weight_gradients(self, net):
        """反向传播与有限差分一致"""
        rng = np.random.default_rng(1)
        X = rng.standard_normal((16, 3))
        G = rng.standard_normal((16, 2))
        _, tape = net.forward(X)
        grads = net.backward(tape, G)
        for layer in range(3):
            shape = net.layers[layer].weights.shape
            for i, j in [(0, 0), (shape[0] - 1, shape[1] - 1)]:
                fd = fd_weight_grad(net, X, G, layer, i, j)
                assert grads.layers[layer].dW[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_gradients_through_dropout(self):
        """固定掩码时梯度仍与有限差分一致"""
        net = DenseNetwork.build([3, 6, 2], dropout=0.5, seed=4)
        rng = np.random.default_rng(2)
        X = rng.standard_normal((12, 3))
        G = rng.standard_normal((12, 2))
        _, tape = net.forward(X, "train")
        assert tape.masks[0] is not None and tape.masks[1] is None
        grads = net.backward(tape, G)
        for i, j in [(0, 0), (2, 5), (1, 3)]:
            fd = fd_weight_grad(net, X, G, 0, i, j, masks=tape.masks)
            assert grads.layers[0].dW[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_inverted_dropout_scale(self):
        """保留单元按 1/(1-p) 放大"""
        net = DenseNetwork.build([2, 200, 1], dropout=0.25, seed=5)
        _, tape = net.forward(np.ones((50, 2)), "train")
        values = np.unique(tape.masks[0])
        np.testing.assert_allclose(values, [0.0, 1.0 / 0.75])

    def test_shape_errors(self, net):
        with pytest.raises(ShapeError):
            net.forward(np.ones((4, 2)))
        _, tape = net.forward(np.ones((4, 3)))
        with pytest.raises(ShapeError):
            net.backward(tape, np.ones((4, 3)))
        other = DenseNetwork.build([3, 2], seed=0)
        with pytest.raises(StateError):
            other.backward(tape, np.ones((4, 2)))


class TestUpdate:
    """参数更新与序列化测试"""

    def test_ascend_moves_along_gradient(self, net):
        X = np.random.default_rng(3).standard_normal((8, 3))
        G = np.ones((8, 2))
        before = float(np.sum(net.forward(X)[0]))
        _, tape = net.forward(X)
        net.ascend(net.backward(tape, G), 1e-3)
        after = float(np.sum(net.forward(X)[0]))
        assert after > before

    def test_nonfinite_gradient(self, net):
        _, tape = net.forward(np.ones((4, 3)))
        grads = net.backward(tape, np.ones((4, 2)))
        grads.layers[1].dW[0, 0] = np.nan
        with pytest.raises(NumericError) as exc:
            net.ascend(grads, 0.1)
        assert exc.value.diagnostics["layer"] == 1

    def test_snapshot_independent(self, net):
        copy = net.snapshot()
        net.layers[0].weights += 1.0
        assert not np.allclose(copy.layers[0].weights, net.layers[0].weights)

    def test_dict_round_trip(self, net):
        X = np.random.default_rng(4).standard_normal((5, 3))
        restored = DenseNetwork.from_dict(net.to_dict())
        np.testing.assert_array_equal(restored.forward(X)[0], net.forward(X)[0])
