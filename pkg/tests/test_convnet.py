import numpy as np
import pytest

from hamnet.backprop import cross_entropy
from hamnet.convnet import ConvHamiltonianNet, col2im, conv, conv_transpose, im2col
from hamnet.layers import OutputHead, output_head
from hamnet.linalg import DimensionError
from hamnet.training import TrainConfig, evaluate, train_coordinate_descent


def test_impulse_response_is_flipped_kernel():
    x = np.zeros((1, 6, 6, 1))
    x[0, 2, 3, 0] = 1.0
    K = np.arange(9.0).reshape(3, 3, 1, 1)
    out = conv(x, K)[0, :, :, 0]
    np.testing.assert_array_equal(out[1:4, 2:5], K[::-1, ::-1, 0, 0])
    assert out.sum() == K.sum()


def test_im2col_col2im_adjoint(rng):
    x = rng.normal(size=(2, 5, 4, 3))
    c = rng.normal(size=(2, 5, 4, 27))
    assert np.sum(im2col(x) * c) == pytest.approx(np.sum(x * col2im(c, 3)), rel=1e-12)


def test_conv_transpose_is_adjoint(rng):
    K = rng.normal(size=(3, 3, 4, 2))
    x, t = rng.normal(size=(2, 7, 7, 4)), rng.normal(size=(2, 7, 7, 2))
    assert np.sum(conv(x, K) * t) == pytest.approx(np.sum(x * conv_transpose(t, K)), rel=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        conv(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 1, 1)))


@pytest.mark.parametrize("variant, count", [("H2", 9 * 64 + 8), ("MS1", 9 * 16 + 8)])
def test_params_per_layer(variant, count):
    assert ConvHamiltonianNet.initialize(2, 0.1, 0, variant).params_per_layer() == count


def test_forward_shape_and_input_check():
    net = ConvHamiltonianNet.initialize(1, 0.1, 0)
    out, cache = net.forward(np.zeros((3, 784)))
    assert out.shape == (3, 6272) and len(cache.ys) == 2
    with pytest.raises(DimensionError):
        net.forward(np.zeros((3, 100)))


@pytest.mark.parametrize("variant", ["H2", "MS1"])
def test_gradients_match_finite_differences(variant):
    r = np.random.default_rng(0)
    net = ConvHamiltonianNet.initialize(2, 0.3, r, variant)
    for b in net.b:
        b[:] = r.normal(0, 0.1, 8)
    head = OutputHead(r.normal(0, 0.01, (10, 6272)), r.normal(0, 0.1, 10), 10)
    X, y = r.uniform(0, 1, (2, 784)), np.array([1, 7])

    def loss():
        return float(np.mean(cross_entropy(output_head(net.forward(X)[0], head), y)))

    grads, value = net.backward(net.forward(X)[1], head, y)
    assert value == pytest.approx(loss(), rel=1e-13)
    for arr, g in [(net.K[0], grads.dK[0]), (net.K[1], grads.dK[1]), (net.b[1], grads.db[1]),
                   (net.lift, grads.dlift), (head.W, grads.dW)]:
        for k in r.choice(arr.size, 6, replace=False):
            i = np.unravel_index(k, arr.shape)
            old = arr[i]
            arr[i] = old + 1e-6
            fp = loss()
            arr[i] = old - 1e-6
            fm = loss()
            arr[i] = old
            fd = (fp - fm) / 2e-6
            assert abs(fd - g[i]) <= 1e-5 * max(abs(fd), 1e-6)


def test_learns_tiny_image_problem():
    r = np.random.default_rng(1)
    X = r.uniform(0, 0.2, (60, 784))
    y = np.arange(60) % 2
    X[y == 1, :392] += 0.8
    net = ConvHamiltonianNet.initialize(1, 0.05, 0)
    head = OutputHead.zeros(net.n, 2)
    train_coordinate_descent(net, head, X, y, TrainConfig(epochs=3, batch_size=20, lr=0.01,
                                                          inner_head_iters=0))
    assert evaluate(net, head, X, y) == 1.0
