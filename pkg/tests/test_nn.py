import numpy as np
import pytest

from core import autodiff as ad
from core.autodiff import Tensor
from core.errors import ConfigError, DimensionError
from core.nn import Adam, Conv2d, Dense, NetworkParams, build_network, group_normalize, mse


def test_dirac_convolution_is_identity(rng):
    conv = Conv2d(3, 3, 3, rng)
    weight = np.zeros((3, 3, 3, 3))
    for c in range(3):
        weight[c, c, 1, 1] = 1.0
    conv.weight.data = weight
    x = rng.normal(size=(2, 3, 5, 7))
    np.testing.assert_allclose(conv(Tensor(x)).data, x)


def test_strided_convolution_halves(rng):
    conv = Conv2d(2, 4, 3, rng, stride=2)
    assert conv(Tensor(np.zeros((1, 2, 8, 12)))).shape == (1, 4, 4, 6)


def test_unsupported_kernel(rng):
    with pytest.raises(ConfigError):
        Conv2d(1, 1, 5, rng)


def test_group_norm_of_constant_is_zero():
    x = Tensor(np.full((2, 4, 3, 3), 7.0))
    np.testing.assert_allclose(group_normalize(x, 2).data, 0.0)


def test_group_norm_statistics(rng):
    x = Tensor(rng.normal(3.0, 2.0, size=(1, 4, 6, 6)))
    out = group_normalize(x, 2).data.reshape(2, -1)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-3)


def test_zero_dense(rng):
    layer = Dense(5, 3, rng)
    layer.weight.data = np.zeros((5, 3))
    np.testing.assert_allclose(layer(Tensor(rng.normal(size=(4, 5)))).data, 0.0)
    with pytest.raises(DimensionError):
        layer(Tensor(np.zeros((4, 6))))


def test_adam_minimizes_quadratic():
    p = ad.parameter(np.array([0.0]))
    optimizer = Adam({"p": p}, lr=0.1)
    for _ in range(1000):
        ((p - 3.0) ** 2).sum().backward()
        optimizer.step()
    assert p.data[0] == pytest.approx(3.0, abs=1e-2)


def test_adam_skips_nonfinite():
    p = ad.parameter(np.array([1.0]))
    optimizer = Adam({"p": p}, lr=0.1)
    assert not optimizer.step({"p": np.array([np.nan])})
    assert optimizer.skipped == 1
    assert p.data[0] == 1.0


def test_unet_shapes(rng):
    descriptor = {"arch": "unet", "in_channels": 2, "out_channels": 1, "cond_scales": [1.0], "base": 8}
    net = build_network(descriptor, rng)
    out = net(Tensor(rng.normal(size=(2, 2, 8, 12))), [np.array([0.1, 0.5])])
    assert out.shape == (2, 1, 8, 12)
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((1, 2, 6, 12))), [np.array([0.1])])


def test_mlp_shapes(rng):
    descriptor = {"arch": "mlp", "in_channels": 1, "out_channels": 2, "cond_scales": [1.0, 10.0],
                  "shape": [4, 6], "hidden": 16}
    net = build_network(descriptor, rng)
    out = net(Tensor(np.zeros((3, 1, 4, 6))), [np.zeros(3), np.ones(3)])
    assert out.shape == (3, 2, 4, 6)


def test_unknown_arch(rng):
    with pytest.raises(ConfigError):
        build_network({"arch": "transformer", "in_channels": 1, "out_channels": 1, "cond_scales": []}, rng)


def test_training_step_reduces_loss(rng):
    descriptor = {"arch": "mlp", "in_channels": 1, "out_channels": 1, "cond_scales": [1.0],
                  "shape": [2, 2], "hidden": 8}
    net = build_network(descriptor, rng)
    x = Tensor(rng.normal(size=(4, 1, 2, 2)))
    target = np.ones((4, 1, 2, 2))
    optimizer = Adam(net.parameters(), lr=1e-2)
    first = None
    for _ in range(50):
        loss = mse(net(x, [np.zeros(4)]), target)
        first = first if first is not None else loss.item()
        loss.backward()
        optimizer.step()
    assert mse(net(x, [np.zeros(4)]), target).item() < first


def test_params_load_checks_names(rng):
    params = NetworkParams({}, {"w": ad.parameter(np.zeros(3))})
    with pytest.raises(DimensionError):
        params.load_arrays({"v": np.zeros(3)})
    with pytest.raises(DimensionError):
        params.load_arrays({"w": np.zeros(4)})
    params.load_arrays({"w": np.ones(3)})
    assert params.count == 3
