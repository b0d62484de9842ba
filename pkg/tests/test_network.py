import numpy as np
import pytest

from defectnas.arch_graph import ArchGraph, LayerSpec, SkipEdge, infer_shapes, predefined_architecture
from defectnas.network import Network


def _graph(layers, skips=(), patch=8):
    return ArchGraph(tuple(layers), tuple(skips), 3, patch, 6, None, "t")


MIXED = _graph([
    LayerSpec("conv", kernel=3, features=4, padding=1, bn=True, relu=True),
    LayerSpec("sepconv", kernel=3, features=4, padding=1, bias=False, bn=True, relu=True),
    LayerSpec("conv", kernel=3, features=6, padding=1, stride=2, preact=True, bias=False),
    LayerSpec("maxpool", kernel=3, padding=1, features=6, bias=False),
    LayerSpec("spp", spp_scales=3, bias=False),
    LayerSpec("dense", features=5, bn=True, relu=True),
    LayerSpec("classifier", features=6),
], [
    SkipEdge(0, 2, "add", projection=True),  # 3 -> 4 channels
    SkipEdge(1, 3, "concat"),
    SkipEdge(2, 4, "add", projection=True),  # across the stride-2 conv
])

DENSE_HEAD = _graph([
    LayerSpec("conv", kernel=3, features=3, padding=1, relu=True),
    LayerSpec("avgpool", kernel=3, stride=2, padding=1, features=5, bias=False),
    LayerSpec("flatten", bias=False),
    LayerSpec("classifier", features=6),
], [SkipEdge(0, 2, "add")])


def _sampled_param_check(net, x, rng, count=12, h=1e-6):
    r = rng.standard_normal((len(x), 6))

    def loss():
        return float((net.forward(x, train=True) * r).sum())

    net.zero_grads()
    net.forward(x, train=True)
    net.backward(r)
    worst = 0.0
    for p in net.parameters():
        for name, arr in p.arrays.items():
            analytic = p.grads[name]
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(count, flat.size), replace=False)
            num, ana = [], []
            for i in picks:
                old = flat[i]
                flat[i] = old + h
                fp = loss()
                flat[i] = old - h
                fm = loss()
                flat[i] = old
                num.append((fp - fm) / (2 * h))
                ana.append(analytic.reshape(-1)[i])
            ana, num = np.array(ana), np.array(num)
            # biases feeding batchnorm have an exact zero gradient, so scale by
            # the array's largest entry (floored) rather than elementwise
            worst = max(worst, np.abs(ana - num).max() / max(np.abs(num).max(), np.abs(ana).max(), 1e-3))
    return worst


@pytest.mark.parametrize("graph", [MIXED, DENSE_HEAD], ids=["mixed", "flatten"])
def test_network_gradients(graph):
    rng = np.random.default_rng(0)
    net = Network(graph, rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 3, 8, 8))
    assert _sampled_param_check(net, x, rng) < 1e-4


def test_input_gradient():
    rng = np.random.default_rng(1)
    net = Network(MIXED, rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 3, 8, 8))
    r = rng.standard_normal((3, 6))
    net.forward(x, train=True)
    dx = net.backward(r)
    i = (1, 2, 3, 4)
    h = 1e-6
    x[i] += h
    fp = float((net.forward(x, train=True) * r).sum())
    x[i] -= 2 * h
    fm = float((net.forward(x, train=True) * r).sum())
    assert dx[i] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-8)


@pytest.mark.parametrize("name", ["metaqnn-1", "metaqnn-2", "metaqnn-3", "wrn-28-4", "densenet-121"])
def test_allocated_parameters_match_shape_inference(name):
    g = predefined_architecture(name, 64)
    net = Network(g, rng=np.random.default_rng(0), input_size=64)
    assert net.param_count() == infer_shapes(g, 64).param_count


def test_forward_shapes_and_inference_determinism():
    net = Network(MIXED, rng=np.random.default_rng(2))
    x = np.random.default_rng(3).standard_normal((4, 3, 8, 8)).astype(np.float32)
    a = net.forward(x, train=False)
    b = net.forward(x, train=False)
    assert a.shape == (4, 6) and a.dtype == np.float32
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(net.predict(x, batch_size=3), 1 / (1 + np.exp(-a.astype(np.float64))), rtol=1e-5)


def test_state_dict_round_trip():
    a = Network(MIXED, rng=np.random.default_rng(4))
    b = Network(MIXED, rng=np.random.default_rng(5))
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(6).standard_normal((2, 3, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(a.forward(x), b.forward(x))
