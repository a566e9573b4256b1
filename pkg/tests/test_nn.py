import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmt import nn
from pmt.nn import AvgPool2d, Conv2d, Flatten, L2Normalize, Linear, ReLU, Sigmoid, Stack, UpsampleNearest2x


def random_stack(layers, in_shape, seed=0):
    g = np.random.default_rng(seed)
    params = [[g.normal(0, 0.5, s) for s in nn.param_shapes(l)] for l in layers]
    return Stack(list(layers), params), g.uniform(0, 1, in_shape)


def direct_conv(x, w, b, stride, pad):
    """Loop-level cross-correlation oracle."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[oc, i, j] = np.sum(patch * w[oc]) + b[oc]
    return out


NETWORKS = {
    "conv": ([Conv2d(2, 3, 3, 1, 1)], (2, 5, 5)),
    "conv-strided": ([Conv2d(2, 2, 3, 2, 0)], (2, 7, 7)),
    "relu": ([Conv2d(2, 3, 3, 1, 1), ReLU()], (2, 4, 4)),
    "sigmoid": ([Conv2d(1, 2, 3, 1, 1), Sigmoid()], (1, 4, 4)),
    "avgpool": ([Conv2d(1, 2, 3, 1, 1), AvgPool2d(2)], (1, 6, 6)),
    "upsample": ([Conv2d(1, 2, 3, 1, 1), UpsampleNearest2x()], (1, 3, 3)),
    "flatten-linear": ([Flatten(), Linear(12, 4)], (3, 2, 2)),
    "l2normalize": ([Flatten(), Linear(8, 5), L2Normalize()], (2, 2, 2)),
}


@pytest.mark.parametrize("name", sorted(NETWORKS))
def test_grad_check_every_layer(name):
    layers, shape = NETWORKS[name]
    net, x = random_stack(layers, shape, seed=3)
    assert nn.relu_margin(net, x) > 1e-4
    target = nn.model_forward(net, x) * 0.3 + 0.1
    assert nn.grad_check(net, x, nn.feature_distance_loss(target)) <= 1e-6


def test_grad_check_cross_entropy():
    net, x = random_stack([Flatten(), Linear(8, 6), Sigmoid(), Linear(6, 3)], (2, 2, 2), seed=1)
    assert nn.grad_check(net, x, nn.cross_entropy_loss(2)) <= 1e-6


def test_grad_check_detects_a_wrong_gradient():
    net, x = random_stack([Flatten(), Linear(4, 2)], (1, 2, 2))

    def bad(out):
        return float(np.sum(out**2)), out  # true gradient is 2 * out

    assert nn.grad_check(net, x, bad) > 0.1


@given(
    c=st.integers(1, 3),
    o=st.integers(1, 3),
    side=st.integers(3, 7),
    k=st.sampled_from([1, 3]),
    stride=st.integers(1, 2),
    pad=st.integers(0, 1),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=40, deadline=None)
def test_conv_matches_direct_loops(c, o, side, k, stride, pad, seed):
    pad = min(pad, k - 1)
    g = np.random.default_rng(seed)
    x = g.normal(size=(c, side, side))
    w = g.normal(size=(o, c, k, k))
    b = g.normal(size=o)
    got = nn.layer_forward(Conv2d(c, o, k, stride, pad), [w, b], x)
    np.testing.assert_allclose(got, direct_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_avgpool_and_upsample_values():
    x = np.arange(16.0).reshape(1, 4, 4)
    pooled = nn.layer_forward(AvgPool2d(2), [], x)
    np.testing.assert_array_equal(pooled, [[[2.5, 4.5], [10.5, 12.5]]])
    up = nn.layer_forward(UpsampleNearest2x(), [], pooled)
    assert up.shape == (1, 4, 4)
    np.testing.assert_array_equal(up[0, :2, :2], 2.5)


def test_l2normalize_unit_norm():
    y = nn.layer_forward(L2Normalize(), [], np.array([3.0, 4.0]))
    np.testing.assert_allclose(y, [0.6, 0.8], rtol=0, atol=1e-15)


def test_softmax_cross_entropy_stable_for_large_logits():
    loss, g = nn.softmax_cross_entropy(np.array([1000.0, 0.0, -1000.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(g))
    assert g.sum() == pytest.approx(0.0, abs=1e-12)


def test_shape_error_names_layer_and_shapes():
    net = Stack([Conv2d(3, 4, 3, 1, 1), Flatten(), Linear(10, 2)], [])
    net.params = [[np.zeros(s) for s in nn.param_shapes(l)] for l in net.layers]
    with pytest.raises(nn.ShapeError) as err:
        nn.model_forward(net, np.zeros((3, 4, 4)))
    assert err.value.index == 2
    assert err.value.expected is not None and err.value.actual is not None


def test_shape_error_on_wrong_channels():
    with pytest.raises(nn.ShapeError):
        nn.output_shape(Conv2d(3, 4, 3), (2, 8, 8))


def test_chain_shapes_of_recognizer_blocks():
    layers = [Conv2d(3, 16, 3, 1, 1), ReLU(), AvgPool2d(2), Flatten(), Linear(16 * 16 * 16, 8)]
    assert nn.chain_shapes(layers, (3, 32, 32)) == [(3, 32, 32), (16, 32, 32), (16, 32, 32), (16, 16, 16), (4096,), (8,)]


def test_nonfinite_output_rejected():
    net, x = random_stack([Flatten(), Linear(4, 2)], (1, 2, 2))
    x[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        nn.model_forward(net, x)


def test_input_only_backward_matches_full_backward():
    net, x = random_stack([Conv2d(2, 3, 3, 1, 1), ReLU(), AvgPool2d(2), Conv2d(3, 2, 3, 2, 1)], (2, 8, 8), seed=5)
    acts = nn.model_forward_collect(net, x)
    g = np.random.default_rng(9).normal(size=acts[-1].shape)
    full, grads = nn.model_backward(net, acts, g)
    fast, none = nn.model_backward(net, acts, g, need_param_grads=False)
    np.testing.assert_allclose(fast, full, rtol=1e-12, atol=1e-13)
    assert all(len(p) == 0 for p in none)
