import numpy as np
import pytest

from gconv.domain import Point, regular_grid_points
from gconv.fdcheck import (
    central_difference,
    check_dense_softmax,
    check_full_stack,
    check_maxpool,
    check_relu_bias,
    rel_error,
)
from gconv.network import (
    DenseLayer,
    Network,
    NetworkConfig,
    NetworkTemplate,
    count_params,
    dense_forward,
    maxpool_backward,
    maxpool_forward,
    parse_network_config,
    plan_pool,
    relu_bias_backward,
    relu_bias_forward,
    softmax,
    softmax_xent_backward,
    softmax_xent_forward,
)


# -- relu + fused bias -------------------------------------------------------

def test_relu_bias_values():
    assert relu_bias_forward(np.array([-5.0]), np.array([2.0]))[0] == 0.0
    assert relu_bias_forward(np.array([1.0]), np.array([0.5]))[0] == 1.5


def test_relu_bias_backward_regions():
    up = np.ones((2, 3, 4))
    pre = np.full((2, 3, 4), 2.0)
    delta, d_bias = relu_bias_backward(pre, np.zeros(4), up)
    np.testing.assert_array_equal(delta, up)
    np.testing.assert_array_equal(d_bias, np.full(4, 6.0))
    delta, d_bias = relu_bias_backward(-pre, np.zeros(4), up)
    assert np.all(delta == 0) and np.all(d_bias == 0)
    # subgradient at exactly zero is zero
    delta, _ = relu_bias_backward(np.zeros((1, 1, 1)), np.zeros(1), np.ones((1, 1, 1)))
    assert delta[0, 0, 0] == 0.0


def test_relu_bias_finite_differences():
    for result in check_relu_bias(5):
        assert result.passed, f"{result.name}: {result.rel_error}"


# -- pooling -----------------------------------------------------------------

def test_plan_pool_regular_grid():
    plan = plan_pool(regular_grid_points(28, 28), 2.0, Point(-0.5, -0.5), nx=14, ny=14)
    assert plan.num_patches == 14 * 14
    assert all(mem.size == 4 for mem in plan.members)
    # top-left patch holds pixels (0,0), (1,0), (0,1), (1,1)
    np.testing.assert_array_equal(plan.members[0], [0, 1, 28, 29])
    # derived grid (no nx/ny) gives the same 14x14 cover
    derived = plan_pool(regular_grid_points(28, 28), 2.0, Point(-0.5, -0.5))
    assert (derived.nx, derived.ny) == (14, 14)


def test_plan_pool_partition_property():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-1, 29, size=(300, 2))
    plan = plan_pool(pts, 2.0, Point(-0.5, -0.5), nx=14, ny=14)
    counts = np.zeros(300, dtype=int)
    for mem in plan.members:
        counts[mem] += 1
    # clamping assigns every point to exactly one patch
    np.testing.assert_array_equal(counts, np.ones(300, dtype=int))


def test_plan_pool_variable_counts():
    # a patch of 7 and a neighbor of 1 is a legal plan
    pts = [(0.1 * i, 0.0) for i in range(7)] + [(2.5, 0.0)]
    plan = plan_pool(pts, 2.0, Point(-0.5, -0.5), nx=2, ny=1)
    sizes = sorted(mem.size for mem in plan.members)
    assert sizes == [1, 7]


def test_plan_pool_empty_input():
    plan = plan_pool(np.zeros((0, 2)), 2.0, Point(0.0, 0.0), nx=3, ny=3)
    assert plan.num_patches == 9
    assert all(mem.size == 0 for mem in plan.members)


def test_plan_pool_patch_centers():
    plan = plan_pool([(0.0, 0.0)], 2.0, Point(-0.5, -0.5), nx=2, ny=2)
    np.testing.assert_allclose(plan.out_points[0], [0.5, 0.5])
    np.testing.assert_allclose(plan.out_points[3], [2.5, 2.5])


def test_maxpool_forward_basic():
    pts = [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0)]
    plan = plan_pool(pts, 2.0, Point(-0.5, -0.5), nx=1, ny=1)
    vals = np.array([1.0, 3.0, 2.0]).reshape(1, 3, 1)
    pooled, argmax = maxpool_forward(vals, plan)
    assert pooled[0, 0, 0] == 3.0
    assert argmax[0, 0, 0] == 1


def test_maxpool_empty_patch_is_zero():
    plan = plan_pool([(0.2, 0.2)], 1.0, Point(0.0, 0.0), nx=2, ny=1)
    pooled, argmax = maxpool_forward(np.array([[[7.0]]]), plan)
    assert pooled[0, 1, 0] == 0.0
    assert argmax[0, 1, 0] == -1


def test_maxpool_all_negative_patch():
    plan = plan_pool([(0.0, 0.0), (0.5, 0.0)], 2.0, Point(-0.5, -0.5), nx=1, ny=1)
    pooled, _ = maxpool_forward(np.array([-2.0, -1.0]).reshape(1, 2, 1), plan)
    assert pooled[0, 0, 0] == -1.0


def test_maxpool_tie_breaks_to_lowest_index():
    plan = plan_pool([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)], 2.0, Point(-0.5, -0.5), nx=1, ny=1)
    vals = np.array([5.0, 5.0, 1.0]).reshape(1, 3, 1)
    _, argmax = maxpool_forward(vals, plan)
    assert argmax[0, 0, 0] == 0


def test_maxpool_backward_routing():
    plan = plan_pool([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)], 2.0, Point(-0.5, -0.5), nx=1, ny=1)
    vals = np.array([1.0, 9.0, 2.0]).reshape(1, 3, 1)
    pooled, argmax = maxpool_forward(vals, plan)
    grad = maxpool_backward(np.full((1, 1, 1), 4.0), argmax, 3)
    np.testing.assert_array_equal(grad.ravel(), [0.0, 4.0, 0.0])


def test_maxpool_finite_differences():
    for result in check_maxpool(6):
        assert result.passed, f"{result.name}: {result.rel_error}"


# -- dense + softmax ---------------------------------------------------------

def test_dense_identity_passthrough():
    x = np.arange(6.0).reshape(2, 3)
    out = dense_forward(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(out, x)


def test_softmax_uniform_loss():
    logits = np.zeros((4, 10))
    loss, probs = softmax_xent_forward(logits, np.array([0, 3, 5, 9]))
    assert abs(loss - np.log(10)) < 1e-12
    np.testing.assert_allclose(probs, 0.1)


def test_softmax_rows_sum_to_one_and_loss_nonnegative():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(8, 10)) * 5
    labels = rng.integers(0, 10, size=8)
    loss, probs = softmax_xent_forward(logits, labels)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert loss >= 0.0


def test_softmax_backward_divisor():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 5))
    labels = rng.integers(0, 5, size=4)
    _, probs = softmax_xent_forward(logits, labels)
    d_default = softmax_xent_backward(probs, labels)
    d_total = softmax_xent_backward(probs, labels, divisor=8)
    np.testing.assert_allclose(d_default, d_total * 2.0, atol=1e-15)


def test_dense_softmax_finite_differences():
    for result in check_dense_softmax(7):
        assert result.passed, f"{result.name}: {result.rel_error}"


def test_full_stack_finite_differences():
    for result in check_full_stack(8):
        assert result.passed, f"{result.name}: {result.rel_error}"


# -- parameter counting ------------------------------------------------------

def test_count_params_gcnn_architecture():
    # 20 maps x 1 channel x 25 slots + 20 biases          =       520
    # dense (14*14*20 = 3920) -> 500 (+500 biases)        = 1,960,500
    # output 500 -> 10 (+10 biases)                       =     5,010
    expected = (20 * 1 * 25 + 20) + (3920 * 500 + 500) + (500 * 10 + 10)
    assert expected == 1_966_030
    template = NetworkTemplate(NetworkConfig(model="gcnn"))
    assert template.count_params() == expected
    assert count_params(template.instantiate()) == expected


def test_count_params_mlp_architecture():
    # 784 -> 500 -> 500 -> 10 with biases
    expected = (784 * 500 + 500) + (500 * 500 + 500) + (500 * 10 + 10)
    assert expected == 648_010
    template = NetworkTemplate(NetworkConfig(model="mlp", hidden=(500, 500)))
    assert template.count_params() == expected
    assert count_params(template.instantiate()) == expected


def test_count_params_empty_network():
    assert count_params(Network([])) == 0
    assert count_params(None) == 0


# -- regular-grid degeneracy of the full conv block ---------------------------

def reference_cnn_block(image, k2d, bias, width, height):
    """Independent stack: zero-padded conv + relu(bias) + 2x2 max pool."""
    from gconv.bench import reference_conv2d

    conv = np.stack([reference_conv2d(image, k2d[m]) for m in range(k2d.shape[0])], axis=-1)
    act = np.maximum(conv + bias, 0.0)  # (H, W, F)
    H, W, F = act.shape
    pooled = act.reshape(H // 2, 2, W // 2, 2, F).max(axis=(1, 3))
    return pooled.reshape(-1, F)


def test_regular_grid_block_matches_standard_cnn():
    rng = np.random.default_rng(17)
    cfg = NetworkConfig(model="gcnn", feature_maps=(4,), seed=3)
    template = NetworkTemplate(cfg)
    net = template.instantiate()
    image = rng.random((28, 28))
    out = net.layers[0].forward(image.reshape(1, -1, 1))
    out = net.layers[1].forward(out)
    out = net.layers[2].forward(out)
    k2d = template.kernels[0][:, 0, :].reshape(4, 5, 5)
    want = reference_cnn_block(image, k2d, template.conv_biases[0], 28, 28)
    np.testing.assert_allclose(out[0], want, atol=1e-12)


# -- config ------------------------------------------------------------------

def test_config_roundtrip():
    cfg = NetworkConfig(model="gcnn", feature_maps=(20,), hidden=(500,), seed=9)
    back = parse_network_config(cfg.to_text())
    assert back == cfg


def test_config_parse_tolerates_comments_and_unknown_keys():
    text = "# a comment\nmodel=mlp\nhidden=300,200\nfuture_key=whatever\n"
    cfg = parse_network_config(text)
    assert cfg.model == "mlp"
    assert cfg.hidden == (300, 200)


def test_config_parse_errors():
    with pytest.raises(ValueError, match="unknown model"):
        parse_network_config("model=transformer\n")
    with pytest.raises(ValueError, match="key=value"):
        parse_network_config("just some words\n")


def test_template_rejects_wrong_point_count():
    template = NetworkTemplate(NetworkConfig(model="gcnn", input_width=4, input_height=4))
    with pytest.raises(ValueError, match="expected 16 points"):
        template.instantiate(np.zeros((9, 2)))


def test_instances_share_parameters():
    rng = np.random.default_rng(0)
    template = NetworkTemplate(
        NetworkConfig(model="gcnn", input_width=6, input_height=6, feature_maps=(2,), hidden=(5,), classes=3)
    )
    a = template.instantiate()
    b = template.instantiate(template.ref_points + rng.normal(0, 0.3, size=(36, 2)))
    for pa, pb in zip(a.params, b.params):
        assert pa is pb


def test_network_clone_shares_params_not_caches():
    template = NetworkTemplate(
        NetworkConfig(model="mlp", input_width=3, input_height=3, hidden=(4,), classes=2)
    )
    net = template.instantiate()
    twin = net.clone()
    for pa, pb in zip(net.params, twin.params):
        assert pa is pb
    x = np.random.default_rng(1).random((2, 9, 1))
    net.forward(x)
    assert twin.layers[0]._x is None  # clone keeps its own caches


def test_softmax_numerical_stability():
    logits = np.array([[1000.0, 1000.0], [-1000.0, -1000.0]])
    p = softmax(logits)
    np.testing.assert_allclose(p, 0.5)
