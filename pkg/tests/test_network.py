import numpy as np
import pytest

from core.config import GeneBounds, TrainConfig
from core.genome import decode, random_chromosome
from core.network import (
    DenseLayer,
    FlattenLayer,
    Initializer,
    LayerWeights,
    NetworkSpec,
    NonFiniteLoss,
    Padding,
    PoolType,
    ShapeError,
    ShapeUnderflow,
    backward_and_step,
    build_conv,
    build_pool,
    conv_forward,
    count_weights,
    forward,
    gaussian_init,
    initialize,
    loss_and_gradients,
    pool_forward,
    predict,
    relu,
    softmax,
    softmax_cross_entropy,
    xavier_bound,
    xavier_init,
)

GRID = np.array(
    [
        [1, 2, 3, 0],
        [0, 1, 2, 3],
        [3, 0, 1, 2],
        [2, 3, 0, 1],
    ],
    dtype=np.float64,
)


def _filters(kernel):
    kernel = np.asarray(kernel, dtype=np.float64)
    return kernel.reshape(*kernel.shape, 1, 1)


def test_valid_conv_matches_hand_computed_sums():
    filters = _filters([[1, 0], [2, 1]])
    out = conv_forward(GRID[:, :, None], filters, np.zeros(1), stride=1, padding=Padding.VALID)
    assert out.shape == (3, 3, 1)
    expected = np.array([[2, 6, 10], [6, 2, 6], [10, 6, 2]], dtype=np.float64)
    assert np.array_equal(out[:, :, 0], expected)


def test_same_conv_pads_bottom_right():
    out = conv_forward(GRID[:, :, None], _filters([[1, 1], [1, 1]]), np.zeros(1), stride=1, padding=Padding.SAME)
    assert out.shape == (4, 4, 1)
    assert out[0, 0, 0] == GRID[0:2, 0:2].sum()
    # last row and column only see zeros below and to the right
    assert out[3, 0, 0] == GRID[3, 0] + GRID[3, 1]
    assert out[0, 3, 0] == GRID[0, 3] + GRID[1, 3]
    assert out[3, 3, 0] == GRID[3, 3]


def test_same_conv_with_stride_uses_ceil_division():
    layer = build_conv((7, 7, 1), 3, 2, stride=2, padding=Padding.SAME)
    assert layer.out_shape == (4, 4, 2)
    out = conv_forward(np.ones((1, 7, 7, 1)), np.ones((3, 3, 1, 2)), np.zeros(2), stride=2, padding=Padding.SAME)
    assert out.shape == (1, 4, 4, 2)


def test_conv_channel_mismatch_raises():
    with pytest.raises(ShapeError):
        conv_forward(np.ones((4, 4, 2)), np.ones((2, 2, 1, 1)), np.zeros(1))


POOL_GRID = np.array(
    [
        [1, 5, 2, 0],
        [3, 4, 8, 1],
        [0, 2, 7, 6],
        [9, 1, 3, 4],
    ],
    dtype=np.float64,
)


def test_max_pool_takes_window_maxima():
    out = pool_forward(POOL_GRID[:, :, None], 2, 2, PoolType.MAX)
    assert np.array_equal(out[:, :, 0], np.array([[5, 8], [9, 7]], dtype=np.float64))


def test_avg_pool_takes_window_means():
    out = pool_forward(POOL_GRID[:, :, None], 2, 2, PoolType.AVG)
    assert np.allclose(out[:, :, 0], [[3.25, 2.75], [3.0, 5.0]])


def test_pool_larger_than_input_underflows():
    with pytest.raises(ShapeUnderflow):
        build_pool((3, 3, 1), 4, 4, PoolType.MAX)
    with pytest.raises(ShapeUnderflow):
        build_conv((2, 2, 1), 3, 1, padding=Padding.VALID)


def test_network_spec_rejects_broken_chain():
    conv = build_conv((6, 6, 1), 3, 2)
    with pytest.raises(ShapeError):
        NetworkSpec((6, 6, 1), 2, (conv, FlattenLayer((6, 6, 1), 36), DenseLayer(36, 2, 0.0, 0.1, relu=False)))


def _gradcheck_spec():
    conv1 = build_conv((6, 6, 2), 3, 3, padding=Padding.SAME)
    pool = build_pool(conv1.out_shape, 2, 2, PoolType.MAX)
    conv2 = build_conv(pool.out_shape, 2, 2, padding=Padding.VALID)
    flatten = FlattenLayer(conv2.out_shape, int(np.prod(conv2.out_shape)))
    hidden = DenseLayer(flatten.out_dim, 5, 0.0, 0.1)
    logits = DenseLayer(5, 3, 0.0, 0.1, relu=False)
    return NetworkSpec((6, 6, 2), 3, (conv1, pool, conv2, flatten, hidden, logits))


def _positive_weights(spec, rng):
    # positive activations keep every ReLU away from its kink
    weights = []
    for layer in spec.layers:
        if isinstance(layer, DenseLayer) and not layer.relu:
            weights.append(LayerWeights(rng.normal(0.0, 0.5, layer.weight_shape), rng.normal(0.0, 0.1, layer.out_dim)))
        elif hasattr(layer, "weight_shape"):
            out = layer.weight_shape[-1]
            weights.append(LayerWeights(rng.uniform(0.05, 0.5, layer.weight_shape), rng.uniform(0.01, 0.1, out)))
        else:
            weights.append(None)
    return weights


def _loss(spec, batch, labels, weights):
    logits, _ = forward(spec, batch, weights)
    return softmax_cross_entropy(logits, labels)[0]


def test_gradients_match_central_differences():
    spec = _gradcheck_spec()
    assert spec.param_count <= 500
    eps = 1e-6
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        batch = rng.uniform(0.1, 1.0, (3, 6, 6, 2))
        labels = rng.integers(0, 3, 3)
        weights = _positive_weights(spec, rng)
        _, grads = loss_and_gradients(spec, batch, labels, weights)
        for params, grad in zip(weights, grads):
            if params is None:
                continue
            for array, analytic in ((params.weights, grad.weights), (params.bias, grad.bias)):
                for index in np.ndindex(array.shape):
                    original = array[index]
                    array[index] = original + eps
                    plus = _loss(spec, batch, labels, weights)
                    array[index] = original - eps
                    minus = _loss(spec, batch, labels, weights)
                    array[index] = original
                    numeric = (plus - minus) / (2 * eps)
                    error = abs(numeric - analytic[index]) / max(abs(numeric) + abs(analytic[index]), 1e-6)
                    worst = max(worst, error)
    assert worst < 1e-3


def test_avg_pool_and_strided_conv_gradients():
    conv = build_conv((5, 5, 1), 2, 2, stride=2, padding=Padding.SAME)
    pool = build_pool(conv.out_shape, 3, 3, PoolType.AVG)
    flatten = FlattenLayer(pool.out_shape, int(np.prod(pool.out_shape)))
    spec = NetworkSpec((5, 5, 1), 2, (conv, pool, flatten, DenseLayer(flatten.out_dim, 2, 0.0, 0.1, relu=False)))
    rng = np.random.default_rng(7)
    batch = rng.uniform(0.1, 1.0, (2, 5, 5, 1))
    labels = np.array([0, 1])
    weights = _positive_weights(spec, rng)
    _, grads = loss_and_gradients(spec, batch, labels, weights)
    eps = 1e-6
    for params, grad in zip(weights, grads):
        if params is None:
            continue
        for index in np.ndindex(params.weights.shape):
            original = params.weights[index]
            params.weights[index] = original + eps
            plus = _loss(spec, batch, labels, weights)
            params.weights[index] = original - eps
            minus = _loss(spec, batch, labels, weights)
            params.weights[index] = original
            numeric = (plus - minus) / (2 * eps)
            assert abs(numeric - grad.weights[index]) <= 1e-3 * max(abs(numeric) + abs(grad.weights[index]), 1e-6)


def test_zero_logits_cross_entropy_is_log_classes():
    loss, grad = softmax_cross_entropy(np.zeros((4, 10)), np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(np.log(10))
    assert grad.shape == (4, 10)
    assert np.allclose(grad.sum(axis=1), 0.0)


def _linear_spec(shape, classes):
    flatten = FlattenLayer(shape, int(np.prod(shape)))
    return NetworkSpec(shape, classes, (flatten, DenseLayer(flatten.out_dim, classes, 0.0, 0.1, relu=False)))


def test_predict_breaks_ties_toward_lowest_class():
    spec = _linear_spec((2, 2, 1), 4)
    weights = [None, LayerWeights(np.zeros((4, 4)), np.zeros(4))]
    assert np.array_equal(predict(spec, np.ones((3, 2, 2, 1)), weights), [0, 0, 0])


def test_bad_labels_rejected():
    spec = _linear_spec((2, 2, 1), 2)
    weights = xavier_init(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        loss_and_gradients(spec, np.ones((1, 2, 2, 1), dtype=np.float32), np.array([2]), weights)


def test_non_finite_loss_raises():
    spec = _linear_spec((2, 2, 1), 2)
    weights = [None, LayerWeights(np.full((4, 2), np.inf), np.zeros(2))]
    with pytest.raises(NonFiniteLoss):
        with np.errstate(invalid="ignore"):
            loss_and_gradients(spec, np.ones((1, 2, 2, 1)), np.array([0]), weights)


def test_xavier_bound_uses_receptive_field_fans():
    conv = build_conv((8, 8, 2), 3, 4)
    assert conv.fan_in == 18
    assert conv.fan_out == 36
    assert xavier_bound(conv.fan_in, conv.fan_out) == pytest.approx(1.0 / 3.0)
    flatten = FlattenLayer(conv.out_shape, 8 * 8 * 4)
    spec = NetworkSpec((8, 8, 2), 3, (conv, flatten, DenseLayer(256, 3, 0.0, 0.1, relu=False)))
    weights = xavier_init(spec, np.random.default_rng(1))
    assert np.abs(weights[0].weights).max() <= 1.0 / 3.0
    assert np.abs(weights[2].weights).max() <= xavier_bound(256, 3)
    assert not weights[0].bias.any() and not weights[2].bias.any()


def test_gaussian_init_follows_layer_statistics():
    flatten = FlattenLayer((10, 10, 2), 200)
    spec = NetworkSpec((10, 10, 2), 100, (flatten, DenseLayer(200, 100, 0.2, 0.05, relu=False)))
    weights = gaussian_init(spec, np.random.default_rng(2))
    sample = weights[1].weights
    assert sample.dtype == np.float32
    assert sample.mean() == pytest.approx(0.2, abs=0.005)
    assert sample.std() == pytest.approx(0.05, rel=0.05)
    assert np.all(weights[1].bias == np.float32(0.2))


def test_initialize_is_deterministic_per_seed():
    spec = _gradcheck_spec()
    first = initialize(spec, np.random.default_rng(9), Initializer.XAVIER)
    second = initialize(spec, np.random.default_rng(9), Initializer.XAVIER)
    for a, b in zip(first, second):
        if a is not None:
            assert np.array_equal(a.weights, b.weights)


def test_linear_model_separates_blobs_within_200_steps(blobs):
    spec = _linear_spec(blobs.input_shape, 2)
    weights = xavier_init(spec, np.random.default_rng(0))
    cfg = TrainConfig(learning_rate=0.1, batch_size=20)
    order = np.random.default_rng(0)
    reached_zero = False
    for step in range(200):
        index = order.choice(len(blobs), 20, replace=False)
        weights, _ = backward_and_step(spec, blobs.images[index], blobs.labels[index], weights, cfg)
        if np.all(predict(spec, blobs.images, weights) == blobs.labels):
            reached_zero = True
            break
    assert reached_zero


def _naive_conv(image, filters, bias, pad):
    height, width, channels = image.shape
    size, _, _, maps = filters.shape
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    out_h = padded.shape[0] - size + 1
    out_w = padded.shape[1] - size + 1
    out = np.zeros((out_h, out_w, maps))
    for row in range(out_h):
        for col in range(out_w):
            for m in range(maps):
                total = bias[m]
                for i in range(size):
                    for j in range(size):
                        for c in range(channels):
                            total += padded[row + i, col + j, c] * filters[i, j, c, m]
                out[row, col, m] = total
    return out


@pytest.mark.parametrize("padding, pad", [(Padding.VALID, 0), (Padding.SAME, 1)])
def test_multichannel_conv_matches_nested_loops(padding, pad):
    rng = np.random.default_rng(31)
    image = rng.normal(size=(5, 5, 2))
    filters = rng.normal(size=(3, 3, 2, 4))
    bias = rng.normal(size=4)
    out = conv_forward(image, filters, bias, stride=1, padding=padding)
    expected = _naive_conv(image, filters, bias, pad)
    assert out.shape == expected.shape
    assert np.allclose(out, expected, atol=1e-12)


def test_avg_pool_matches_window_loop():
    image = np.random.default_rng(32).uniform(size=(6, 6, 1))
    out = pool_forward(image, 3, 3, PoolType.AVG)
    expected = np.zeros((2, 2))
    for row in range(2):
        for col in range(2):
            total = 0.0
            for i in range(3):
                for j in range(3):
                    total += image[3 * row + i, 3 * col + j, 0]
            expected[row, col] = total / 9
    assert np.allclose(out[:, :, 0], expected, atol=1e-12)


def test_forward_is_the_composition_of_its_layers():
    spec = _gradcheck_spec()
    rng = np.random.default_rng(33)
    weights = _positive_weights(spec, rng)
    batch = rng.uniform(size=(2, 6, 6, 2))
    conv1, pool, conv2, _, hidden, logits = spec.layers
    x = relu(conv_forward(batch, weights[0].weights, weights[0].bias, conv1.stride, conv1.padding))
    x = pool_forward(x, pool.kernel_size, pool.stride, pool.pool_type)
    x = relu(conv_forward(x, weights[2].weights, weights[2].bias, conv2.stride, conv2.padding))
    x = x.reshape(2, -1)
    x = relu(x @ weights[4].weights + weights[4].bias)
    expected = x @ weights[5].weights + weights[5].bias
    out, _ = forward(spec, batch, weights)
    assert np.allclose(out, expected, atol=1e-12)


def test_softmax_rows_sum_to_one():
    logits = np.random.default_rng(34).normal(scale=20.0, size=(50, 7))
    probs = softmax(logits)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert (probs >= 0).all()


def test_confident_correct_prediction_has_zero_loss():
    logits = np.array([[200.0, 0.0, 0.0], [0.0, 0.0, 200.0]])
    loss, grad = softmax_cross_entropy(logits, np.array([0, 2]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(grad, 0.0)


def test_zero_learning_rate_leaves_weights_unchanged():
    spec = _gradcheck_spec()
    rng = np.random.default_rng(35)
    weights = _positive_weights(spec, rng)
    batch = rng.uniform(size=(3, 6, 6, 2))
    updated, _ = backward_and_step(spec, batch, np.array([0, 1, 2]), weights, TrainConfig(learning_rate=0.0))
    for before, after in zip(weights, updated):
        if before is not None:
            assert np.array_equal(before.weights, after.weights)
            assert np.array_equal(before.bias, after.bias)


def test_small_sgd_step_does_not_increase_loss():
    bounds = GeneBounds(n_cp=3, n_f=2, max_filter_size=3, max_kernel_size=2, max_feature_maps=4, max_neurons=8)
    rng = np.random.default_rng(36)
    cfg = TrainConfig(learning_rate=1e-3)
    nets, improved = 0, 0
    while nets < 100:
        try:
            spec = decode(random_chromosome(bounds, rng), (8, 8, 1), 3)
        except ShapeUnderflow:
            continue
        weights = initialize(spec, rng, Initializer.GAUSSIAN, dtype=np.float64)
        batch = rng.uniform(size=(4, 8, 8, 1))
        labels = rng.integers(0, 3, 4)
        updated, before = backward_and_step(spec, batch, labels, weights, cfg)
        nets += 1
        improved += _loss(spec, batch, labels, updated) <= before
    assert improved >= 95


def test_count_weights_matches_network_param_count():
    spec = _gradcheck_spec()
    assert count_weights(gaussian_init(spec, np.random.default_rng(37))) == spec.param_count
