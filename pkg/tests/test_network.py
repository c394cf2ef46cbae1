from fractions import Fraction

import numpy as np
import pytest

from models.errors import ConstructionError, ScalarModeError, ShapeError, SpecError
from models.network import (
    LayerParams,
    LayerSpec,
    NetworkParams,
    NetworkSpec,
    filled,
    forward_batch,
    forward_layer,
    forward_network,
    identity_params,
    lift_params,
    pad_channels,
    shrink_receptive,
    to_unshared,
    validate,
)
from models.tensor_core import DenseTensor
from models.constructions import random_params


def layer_params(weights, biases, shared=True, mode="exact"):
    return LayerParams.of(np.array(weights, dtype=object), np.array(biases, dtype=object), shared, mode)


def test_layer_spec_rejects_non_positive():
    with pytest.raises(SpecError):
        LayerSpec(0, 1, 1)
    with pytest.raises(SpecError):
        LayerSpec(2, True, 1)
    with pytest.raises(SpecError):
        NetworkSpec(4, 0, ((2, 2, 1),))


def test_spatial_sizes_round_up():
    spec = NetworkSpec(5, 2, ((3, 2, 2), (2, 2, 2), (2, 2, 1)))
    assert spec.spatial_sizes() == [5, 3, 2, 1]
    assert spec.channels() == [2, 2, 2, 1]
    assert spec.is_collapsing
    assert not spec.is_non_overlapping


def test_layer_index_is_one_based():
    spec = NetworkSpec(4, 2, ((2, 1, 4), (2, 2, 1)))
    assert spec.layer(1) == LayerSpec(2, 1, 4)
    with pytest.raises(SpecError):
        spec.layer(0)


def test_product_pool_window():
    x = DenseTensor.exact([[[1, 2], [3, 4]]])
    params = layer_params(np.ones((1, 1, 2, 2)), np.zeros((1, 2, 2)))
    out = forward_layer(x, LayerSpec(2, 2, 1), params)
    assert out.dims == (1, 1, 1)
    assert out.entries() == [24]


def test_out_of_bounds_factors_reduce_to_bias():
    x = DenseTensor.exact([[[1, 2], [3, 4]]])
    weights = np.ones((1, 1, 2, 2))
    biases = np.array([[[1, 2], [3, 5]]])
    out = forward_layer(x, LayerSpec(2, 1, 1), layer_params(weights, biases))
    assert out.dims == (1, 2, 2)
    # window at (u, v) reads x[u + j, v + i] with bias b[j, i]
    assert out.data[0, 0, 0] == (1 + 1) * (2 + 2) * (3 + 3) * (5 + 4)
    assert out.data[0, 0, 1] == (1 + 2) * 2 * (3 + 4) * 5
    assert out.data[0, 1, 0] == (1 + 3) * (2 + 4) * 3 * 5
    assert out.data[0, 1, 1] == (1 + 4) * 2 * 3 * 5


def test_identity_layer_keeps_input(random_rational_tensor):
    x = random_rational_tensor((3, 4, 4))
    for R in (1, 3):
        layer = LayerSpec(R, 1, 5)
        out = forward_layer(x, layer, identity_params(layer, 3))
        assert out.dims == (5, 4, 4)
        assert DenseTensor(np.array(out.data[:3]), "exact").equals(x)
        assert all(v == 0 for v in out.data[3:].ravel())


def test_identity_needs_stride_one_and_enough_channels():
    with pytest.raises(ConstructionError):
        identity_params(LayerSpec(2, 2, 4), 2)
    with pytest.raises(ConstructionError):
        identity_params(LayerSpec(1, 1, 1), 2)


def test_composed_identities(random_rational_tensor):
    spec = NetworkSpec(3, 2, ((1, 1, 2), (3, 1, 2), (2, 1, 2, False)))
    params = NetworkParams(tuple(
        identity_params(layer, 2, 3) for layer in spec.layers
    ))
    x = random_rational_tensor((2, 3, 3))
    assert forward_network(spec, params, x).equals(x)


def test_shrink_receptive_preserves_output(rng, random_rational_tensor):
    layer_small = LayerSpec(1, 1, 2)
    small = random_params(NetworkSpec(3, 2, (layer_small,)), seed=3)[0]
    unchanged = shrink_receptive(small, 1)
    assert unchanged is small
    big = shrink_receptive(small, 3)
    assert big.R == 3
    for _ in range(20):
        x = random_rational_tensor((2, 3, 3))
        assert forward_layer(x, LayerSpec(3, 1, 2), big).equals(forward_layer(x, layer_small, small))


def test_shrink_receptive_with_stride(random_rational_tensor):
    small = random_params(NetworkSpec(4, 2, ((2, 2, 2),)), seed=5)[0]
    big = shrink_receptive(small, 3)
    x = random_rational_tensor((2, 4, 4))
    assert forward_layer(x, LayerSpec(3, 2, 2), big).equals(forward_layer(x, LayerSpec(2, 2, 2), small))


def test_shrink_receptive_rejects_growth():
    params = random_params(NetworkSpec(4, 2, ((3, 1, 2),)), seed=0)[0]
    with pytest.raises(ShapeError):
        shrink_receptive(params, 2)


def test_unshared_matches_shared(random_rational_tensor):
    spec = NetworkSpec(4, 2, ((3, 2, 3),))
    shared = random_params(spec, seed=11)[0]
    unshared = to_unshared(shared, 2)
    assert unshared.weights.shape == (2, 2, 3, 2, 3, 3)
    x = random_rational_tensor((2, 4, 4))
    assert forward_layer(x, LayerSpec(3, 2, 3, False), unshared).equals(
        forward_layer(x, LayerSpec(3, 2, 3), shared)
    )


def test_pad_channels_zero_outputs(random_rational_tensor):
    params = random_params(NetworkSpec(2, 2, ((2, 2, 1),)), seed=2)[0]
    padded = pad_channels(params, 3, 4)
    x = random_rational_tensor((4, 2, 2))
    out = forward_layer(x, LayerSpec(2, 2, 3), padded)
    ref = forward_layer(DenseTensor(np.array(x.data[:2]), "exact"), LayerSpec(2, 2, 1), params)
    assert out.data[0, 0, 0] == ref.data[0, 0, 0]
    assert out.data[1, 0, 0] == 0 and out.data[2, 0, 0] == 0


@pytest.mark.parametrize("big_layers, small_layers", [
    (((3, 1, 4), (2, 2, 4), (2, 2, 1)), ((2, 2, 2), (2, 2, 1))),
    (((3, 3, 3), (1, 1, 3)), ((2, 3, 2),)),
    (((1, 1, 2), (2, 2, 2, False), (1, 1, 2), (2, 2, 1)), ((2, 2, 2), (2, 2, 1))),
])
def test_lift_reproduces_smaller_network(rng, big_layers, small_layers):
    H = 4 if big_layers[0][1] != 3 else 3
    big = NetworkSpec(H, 2, big_layers)
    small = NetworkSpec(H, 2, small_layers)
    small_params = random_params(small, seed=7)
    lifted = lift_params(big, small, small_params)
    lifted.check(big)
    batch = np.vectorize(lambda v: Fraction(int(v), 2), otypes=[object])(
        rng.integers(-3, 4, size=(50, 2, H, H))
    )
    out_big = forward_batch(big, lifted, batch)
    out_small = forward_batch(small, small_params, batch)
    D = small.layers[-1].D
    assert np.all(out_big[:, :D] == out_small)


def test_lift_rejects_underivable_spec():
    big = NetworkSpec(4, 2, ((2, 2, 2), (2, 2, 1)))
    small = NetworkSpec(4, 2, ((3, 2, 2), (2, 2, 1)))
    with pytest.raises(ConstructionError):
        lift_params(big, small, random_params(small, seed=0))


def test_float_and_exact_agree(random_rational_tensor, conv_pool_H4):
    params = random_params(conv_pool_H4, seed=1)
    x = random_rational_tensor((2, 4, 4))
    exact = forward_network(conv_pool_H4, params, x)
    numeric = forward_network(conv_pool_H4, params.astype("float"), x.astype("float"))
    assert exact.dims == (1,)
    assert float(exact.data[0]) == pytest.approx(numeric.data[0], rel=1e-9)


def test_forward_is_deterministic(random_rational_tensor, conv_pool_H4):
    params = random_params(conv_pool_H4, seed=4)
    x = random_rational_tensor((2, 4, 4))
    assert forward_network(conv_pool_H4, params, x).equals(forward_network(conv_pool_H4, params, x))


def test_forward_shape_errors(conv_pool_H4):
    params = random_params(conv_pool_H4, seed=0)
    with pytest.raises(ShapeError):
        forward_network(conv_pool_H4, params, DenseTensor.exact(np.zeros((3, 4, 4), dtype=np.int64)))
    with pytest.raises(ScalarModeError):
        forward_network(conv_pool_H4, params, DenseTensor.numeric(np.zeros((2, 4, 4))))
    short = NetworkParams(params.layers[:2])
    with pytest.raises(ShapeError):
        short.check(conv_pool_H4)


def test_layer_params_shape_checks():
    with pytest.raises(ShapeError):
        LayerParams(filled((1, 1, 2, 2), 0, "exact"), filled((1, 3, 3), 0, "exact"))
    with pytest.raises(ScalarModeError):
        LayerParams(filled((1, 1, 2, 2), 0, "float"), filled((1, 2, 2), 0, "exact"))


def test_validate_reports_layers():
    diag = validate(NetworkSpec(4, 3, ((3, 1, 2), (2, 3, 2), (2, 2, 1))))
    assert [row["h_out"] for row in diag.layers] == [4, 2, 1]
    assert diag.layers[0]["overlapping"] and not diag.layers[1]["overlapping"]
    assert diag.channels == [3, 2, 2, 1]
    assert diag.collapsing
    assert any("skips inputs" in note for note in diag.notes)


def test_validate_flags_non_collapsing():
    diag = validate(NetworkSpec(4, 2, ((2, 2, 2),)))
    assert not diag.collapsing
    assert any("not collapsing" in note for note in diag.notes)
    assert diag.to_dict()["channels"] == [2, 2]
