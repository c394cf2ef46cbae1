import numpy as np
import pytest

from models.analysis import total_stride
from models.config import GENERIC_VALUE_GRID, PARTITION_KINDS
from models.constructions import (
    ConstructionConfig,
    TwoAnchor,
    claim3_params,
    claim3_shape,
    claim3_spec,
    claim4_compile,
    expected_claim3_rank,
    extract_two_anchor,
    pair_partition,
    random_params,
    random_two_anchor,
    theorem1_layer,
    theorem1_params,
    theorem3_params,
    theorem3_spec,
    two_anchor_params,
)
from models.errors import ConstructionError
from models.grid import build_grid_tensor, custom_partition, even_partitions, grid_rank, standard_partition
from models.network import LayerSpec, NetworkParams, NetworkSpec, forward_batch
from models.tensor_core import IndexPartition, Matrix, as_exact, rank_exact
from models.verify import CLAIM4_STACKS, outputs_agree, random_inputs


def claim3_rank(cfg, F=None):
    spec = claim3_spec(cfg)
    grid = build_grid_tensor(spec, claim3_params(cfg, spec), F=F)
    return grid_rank(grid, standard_partition(cfg.partition_kind, cfg.H))


@pytest.mark.parametrize("kind", PARTITION_KINDS)
@pytest.mark.parametrize("H, M, R, S, D", [(2, 2, 2, 1, 2), (2, 2, 2, 1, 1), (4, 2, 3, 2, 2), (4, 2, 4, 2, 2)])
def test_claim3_reaches_its_rank(kind, H, M, R, S, D):
    cfg = ConstructionConfig(H=H, M=M, R=R, S=S, D=D, partition_kind=kind)
    assert claim3_rank(cfg) == expected_claim3_rank(H, R, S, D)


def test_claim3_dense_case():
    cfg = ConstructionConfig(H=4, M=2, R=3, S=1, D=2)
    assert expected_claim3_rank(4, 3, 1, 2) == 256
    assert claim3_rank(cfg) == 256


def test_claim3_expected_ranks():
    assert expected_claim3_rank(2, 2, 1, 2) == 4
    assert expected_claim3_rank(4, 3, 2, 2) == 4


def test_claim3_float_mode():
    cfg = ConstructionConfig(H=2, M=2, R=2, S=1, D=2, mode="float")
    spec = claim3_spec(cfg)
    params = claim3_params(cfg, spec)
    assert params.mode == "float"
    grid = build_grid_tensor(spec, params)
    assert grid_rank(grid, standard_partition("left-right", 2)) == 4


@pytest.mark.parametrize("kind", PARTITION_KINDS)
def test_claim3_with_representation_matrix(kind, nonsingular_rational):
    F = nonsingular_rational(2)
    cfg = ConstructionConfig(H=2, M=2, R=2, S=1, D=2, partition_kind=kind, F=F)
    assert claim3_rank(cfg, F=F) == 4


def test_claim3_first_layer_layout():
    cfg = ConstructionConfig(H=2, M=3, R=2, S=1, D=2, alpha=3)
    params = claim3_params(cfg)
    first = params[0]
    assert first.D == 2
    assert first.biases[0, 0, 0] == cfg.beta == 3
    assert first.biases[0, 1, 1] == 1
    assert first.weights[1, 1, 0, 1] == -3
    assert first.weights[1, 1, 1, 0] == 0
    shape = extract_two_anchor(first)
    assert shape.anchor == (0, 1)
    assert shape.kind == "left-right"


def pair_matrix(cfg):
    # Entry (i, j): channel sum of the two anchor factors at templates i and j
    shape = claim3_shape(cfg)
    X = cfg.representation().data
    left = shape.b0[None, :] + X.dot(shape.A0)
    right = shape.b1[None, :] + X.dot(shape.A1)
    pair = left.dot(right.T)
    if (cfg.R - 1) % cfg.S == 0:
        # next window along the chain sees only its bias past the edge
        pair = pair * left.dot(shape.b1)[None, :]
    return Matrix.exact(pair)


@pytest.mark.parametrize("H, M, R, S, D", [
    (2, 2, 2, 1, 2),
    (4, 3, 3, 2, 2),
    (4, 3, 3, 1, 3),
    (4, 3, 4, 2, 2),
    (4, 4, 4, 2, 3),
])
def test_claim3_pair_matrix_has_rank_D(H, M, R, S, D):
    cfg = ConstructionConfig(H=H, M=M, R=R, S=S, D=D)
    A = pair_matrix(cfg)
    assert A.dims == (M, M)
    assert rank_exact(A) == D
    if (R - 1) % S:
        assert A.data[:D, :D].tolist() == np.eye(D, dtype=int).tolist()


def test_claim3_pair_matrix_with_representation_matrix(nonsingular_rational):
    F = nonsingular_rational(3)
    cfg = ConstructionConfig(H=4, M=3, R=3, S=2, D=2, F=F)
    assert rank_exact(pair_matrix(cfg)) == 2


def test_config_preconditions():
    with pytest.raises(ConstructionError):
        ConstructionConfig(H=4, M=2, R=2, S=1, D=2)
    with pytest.raises(ConstructionError):
        ConstructionConfig(H=2, M=2, R=2, S=1, D=3)
    with pytest.raises(ConstructionError):
        ConstructionConfig(H=2, M=2, R=2, S=1, D=2, partition_kind="diagonal")
    with pytest.raises(ConstructionError):
        ConstructionConfig(H=2, M=2, R=2, S=1, D=2, alpha=0)


def test_claim3_needs_matching_first_layer():
    cfg = ConstructionConfig(H=2, M=2, R=2, S=1, D=2)
    with pytest.raises(ConstructionError):
        claim3_params(cfg, NetworkSpec(2, 2, ((2, 1, 1), (2, 2, 1))))
    with pytest.raises(ConstructionError):
        claim3_params(cfg, NetworkSpec(2, 2, ((2, 2, 2),)))


def test_two_anchor_round_trip():
    A0 = as_exact([[1, 2], [3, 4]])
    A1 = as_exact([[5, 6], [7, 8]])
    b = as_exact([1, -1])
    shape = TwoAnchor(A0, b, A1, b, (2, 0))
    params = two_anchor_params(shape, 3)
    back = extract_two_anchor(params)
    assert back.anchor == (2, 0) and back.kind == "top-bottom"
    assert np.all(back.A1 == A1) and np.all(back.b0 == b)
    with pytest.raises(ConstructionError):
        two_anchor_params(TwoAnchor(A0, b, A1, b, (0, 0)), 3)


def test_extract_rejects_dense_layer():
    params = random_params(NetworkSpec(4, 2, ((3, 1, 2),)), seed=0)[0]
    with pytest.raises(ConstructionError):
        extract_two_anchor(params)


@pytest.mark.parametrize("index", range(len(CLAIM4_STACKS)))
@pytest.mark.parametrize("kind", PARTITION_KINDS)
def test_claim4_stack_replays_single_window(index, kind, rng):
    layers, window = CLAIM4_STACKS[index]
    phi = NetworkSpec(4, 2, layers)
    psi = LayerSpec(window, total_stride(phi, phi.L), 2)
    psi_params = random_two_anchor(psi, 2, seed=index, kind=kind)
    phi_params = claim4_compile(psi, psi_params, phi)
    phi_params.check(phi)
    batch = random_inputs(rng, 20, 2, 4)
    reference = forward_batch(NetworkSpec(4, 2, (psi,)), NetworkParams((psi_params,)), batch)
    out = forward_batch(phi, phi_params, batch)
    assert out.shape[2:] == reference.shape[2:]
    assert outputs_agree(out, reference, 2)


def test_claim4_single_layer_copies_params():
    psi = LayerSpec(3, 2, 2)
    psi_params = random_two_anchor(psi, 2, seed=1)
    phi = NetworkSpec(4, 2, ((3, 2, 2),))
    assert claim4_compile(psi, psi_params, phi)[0].equals(psi_params)


def test_claim4_rejects_mismatched_stack():
    phi = NetworkSpec(4, 2, ((2, 1, 4), (2, 2, 2)))
    params = random_two_anchor(LayerSpec(3, 1, 2), 2)
    with pytest.raises(ConstructionError):
        claim4_compile(LayerSpec(3, 1, 2), params, phi)

    phi = NetworkSpec(4, 2, ((2, 2, 4), (2, 1, 2)))
    params = random_two_anchor(LayerSpec(3, 2, 2), 2)
    with pytest.raises(ConstructionError):
        claim4_compile(LayerSpec(3, 2, 2), params, phi)

    phi = NetworkSpec(4, 2, ((2, 1, 3), (2, 2, 2)))
    params = random_two_anchor(LayerSpec(3, 2, 2), 2)
    with pytest.raises(ConstructionError):
        claim4_compile(LayerSpec(3, 2, 2), params, phi)


def test_theorem1_pipeline(conv_pool_H4):
    entry = theorem1_layer(conv_pool_H4)
    assert (entry.K, entry.base, entry.exponent) == (2, 2, 2)
    params = theorem1_params(conv_pool_H4)
    grid = build_grid_tensor(conv_pool_H4, params)
    assert grid_rank(grid, standard_partition("left-right", 4)) == entry.value == 4


def test_theorem1_layer_choices(conv_pool_H4):
    with pytest.raises(ConstructionError):
        theorem1_layer(conv_pool_H4, K=3)
    with pytest.raises(ConstructionError):
        theorem1_layer(conv_pool_H4, K=1)


def test_pair_partition_pairs_each_cell_once():
    P = (0, 2, 3, 4, 5, 7, 10, 11)
    Q = (1, 6, 8, 9, 12, 13, 14, 15)
    pairs, origins = pair_partition(P, Q, 4)
    assert sorted(q for q, _ in pairs) == sorted(divmod(k, 4) for k in P)
    assert sorted(p for _, p in pairs) == sorted(divmod(k, 4) for k in Q)
    assert len(set(origins)) == len(origins) == 8
    for (q, p), a in zip(pairs, origins):
        assert a[0] <= min(q[0], p[0]) and a[1] <= min(q[1], p[1])


def test_pair_partition_small_grid():
    pairs, origins = pair_partition((0, 3), (1, 2), 2)
    assert pairs[0][0] == (0, 0) and origins[0] == (0, 0)
    assert origins[1] in {(0, 1), (1, 0)}


@pytest.mark.parametrize("M", [2, 3])
def test_theorem3_unshared_every_partition(M):
    spec = theorem3_spec(2, M, M)
    for part in even_partitions(4):
        grid = build_grid_tensor(spec, theorem3_params(2, M, M, part))
        assert grid_rank(grid, part) == M ** 2


@pytest.mark.parametrize("kind", PARTITION_KINDS)
def test_theorem3_standard_partitions_at_H4(kind):
    spec = theorem3_spec(4, 2, 2)
    part = standard_partition(kind, 4)
    grid = build_grid_tensor(spec, theorem3_params(4, 2, 2, part))
    assert grid_rank(grid, part) == 2 ** 8


@pytest.mark.parametrize("seed", [0, 1, 3])
def test_theorem3_scattered_partitions_at_H4(seed):
    perm = np.random.default_rng(seed).permutation(16)
    part = IndexPartition(sorted(perm[:8]), sorted(perm[8:]))
    spec = theorem3_spec(4, 2, 2)
    grid = build_grid_tensor(spec, theorem3_params(4, 2, 2, part, mode="float"))
    assert grid_rank(grid, part) == 2 ** 8


def test_theorem3_shared_every_partition():
    spec = theorem3_spec(2, 2, 8, shared=True)
    for part in even_partitions(4):
        grid = build_grid_tensor(spec, theorem3_params(2, 2, 8, part, shared=True))
        assert grid_rank(grid, part) == 4


def test_theorem3_with_representation_matrix(nonsingular_rational):
    F = nonsingular_rational(2)
    part = custom_partition([(0, 0), (1, 1)], [(0, 1), (1, 0)], H=2)
    spec = theorem3_spec(2, 2, 2)
    grid = build_grid_tensor(spec, theorem3_params(2, 2, 2, part, F=F), F=F)
    assert grid_rank(grid, part) == 4


def test_theorem3_preconditions():
    part = standard_partition("left-right", 2)
    with pytest.raises(ConstructionError):
        theorem3_params(2, 3, 2, part)
    with pytest.raises(ConstructionError):
        theorem3_params(2, 2, 4, part, shared=True)
    with pytest.raises(ConstructionError):
        theorem3_params(2, 2, 2, custom_partition([0], [1, 2, 3], H=2))
    with pytest.raises(ConstructionError):
        theorem3_params(2, 2, 2, part, spec=NetworkSpec(2, 2, ((2, 1, 3), (2, 2, 1))))


def test_random_params_are_seeded():
    spec = NetworkSpec(4, 2, ((3, 1, 2, False), (2, 2, 2), (2, 2, 1)))
    first = random_params(spec, seed=5)
    first.check(spec)
    assert first.equals(random_params(spec, seed=5))
    assert not first.equals(random_params(spec, seed=6))
    assert all(v == 0 for v in random_params(spec, seed=5, bias=False)[1].biases.ravel())


def test_random_params_reach_the_bound_generically():
    spec = claim3_spec(ConstructionConfig(H=2, M=2, R=2, S=1, D=2))
    part = standard_partition("left-right", 2)
    reached = sum(
        grid_rank(build_grid_tensor(spec, random_params(spec, seed, GENERIC_VALUE_GRID)), part) >= 4
        for seed in range(100)
    )
    assert reached >= 99
