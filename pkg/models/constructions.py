"""Explicit parameter assignments that witness the rank lower bounds.

Each builder returns NetworkParams for a concrete spec; the grid-tensor
oracle then checks the promised matricization rank.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from models.analysis import alpha_min_receptive, theorem1_bound, total_stride
from models.config import DEFAULT_SEED, DEFAULT_VALUE_GRID, PARTITION_KINDS
from models.errors import ConstructionError, InfeasibleReceptiveField
from models.network import (
    LayerParams,
    LayerSpec,
    NetworkParams,
    NetworkSpec,
    filled,
    pad_channels,
    shrink_receptive,
    to_unshared,
)
from models.tensor_core import Matrix, as_exact, inverse, to_mode

logger = logging.getLogger(__name__)


def _scalar(value, mode):
    return Fraction(value) if mode == "exact" else float(value)


def _blank(D, d_in, R, mode, lead=()):
    return (
        filled(lead + (D, d_in, R, R), 0, mode),
        filled(lead + (D, R, R), 0, mode),
    )


def _finish(lp, layer, h_in):
    return lp if layer.shared else to_unshared(lp, layer.out_size(h_in))


def second_anchor(kind, offset):
    # left-right pairs columns, top-bottom pairs rows
    if kind not in PARTITION_KINDS:
        raise ConstructionError(f"Unknown partition kind '{kind}'")
    return (0, offset) if kind == "left-right" else (offset, 0)


# Two-anchor layers

@dataclass(frozen=True, eq=False)
class TwoAnchor:
    """Channel k multiplies (b0[k] + A0[:, k] . X[0, 0]) by (b1[k] + A1[:, k] . X[anchor])."""

    A0: np.ndarray
    b0: np.ndarray
    A1: np.ndarray
    b1: np.ndarray
    anchor: tuple
    mode: str = "exact"

    @property
    def D(self):
        return self.A0.shape[1]

    @property
    def kind(self):
        return "left-right" if self.anchor[0] == 0 else "top-bottom"


def two_anchor_params(shape, R, d_out=None, d_in=None):
    mode = shape.mode
    m, D = shape.A0.shape
    d_out = D if d_out is None else d_out
    d_in = m if d_in is None else d_in
    aj, ai = shape.anchor
    if not (0 <= aj < R and 0 <= ai < R) or (aj, ai) == (0, 0):
        raise ConstructionError(f"Anchor {shape.anchor} does not fit a {R}x{R} window")
    if d_out < D or d_in < m:
        raise ConstructionError(f"Layer ({d_out}, {d_in}) too narrow for ({D}, {m}) two-anchor block")

    weights, biases = _blank(d_out, d_in, R, mode)
    biases[:D] = _scalar(1, mode)
    weights[:D, :m, 0, 0] = shape.A0.T
    biases[:D, 0, 0] = shape.b0
    weights[:D, :m, aj, ai] = shape.A1.T
    biases[:D, aj, ai] = shape.b1
    return LayerParams(weights, biases, True, mode)


def extract_two_anchor(params):
    if not params.shared:
        raise ConstructionError("Two-anchor layers must use shared parameters")
    R = params.R
    if R < 2:
        raise ConstructionError("A two-anchor layer needs R >= 2")
    w, b = params.weights, params.biases
    for anchor in ((0, R - 1), (R - 1, 0)):
        rest = np.ones((R, R), dtype=bool)
        rest[0, 0] = False
        rest[anchor] = False
        if np.all(w[:, :, rest] == 0) and np.all(b[:, rest] == 1):
            return TwoAnchor(
                A0=np.array(w[:, :, 0, 0].T),
                b0=np.array(b[:, 0, 0]),
                A1=np.array(w[:, :, anchor[0], anchor[1]].T),
                b1=np.array(b[:, anchor[0], anchor[1]]),
                anchor=anchor,
                mode=params.mode,
            )
    raise ConstructionError("Layer weights are not in two-anchor form")


# Sum-then-product tail

def sum_product_tail(spec, start, mode="exact"):
    """Params for layers start..L-1 (0-based) computing the product over all
    positions of the channel sum of layer `start`'s input."""
    sizes = spec.spatial_sizes()
    channels = spec.channels()
    one = _scalar(1, mode)
    layers = []
    for index in range(start, spec.L):
        layer = spec.layers[index]
        h_in = sizes[index]
        window = min(layer.S, h_in)
        if h_in > layer.S and h_in % layer.S:
            raise ConstructionError(
                f"layer {index + 1}: stride {layer.S} does not tile a {h_in}x{h_in} input"
            )
        if layer.R < window:
            raise ConstructionError(
                f"layer {index + 1}: window {layer.R} cannot cover the {window}x{window} block"
            )
        weights, biases = _blank(layer.D, channels[index], layer.R, mode)
        biases[0] = one
        biases[0, :window, :window] = _scalar(0, mode)
        if index == start:
            weights[0, :, :window, :window] = one
        else:
            weights[0, 0, :window, :window] = one
        layers.append(_finish(LayerParams(weights, biases, True, mode), layer, h_in))
    return tuple(layers)


# Big-window witness

@dataclass(frozen=True)
class ConstructionConfig:
    H: int
    M: int
    R: int
    S: int
    D: int
    partition_kind: str = "left-right"
    alpha: Fraction = Fraction(1)
    F: Matrix = None
    mode: str = "exact"

    def __post_init__(self):
        if self.partition_kind not in PARTITION_KINDS:
            raise ConstructionError(f"Unknown partition kind '{self.partition_kind}'")
        if 2 * self.R <= self.H:
            raise ConstructionError(f"Window {self.R} must exceed H/2 = {self.H / 2}")
        if not 1 <= self.D <= self.M:
            raise ConstructionError(f"Need 1 <= D <= M, got D={self.D}, M={self.M}")
        if self.alpha == 0:
            raise ConstructionError("alpha must be nonzero")
        object.__setattr__(self, "alpha", Fraction(self.alpha))

    @property
    def beta(self):
        return 2 * self.alpha / self.D

    def representation(self):
        if self.F is None:
            return Matrix.identity(self.M, self.mode)
        return self.F.astype(self.mode)


def claim3_spec(cfg, shared=True):
    h1 = -(-cfg.H // cfg.S)
    return NetworkSpec(cfg.H, cfg.M, (LayerSpec(cfg.R, cfg.S, cfg.D, shared), LayerSpec(h1, h1, 1)))


def claim3_shape(cfg):
    f_inv = inverse(cfg.representation()).data
    A = -_scalar(cfg.alpha, cfg.mode) * f_inv[:, :cfg.D]
    b = filled((cfg.D,), cfg.beta, cfg.mode)
    return TwoAnchor(A, b, A, b, second_anchor(cfg.partition_kind, cfg.R - 1), cfg.mode)


def claim3_first_layer(cfg, d_out=None):
    return two_anchor_params(claim3_shape(cfg), cfg.R, d_out=d_out)


def claim3_params(cfg, spec=None):
    spec = claim3_spec(cfg) if spec is None else spec
    spec.require_collapsing()
    if (spec.H, spec.M) != (cfg.H, cfg.M):
        raise ConstructionError("Spec and config disagree on H or M")
    if spec.L < 2:
        raise ConstructionError("The witness needs at least one tail layer")
    first = spec.layers[0]
    if (first.R, first.S) != (cfg.R, cfg.S) or first.D < cfg.D:
        raise ConstructionError(
            f"First layer ({first.R}, {first.S}, {first.D}) does not host "
            f"R={cfg.R}, S={cfg.S}, D={cfg.D}"
        )
    head = _finish(claim3_first_layer(cfg, d_out=first.D), first, cfg.H)
    return NetworkParams((head,) + sum_product_tail(spec, 1, cfg.mode))


def expected_claim3_rank(H, R, S, D):
    return D ** (((H - R) // S + 1) * -(-H // S))


# Compiling a big window into a stack of small ones

def claim4_compile(psi, psi_params, phi):
    """Params for the stack `phi` whose output equals the single layer `psi`
    on channels < psi.D and is zero above.

    psi must be shared, in two-anchor form, with R equal to the smallest
    effective receptive field of phi above R - 1 and S equal to phi's total stride.
    """
    H, M = phi.H, phi.M
    psi_params.check(psi, M, psi.out_size(H))
    shape = extract_two_anchor(psi_params)
    mode = psi_params.mode
    D = psi.D
    channels = phi.channels()
    sizes = phi.spatial_sizes()

    if phi.L == 1:
        layer = phi.layers[0]
        if layer.S != psi.S or layer.R < psi.R or layer.D < D:
            raise ConstructionError(
                f"Layer ({layer.R}, {layer.S}, {layer.D}) cannot host ({psi.R}, {psi.S}, {D})"
            )
        lp = pad_channels(shrink_receptive(psi_params, layer.R), layer.D, M)
        return NetworkParams((_finish(lp, layer, H),))

    if psi.S != total_stride(phi, phi.L):
        raise ConstructionError(
            f"Stride {psi.S} differs from the stack's total stride {total_stride(phi, phi.L)}"
        )
    try:
        minimal = alpha_min_receptive(phi, phi.L, psi.R - 1)
    except InfeasibleReceptiveField as e:
        raise ConstructionError(e.message) from e
    if minimal.value != psi.R:
        raise ConstructionError(
            f"Window {psi.R} is not an effective receptive field of the stack "
            f"(nearest is {minimal.value})"
        )
    t = minimal.witness
    m = max(l for l in range(1, phi.L + 1) if t[l - 1] > 1)
    for l in range(1, phi.L + 1):
        need = 2 * D if l < m else D
        if channels[l] < need:
            raise ConstructionError(f"layer {l}: needs {need} channels, has {channels[l]}")
    logger.debug("compiling window %d with effective windows %s, joining at layer %d", psi.R, t, m)

    def shift(l):
        return second_anchor(shape.kind, t[l - 1] - 1)

    one, zero = _scalar(1, mode), _scalar(0, mode)
    layers = []
    for l, layer in enumerate(phi.layers, start=1):
        if l == 1 and m == 1:
            moved = TwoAnchor(shape.A0, shape.b0, shape.A1, shape.b1, shift(1), mode)
            lp = two_anchor_params(moved, layer.R, d_out=layer.D, d_in=M)
            layers.append(_finish(lp, layer, H))
            continue

        weights, biases = _blank(layer.D, channels[l - 1], layer.R, mode)
        used = 2 * D if l < m else D
        biases[:used] = one
        sj, si = shift(l)
        for k in range(D):
            if l == 1:
                weights[k, :M, 0, 0] = shape.A0[:, k]
                biases[k, 0, 0] = shape.b0[k]
                weights[D + k, :M, sj, si] = shape.A1[:, k]
                biases[D + k, sj, si] = zero
                continue
            weights[k, k, 0, 0] = one
            biases[k, 0, 0] = zero
            if l < m:
                weights[D + k, D + k, sj, si] = one
                biases[D + k, sj, si] = zero
            elif l == m:
                # the shifted track joins here; its bias lands after zero padding
                weights[k, D + k, sj, si] = one
                biases[k, sj, si] = shape.b1[k]
        lp = LayerParams(weights, biases, True, mode)
        layers.append(_finish(lp, layer, sizes[l - 1]))
    return NetworkParams(tuple(layers))


def theorem1_layer(spec, K=None):
    """The bound entry used for the witness; K defaults to the best layer
    that still leaves room for the tail."""
    report = theorem1_bound(spec)
    if K is None:
        candidates = [entry for entry in report.per_K if entry.K < spec.L]
        if not candidates:
            raise ConstructionError("Every valid layer is the last one; no room for the tail")
        return max(candidates, key=lambda entry: (entry.value, -entry.K))
    for entry in report.per_K:
        if entry.K == K:
            if K == spec.L:
                raise ConstructionError("The witness needs a tail layer after K")
            return entry
    raise ConstructionError(f"Layer {K} has total receptive field <= H/2")


def theorem1_params(spec, K=None, partition_kind="left-right", F=None, mode="exact"):
    entry = theorem1_layer(spec, K)
    if entry.base < 1:
        raise ConstructionError(f"layer {entry.K}: channel base is {entry.base}")
    cfg = ConstructionConfig(
        H=spec.H,
        M=spec.M,
        R=entry.alpha_min,
        S=entry.total_stride,
        D=entry.base,
        partition_kind=partition_kind,
        F=F,
        mode=mode,
    )
    psi = LayerSpec(cfg.R, cfg.S, cfg.D)
    head = claim4_compile(psi, claim3_first_layer(cfg), spec.prefix(entry.K))
    logger.debug("witness for K=%d: window %d stride %d base %d", entry.K, cfg.R, cfg.S, cfg.D)
    return NetworkParams(tuple(head) + sum_product_tail(spec, entry.K, mode))


# Full-rank witness for arbitrary partitions

def theorem3_spec(H, M, D, shared=False):
    return NetworkSpec(H, M, (LayerSpec(H, 1, D, shared), LayerSpec(H, H, 1)))


def _corner(q, p):
    return min(q[0], p[0]), min(q[1], p[1])


def _area(corner):
    return (corner[0] + 1) * (corner[1] + 1)


def _origins(corner, free):
    # Free window origins a <= corner, nearest first
    cells = [(r, c) for r in range(corner[0] + 1) for c in range(corner[1] + 1) if (r, c) in free]
    return sorted(cells, key=lambda a: (corner[0] - a[0]) + (corner[1] - a[1]))


def _has_distinct_picks(options):
    # One distinct pick per option list exists (augmenting paths)
    owner = {}

    def augment(k, seen):
        for a in options[k]:
            if a in seen:
                continue
            seen.add(a)
            if a not in owner or augment(owner[a], seen):
                owner[a] = k
                return True
        return False

    return all(augment(k, set()) for k in range(len(options)))


def pair_partition(P, Q, H):
    """Pair every cell of P with one of Q and give each pair its own window
    origin at or above-left of both cells.

    Depth-first over the cells of P, fewest origins first. A branch is cut
    when the cells left on either side can no longer reach distinct free
    origins on their own.
    """
    P = [divmod(k, H) for k in P]
    Q = [divmod(k, H) for k in Q]
    order = sorted(P, key=lambda q: (_area(q), q))
    failed = set()
    chosen = []

    def reachable(cells, free_a):
        return _has_distinct_picks([_origins(cell, free_a) for cell in cells])

    def search(i, free_q, free_a):
        if i == len(order):
            return True
        if (i, free_q, free_a) in failed:
            return False
        q = order[i]
        partners = sorted(free_q, key=lambda p: (-_area(_corner(q, p)), p))
        for p in partners:
            for a in _origins(_corner(q, p), free_a):
                rest_q, rest_a = free_q - {p}, free_a - {a}
                if not (reachable(order[i + 1:], rest_a) and reachable(rest_q, rest_a)):
                    continue
                if search(i + 1, rest_q, rest_a):
                    chosen.append(((q, p), a))
                    return True
        failed.add((i, free_q, free_a))
        return False

    origins = frozenset((r, c) for r in range(H) for c in range(H))
    if not search(0, frozenset(Q), origins):
        raise ConstructionError(f"No pairing of P with Q gets distinct window origins (H={H})")
    chosen.reverse()
    return [pair for pair, _ in chosen], [a for _, a in chosen]


def theorem3_params(H, M, D, partition, shared=False, F=None, mode="exact", spec=None):
    """Unshared needs D >= M, shared needs D >= M * H^2. `spec` may replace the
    default one-layer tail as long as its first layer is (H, 1, D, shared)."""
    if spec is None:
        spec = theorem3_spec(H, M, D, shared)
    elif (spec.H, spec.M) != (H, M) or spec.layers[0] != LayerSpec(H, 1, D, shared):
        raise ConstructionError(f"First layer must be R={H}, S=1, D={D}, shared={shared}")
    partition.check_covers(H * H)
    if not partition.is_even:
        raise ConstructionError("Partition sides differ in size")
    if D < M:
        raise ConstructionError(f"Need D >= M = {M}, got {D}")
    if shared and D < M * H * H:
        raise ConstructionError(f"Shared first layer needs D >= M*H^2 = {M * H * H}, got {D}")

    F = Matrix.identity(M, mode) if F is None else F.astype(mode)
    f_inv = inverse(F).data
    pairs, anchors = pair_partition(partition.P, partition.Q, H)
    logger.debug("pairs %s at origins %s", pairs, anchors)

    one, zero = _scalar(1, mode), _scalar(0, mode)

    if not shared:
        weights, biases = _blank(D, M, H, mode, lead=(H, H))
        biases[:, :, :M] = one
        for (q, p), (ar, ac) in zip(pairs, anchors):
            for c in range(M):
                for cell in (q, p):
                    tap = (cell[0] - ar, cell[1] - ac)
                    weights[ar, ac, c, :, tap[0], tap[1]] = f_inv[:, c]
                    biases[ar, ac, c, tap[0], tap[1]] = zero
        first = LayerParams(weights, biases, False, mode)
    else:
        weights, biases = _blank(D, M, H, mode)
        ones = f_inv.sum(axis=1)

        def select(ch, a, taken):
            # positions other than a see a zero factor
            inside = (H - 1 - a[0], H - 1 - a[1])
            if inside not in taken:
                weights[ch, :, inside[0], inside[1]] = ones
                biases[ch, inside[0], inside[1]] = zero
            if a[0] >= 1:
                weights[ch, :, H - a[0], 0] = -ones
            if a[1] >= 1:
                weights[ch, :, 0, H - a[1]] = -ones

        for (q, p), a in zip(pairs, anchors):
            taps = [(cell[0] - a[0], cell[1] - a[1]) for cell in (q, p)]
            for c in range(M):
                ch = c * H * H + a[0] * H + a[1]
                biases[ch] = one
                for tap in taps:
                    weights[ch, :, tap[0], tap[1]] = f_inv[:, c]
                    biases[ch, tap[0], tap[1]] = zero
                select(ch, a, taps)
        taken = set(anchors)
        for r in range(H):
            for c in range(H):
                if (r, c) not in taken:
                    ch = r * H + c
                    biases[ch] = one
                    select(ch, (r, c), ())
        first = LayerParams(weights, biases, True, mode)

    return NetworkParams((first,) + sum_product_tail(spec, 1, mode))


# Random parameters and specs

def _draw(rng, grid, shape):
    return grid[rng.integers(len(grid), size=shape)]


def random_params(spec, seed=DEFAULT_SEED, value_grid=DEFAULT_VALUE_GRID, mode="exact", bias=True):
    """Seeded parameters drawn uniformly from a finite grid of rationals;
    bias=False zeroes every bias."""
    rng = np.random.default_rng(seed)
    grid = as_exact(list(value_grid))
    sizes = spec.spatial_sizes()
    channels = spec.channels()
    layers = []
    for l, layer in enumerate(spec.layers):
        lead = () if layer.shared else (sizes[l + 1], sizes[l + 1])
        w_shape = lead + (layer.D, channels[l], layer.R, layer.R)
        b_shape = lead + (layer.D, layer.R, layer.R)
        weights = _draw(rng, grid, w_shape)
        biases = _draw(rng, grid, b_shape) if bias else filled(b_shape, 0, "exact")
        layers.append(LayerParams.of(weights, biases, layer.shared, mode))
    return NetworkParams(tuple(layers))


def random_two_anchor(psi, M, seed=DEFAULT_SEED, kind="left-right", value_grid=DEFAULT_VALUE_GRID, mode="exact"):
    rng = np.random.default_rng(seed)
    grid = as_exact(list(value_grid))
    shape = TwoAnchor(
        A0=to_mode(_draw(rng, grid, (M, psi.D)), mode),
        b0=to_mode(_draw(rng, grid, (psi.D,)), mode),
        A1=to_mode(_draw(rng, grid, (M, psi.D)), mode),
        b1=to_mode(_draw(rng, grid, (psi.D,)), mode),
        anchor=second_anchor(kind, psi.R - 1),
        mode=mode,
    )
    return two_anchor_params(shape, psi.R)


def random_nonoverlap_spec(rng, H, M, max_channels=3):
    """Collapsing spec of R = S layers with power-of-two strides, optional 1x1
    layers in between, and a last layer of stride >= 2."""
    remaining = H.bit_length() - 1
    if remaining < 1 or H != 2 ** remaining:
        raise ConstructionError(f"H must be a power of two >= 2, got {H}")
    layers = []
    while remaining:
        e = int(rng.integers(1, remaining + 1))
        remaining -= e
        if rng.random() < 0.3:
            layers.append(LayerSpec(1, 1, int(rng.integers(1, max_channels + 1)), bool(rng.random() < 0.75)))
        layers.append(LayerSpec(2 ** e, 2 ** e, int(rng.integers(1, max_channels + 1)), bool(rng.random() < 0.75)))
    return NetworkSpec(H, M, tuple(layers))
