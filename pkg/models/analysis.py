"""Architecture arithmetic: total stride, total receptive field, the
alpha-minimal receptive field, the overlap lower bound and the closed forms
for alternating conv/pool networks.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

from models.errors import InfeasibleReceptiveField, SpecError
from models.network import LayerSpec, NetworkSpec

logger = logging.getLogger(__name__)


def _check_index(spec, l, lowest):
    if not lowest <= l <= spec.L:
        raise SpecError(f"Layer index {l} outside {lowest}..{spec.L}")


def total_stride(spec, l):
    _check_index(spec, l, 0)
    return math.prod(layer.S for layer in spec.layers[:l])


def receptive_field(windows, strides):
    # T_R for explicit per-layer windows t_1..t_l and strides S_1..S_l
    l = len(windows)
    field_size = windows[-1] * math.prod(strides[:l - 1])
    for k in range(l - 1):
        field_size += (windows[k] - strides[k]) * math.prod(strides[:k])
    return field_size


def total_receptive(spec, l):
    _check_index(spec, l, 1)
    layers = spec.layers[:l]
    return receptive_field([layer.R for layer in layers], [layer.S for layer in layers])


@dataclass(frozen=True)
class AlphaMinimal:
    value: int
    witness: tuple

    def to_dict(self):
        return {"value": self.value, "witness": list(self.witness)}


def window_range(layer):
    # Effective windows a layer can emulate; t in [S, R] (only R when R < S)
    return range(min(layer.S, layer.R), layer.R + 1)


def alpha_min_receptive(spec, l, alpha):
    """Smallest T_R^{(l)}(t_1, S_1, ..., t_l, S_l) above alpha, with a witness t.

    T_R is sum_k c_k t_k + const with c_k = T_S^{(k-1)} >= 1, so a DP over
    reachable partial sums (bounded by the all-R maximum) is exact.
    """
    _check_index(spec, l, 1)
    if alpha < 0:
        raise SpecError(f"alpha must be non-negative, got {alpha}")
    layers = spec.layers[:l]
    strides = [layer.S for layer in layers]
    coeffs = [math.prod(strides[:k]) for k in range(l)]
    const = -sum(strides[k] * coeffs[k] for k in range(l - 1))

    # partial sum -> (previous partial sum, chosen t)
    reachable = {0: None}
    steps = []
    for k, layer in enumerate(layers):
        nxt = {}
        for partial in reachable:
            for t in window_range(layer):
                value = partial + coeffs[k] * t
                if value not in nxt:
                    nxt[value] = (partial, t)
        steps.append(nxt)
        reachable = nxt

    feasible = [v for v in reachable if v + const > alpha]
    if not feasible:
        raise InfeasibleReceptiveField(
            f"No effective receptive field of layer {l} exceeds {alpha} "
            f"(maximum {total_receptive(spec, l)})"
        )
    best = min(feasible)

    witness = []
    value = best
    for k in range(l - 1, -1, -1):
        value, t = steps[k][value]
        witness.append(t)
    witness.reverse()

    result = AlphaMinimal(best + const, tuple(witness))
    logger.debug("alpha-min layer %d alpha %s -> %s", l, alpha, result)
    return result


@dataclass
class LayerBound:
    K: int
    total_stride: int
    total_receptive: int
    alpha_min: int
    witness: tuple
    base: int
    exponent: int

    @property
    def value(self):
        return self.base ** self.exponent

    def to_dict(self):
        return {
            "K": self.K,
            "total_stride": self.total_stride,
            "total_receptive": self.total_receptive,
            "alpha_min": self.alpha_min,
            "witness": list(self.witness),
            "base": self.base,
            "exponent": self.exponent,
            "log10": log10_power(self.base, self.exponent),
        }


@dataclass
class BoundReport:
    H: int
    M: int
    total_strides: list
    total_receptives: list
    valid_K: list
    per_K: list = field(default_factory=list)
    best: LayerBound = None

    @property
    def bound(self):
        return self.best.value

    @property
    def base(self):
        return self.best.base

    @property
    def exponent(self):
        return self.best.exponent

    @property
    def log10(self):
        return log10_power(self.best.base, self.best.exponent)

    @property
    def trivial(self):
        # No better than what a non-overlapping network of the same widths reaches
        return self.best.exponent <= 1

    @property
    def min_nonoverlap_channels(self):
        # Next-to-last width any non-overlapping network needs for this grid tensor
        return self.bound

    def to_dict(self):
        return {
            "H": self.H,
            "M": self.M,
            "total_strides": self.total_strides,
            "total_receptives": self.total_receptives,
            "valid_K": self.valid_K,
            "per_K": [entry.to_dict() for entry in self.per_K],
            "best": {
                "K": self.best.K,
                "base": self.base,
                "exponent": self.exponent,
                "bound": str(self.bound),
                "log10": self.log10,
                "trivial": self.trivial,
            },
            "min_nonoverlap_channels": str(self.min_nonoverlap_channels),
        }


def log10_power(base, exponent):
    if base == 0:
        return float("-inf") if exponent > 0 else 0.0
    return exponent * math.log10(base)


def theorem1_bound(spec):
    """Lower bound on the left-right / top-bottom matricization rank, for
    every K whose total receptive field exceeds H/2; `best` is the largest."""
    spec.require_collapsing()
    H = spec.H
    if H % 2:
        raise SpecError(f"The bound needs an even H, got {H}")

    strides = [total_stride(spec, l) for l in range(spec.L + 1)]
    receptives = [total_receptive(spec, l) for l in range(1, spec.L + 1)]
    valid_K = [K for K in range(1, spec.L + 1) if 2 * receptives[K - 1] > H]
    if not valid_K:
        raise SpecError("No layer has a total receptive field above H/2")

    channels = spec.channels()
    per_K = []
    for K in valid_K:
        t_s = strides[K]
        minimal = alpha_min_receptive(spec, K, H // 2)
        # Windows per row times rows; a strided big first layer gives H^2 / (2 S^2), not H^2 / (2 S)
        exponent = max(0, ((H - minimal.value) // t_s + 1) * -(-H // t_s))
        base = min(spec.M, channels[K], min(channels[1:K + 1]) // 2)
        per_K.append(LayerBound(
            K=K,
            total_stride=t_s,
            total_receptive=receptives[K - 1],
            alpha_min=minimal.value,
            witness=minimal.witness,
            base=base,
            exponent=exponent,
        ))

    best = max(per_K, key=lambda entry: (entry.value, -entry.K))
    return BoundReport(
        H=H,
        M=spec.M,
        total_strides=strides,
        total_receptives=receptives,
        valid_K=valid_K,
        per_K=per_K,
        best=best,
    )


# Alternating B x B conv / 2 x 2 pool networks

@dataclass
class Prop2Report:
    B: int
    H: int
    M: int
    L: int
    block: int
    exact_exponent: int
    tau_exponent: Fraction
    quarter_exponent: Fraction
    applies_quarter: bool

    @property
    def exact_bound(self):
        return self.M ** self.exact_exponent

    @property
    def exceeds_closed_form(self):
        return self.exact_exponent >= self.tau_exponent

    @property
    def meets_quarter_bound(self):
        return not self.applies_quarter or self.exact_exponent >= self.quarter_exponent

    @property
    def tau_log10(self):
        return float(self.tau_exponent) * math.log10(self.M) if self.M > 1 else 0.0

    def to_dict(self):
        return {
            "B": self.B,
            "H": self.H,
            "M": self.M,
            "L": self.L,
            "block": self.block,
            "exact_exponent": self.exact_exponent,
            "exact_bound": str(self.exact_bound),
            "exact_log10": log10_power(self.M, self.exact_exponent),
            "tau_exponent": str(self.tau_exponent),
            "tau_exponent_float": float(self.tau_exponent),
            "tau_log10": self.tau_log10,
            "quarter_exponent": str(self.quarter_exponent),
            "applies_quarter": self.applies_quarter,
            "exceeds_closed_form": self.exceeds_closed_form,
            "meets_quarter_bound": self.meets_quarter_bound,
        }


def log2_exact(H):
    if H < 2 or H & (H - 1):
        raise SpecError(f"H must be a power of two (>= 2), got {H}")
    return H.bit_length() - 1


def first_wide_block(B, L):
    # Smallest l with (2B - 1) * 2^(l-1) - B + 1 > 2^(L-1)
    l = 1
    while (2 * B - 1) * 2 ** l <= 2 ** L + 2 * B - 2:
        l += 1
    return l


def tau_exponent(B, H):
    # (2B - 1)^2 / 2 * (1 + (2B - 2) / H)^(-2), exactly
    return Fraction((2 * B - 1) ** 2, 2) / (1 + Fraction(2 * B - 2, H)) ** 2


def prop2_bound(B, H, M):
    """Exact and closed-form exponents for the alternating conv/pool network.

    `exceeds_closed_form` and `meets_quarter_bound` are reported on the
    result, not enforced here; the prop2 verification suite checks them.
    """
    if B < 1:
        raise SpecError(f"B must be at least 1, got {B}")
    L = log2_exact(H)
    l = first_wide_block(B, L)
    if l > L:
        # B = 1: non-overlapping, only the final pool reaches H/2
        exact_exponent = 1
    else:
        exact_exponent = 2 ** (2 * L - 2 * l + 1)
    return Prop2Report(
        B=B,
        H=H,
        M=M,
        L=L,
        block=l,
        exact_exponent=exact_exponent,
        tau_exponent=tau_exponent(B, H),
        quarter_exponent=Fraction((2 * B - 1) ** 2, 4),
        applies_quarter=5 * (B - 1) <= H,
    )


def vgg_effective_B(K, C):
    if K < 1 or C < 1:
        raise SpecError(f"K and C must be positive, got K={K}, C={C}")
    return K * (C - 1) + 1


def convpool_spec(B, L, M, D=None, shared=True):
    D = 2 * M if D is None else D
    layers = []
    for _ in range(L):
        layers.append(LayerSpec(B, 1, D, shared))
        layers.append(LayerSpec(2, 2, D, shared))
    return NetworkSpec(2 ** L, M, tuple(layers))


def vgg_spec(K, C, L, M, D=None, shared=True):
    D = 2 * M if D is None else D
    layers = []
    for _ in range(L):
        layers.extend(LayerSpec(C, 1, D, shared) for _ in range(K))
        layers.append(LayerSpec(2, 2, D, shared))
    return NetworkSpec(2 ** L, M, tuple(layers))


def match_vgg(spec):
    """(K, C) when the spec is blocks of K stride-1 C x C layers each followed by a
    2 x 2 stride-2 pool, covering H = 2^L; otherwise None."""
    blocks = []
    run = []
    for layer in spec.layers:
        if layer.R == 2 and layer.S == 2:
            if not run:
                return None
            blocks.append(run)
            run = []
        elif layer.S == 1:
            run.append(layer.R)
        else:
            return None
    if run or not blocks:
        return None
    K = len(blocks[0])
    C = blocks[0][0]
    if any(len(block) != K or any(r != C for r in block) for block in blocks):
        return None
    if spec.H != 2 ** len(blocks):
        return None
    return K, C


def match_convpool(spec):
    matched = match_vgg(spec)
    if matched is None or matched[0] != 1:
        return None
    return matched[1]


def channels_at_least(spec, width):
    return all(layer.D >= width for layer in spec.layers)
