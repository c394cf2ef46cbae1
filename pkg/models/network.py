"""GC-layer specs, parameter containers and ConvAC forward evaluation.

A GC layer computes, for output channel c at position (u, v),

    Y[c, u, v] = prod_{j,i < R} ( b[c, j, i] + sum_d w[c, d, j, i] * X[d, uS + j, vS + i] )

with X zero outside the input, so out-of-bounds factors reduce to the bias.
Output width is ceil(H_in / S), windows anchored top-left at (uS, vS).
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from models.errors import ConstructionError, ScalarModeError, ShapeError, SpecError
from models.tensor_core import DenseTensor, to_mode

logger = logging.getLogger(__name__)


# Specs

@dataclass(frozen=True)
class LayerSpec:
    R: int
    S: int
    D: int
    shared: bool = True

    def __post_init__(self):
        for name in ("R", "S", "D"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise SpecError(f"Layer {name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "shared", bool(self.shared))

    @property
    def is_non_overlapping(self):
        return self.R == self.S

    def out_size(self, h_in):
        return -(-h_in // self.S)

    def to_dict(self):
        return {"R": self.R, "S": self.S, "D": self.D, "shared": self.shared}

    @classmethod
    def from_dict(cls, data):
        return cls(
            R=data["R"],
            S=data["S"],
            D=data["D"],
            shared=data.get("shared", True),
        )


@dataclass(frozen=True)
class NetworkSpec:
    H: int
    M: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("H", "M"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise SpecError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        layers = tuple(
            layer if isinstance(layer, LayerSpec) else LayerSpec(*layer)
            for layer in self.layers
        )
        object.__setattr__(self, "layers", layers)

    @property
    def L(self):
        return len(self.layers)

    def layer(self, l):
        # 1-based, as in the layer arithmetic
        if not 1 <= l <= self.L:
            raise SpecError(f"Layer index {l} outside 1..{self.L}")
        return self.layers[l - 1]

    def spatial_sizes(self):
        sizes = [self.H]
        for layer in self.layers:
            sizes.append(layer.out_size(sizes[-1]))
        return sizes

    def channels(self):
        return [self.M] + [layer.D for layer in self.layers]

    @property
    def is_collapsing(self):
        return self.L > 0 and self.spatial_sizes()[-1] == 1

    @property
    def is_non_overlapping(self):
        return all(layer.is_non_overlapping for layer in self.layers)

    def prefix(self, k):
        return NetworkSpec(self.H, self.M, self.layers[:k])

    def require_collapsing(self):
        if not self.is_collapsing:
            raise SpecError(
                f"Network does not collapse to 1x1 (final size {self.spatial_sizes()[-1]})"
            )

    def to_dict(self):
        return {
            "H": self.H,
            "M": self.M,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            H=data["H"],
            M=data["M"],
            layers=tuple(LayerSpec.from_dict(layer) for layer in data["layers"]),
        )


@dataclass
class SpecDiagnostics:
    H: int
    M: int
    layers: list
    channels: list
    collapsing: bool
    non_overlapping: bool
    notes: list

    def to_dict(self):
        return {
            "H": self.H,
            "M": self.M,
            "layers": self.layers,
            "channels": self.channels,
            "collapsing": self.collapsing,
            "non_overlapping": self.non_overlapping,
            "notes": self.notes,
        }


def validate(spec):
    sizes = spec.spatial_sizes()
    if any(size < 1 for size in sizes):
        raise SpecError(f"Spatial size underflow: {sizes}")

    rows = []
    notes = []
    for l, layer in enumerate(spec.layers, start=1):
        h_in, h_out = sizes[l - 1], sizes[l]
        rows.append({
            "layer": l,
            "R": layer.R,
            "S": layer.S,
            "D": layer.D,
            "shared": layer.shared,
            "h_in": h_in,
            "h_out": h_out,
            "overlapping": layer.R > layer.S,
        })
        if layer.R < layer.S:
            notes.append(f"layer {l}: window {layer.R} smaller than stride {layer.S} skips inputs")
        if h_in == 1 and l > 1:
            notes.append(f"layer {l}: operates after the spatial collapse")
    if not spec.is_collapsing:
        notes.append(f"not collapsing: final spatial size {sizes[-1]}")

    return SpecDiagnostics(
        H=spec.H,
        M=spec.M,
        layers=rows,
        channels=spec.channels(),
        collapsing=spec.is_collapsing,
        non_overlapping=spec.is_non_overlapping,
        notes=notes,
    )


# Parameters

def filled(shape, value, mode):
    if mode == "exact":
        return np.full(shape, Fraction(value), dtype=object)
    return np.full(shape, float(value), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LayerParams:
    """Weights/biases of one GC layer.

    Shared:   weights (D, D_in, R, R), biases (D, R, R).
    Unshared: weights (H_out, H_out, D, D_in, R, R), biases (H_out, H_out, D, R, R).
    """

    weights: np.ndarray
    biases: np.ndarray
    shared: bool = True
    mode: str = "exact"

    def __post_init__(self):
        w_dims = 4 if self.shared else 6
        if self.weights.ndim != w_dims or self.biases.ndim != w_dims - 1:
            raise ShapeError(
                f"{'shared' if self.shared else 'unshared'} params need {w_dims}-d weights "
                f"and {w_dims - 1}-d biases, got {self.weights.shape} / {self.biases.shape}"
            )
        if self.weights.shape[-1] != self.weights.shape[-2]:
            raise ShapeError("Windows must be square")
        if self.biases.shape != self.weights.shape[:-3] + self.weights.shape[-2:]:
            raise ShapeError(
                f"Bias shape {self.biases.shape} does not match weights {self.weights.shape}"
            )
        expected = np.dtype(object) if self.mode == "exact" else np.dtype(np.float64)
        if self.weights.dtype != expected or self.biases.dtype != expected:
            raise ScalarModeError(f"Params arrays do not match scalar mode '{self.mode}'")
        self.weights.flags.writeable = False
        self.biases.flags.writeable = False

    @classmethod
    def of(cls, weights, biases, shared=True, mode="exact"):
        return cls(to_mode(weights, mode), to_mode(biases, mode), shared, mode)

    @property
    def R(self):
        return self.weights.shape[-1]

    @property
    def D(self):
        return self.weights.shape[-4]

    @property
    def d_in(self):
        return self.weights.shape[-3]

    @property
    def h_out(self):
        return None if self.shared else self.weights.shape[0]

    def astype(self, mode):
        if mode == self.mode:
            return self
        return LayerParams.of(self.weights, self.biases, self.shared, mode)

    def dense(self, h_out):
        # Per-position view, (H_out, H_out, ...) in both storage layouts
        if self.shared:
            return (
                np.broadcast_to(self.weights, (h_out, h_out) + self.weights.shape),
                np.broadcast_to(self.biases, (h_out, h_out) + self.biases.shape),
            )
        return self.weights, self.biases

    def check(self, layer, d_in, h_out):
        if layer.shared != self.shared:
            raise ShapeError(
                f"Layer is {'shared' if layer.shared else 'unshared'} but params are not"
            )
        if (self.D, self.d_in, self.R) != (layer.D, d_in, layer.R):
            raise ShapeError(
                f"Params (D={self.D}, D_in={self.d_in}, R={self.R}) do not fit layer "
                f"(D={layer.D}, D_in={d_in}, R={layer.R})"
            )
        if not self.shared and self.h_out != h_out:
            raise ShapeError(f"Unshared params cover {self.h_out}x{self.h_out}, need {h_out}x{h_out}")

    def equals(self, other):
        return (
            self.shared == other.shared
            and self.weights.shape == other.weights.shape
            and bool(np.all(self.weights == other.weights))
            and bool(np.all(self.biases == other.biases))
        )


@dataclass(frozen=True, eq=False)
class NetworkParams:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len({lp.mode for lp in self.layers}) > 1:
            raise ScalarModeError("All layers must share one scalar mode")

    @property
    def mode(self):
        return self.layers[0].mode if self.layers else "exact"

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, index):
        return self.layers[index]

    def astype(self, mode):
        return NetworkParams(tuple(lp.astype(mode) for lp in self.layers))

    def check(self, spec):
        if len(self.layers) != spec.L:
            raise ShapeError(f"Spec has {spec.L} layers, params have {len(self.layers)}")
        sizes = spec.spatial_sizes()
        channels = spec.channels()
        for l, (layer, lp) in enumerate(zip(spec.layers, self.layers), start=1):
            try:
                lp.check(layer, channels[l - 1], sizes[l])
            except ShapeError as e:
                raise ShapeError(f"layer {l}: {e.message}") from e

    def equals(self, other):
        return len(self) == len(other) and all(
            a.equals(b) for a, b in zip(self.layers, other.layers)
        )


# Forward evaluation

def _integerize(*arrays):
    # Fraction arrays -> integer arrays over one common denominator
    den = 1
    for arr in arrays:
        if arr.size:
            den = math.lcm(den, *(f.denominator for f in arr.ravel()))
    scale = np.frompyfunc(lambda f: f.numerator * (den // f.denominator), 1, 1)
    return [np.asarray(scale(arr), dtype=object) for arr in arrays], den


def _window_product(x, weights, biases, R, S, h_out):
    # x (B, D_in, H_in, H_in); weights (h_out, h_out, D, D_in, R, R)
    batch, d_in, h_in, _ = x.shape
    size = max(h_in, (h_out - 1) * S + R)
    padded = np.zeros((batch, d_in, size, size), dtype=x.dtype)
    padded[:, :, :h_in, :h_in] = x
    stop = (h_out - 1) * S + 1

    out = None
    for j in range(R):
        for i in range(R):
            patch = padded[:, :, j:j + stop:S, i:i + stop:S]
            patch = np.moveaxis(patch, 1, -1)[:, :, :, None, :]
            factor = (patch * weights[None, :, :, :, :, j, i]).sum(axis=-1)
            factor = factor + biases[None, :, :, :, j, i]
            out = factor if out is None else out * factor
    return np.moveaxis(out, -1, 1)


def _run_layers(pairs, batch, mode):
    h = batch.shape[-1]
    if mode == "float":
        x = batch
        for layer, lp in pairs:
            h_out = layer.out_size(h)
            w, b = lp.dense(h_out)
            x = _window_product(x, w, b, layer.R, layer.S, h_out)
            h = h_out
        return x

    # Exact: carry integer numerators over a running denominator q
    (x,), q = _integerize(batch)
    for layer, lp in pairs:
        h_out = layer.out_size(h)
        (w, b), s = _integerize(lp.weights, lp.biases)
        lp_int = LayerParams(w, b * q, lp.shared, "exact")
        w, b = lp_int.dense(h_out)
        x = _window_product(x, w, b, layer.R, layer.S, h_out)
        q = (s * q) ** (layer.R * layer.R)
        h = h_out
    to_fraction = np.frompyfunc(lambda n: Fraction(n, q), 1, 1)
    return np.asarray(to_fraction(x), dtype=object)


def forward_batch(spec, params, batch):
    """Evaluate the network on a (B, M, H, H) batch of representation outputs."""
    params.check(spec)
    batch = to_mode(batch, params.mode) if batch.dtype != _dtype(params.mode) else batch
    if batch.ndim != 4 or batch.shape[1:] != (spec.M, spec.H, spec.H):
        raise ShapeError(f"Batch shape {batch.shape} does not match (B, {spec.M}, {spec.H}, {spec.H})")
    return _run_layers(list(zip(spec.layers, params.layers)), batch, params.mode)


def _dtype(mode):
    return np.dtype(object) if mode == "exact" else np.dtype(np.float64)


def forward_layer(x, layer, params):
    if x.mode != params.mode:
        raise ScalarModeError("Input and params use different scalar modes")
    if x.order != 3 or x.dims[1] != x.dims[2]:
        raise ShapeError(f"Layer input must be D_in x H x H, got {x.dims}")
    d_in, h_in, _ = x.dims
    params.check(layer, d_in, layer.out_size(h_in))
    out = _run_layers([(layer, params)], x.data[None], x.mode)
    return DenseTensor(np.array(out[0]), x.mode)


def forward_network(spec, params, rep_output):
    """Sequential forward pass; collapsing specs return the score vector."""
    if rep_output.mode != params.mode:
        raise ScalarModeError("Input and params use different scalar modes")
    if rep_output.dims != (spec.M, spec.H, spec.H):
        raise ShapeError(f"Representation output {rep_output.dims} is not ({spec.M}, {spec.H}, {spec.H})")
    out = forward_batch(spec, params, rep_output.data[None])[0]
    if spec.is_collapsing:
        out = out[:, 0, 0]
    return DenseTensor(np.array(out), rep_output.mode)


# Realizability helpers

def to_unshared(params, h_out):
    if not params.shared:
        return params
    w, b = params.dense(h_out)
    return LayerParams(np.array(w), np.array(b), False, params.mode)


def shrink_receptive(params, R):
    """Embed a smaller window into an R x R one (top-left aligned)."""
    small = params.R
    if small > R:
        raise ShapeError(f"Cannot shrink a {small}x{small} window into {R}x{R}")
    if small == R:
        return params
    w_shape = params.weights.shape[:-2] + (R, R)
    b_shape = params.biases.shape[:-2] + (R, R)
    weights = filled(w_shape, 0, params.mode)
    biases = filled(b_shape, 1, params.mode)
    weights[..., :small, :small] = params.weights
    biases[..., :small, :small] = params.biases
    return LayerParams(weights, biases, params.shared, params.mode)


def pad_channels(params, d_out, d_in):
    # Extra output channels read as 0 (zero weights and biases); extra inputs are ignored
    if d_out < params.D or d_in < params.d_in:
        raise ShapeError(
            f"Cannot pad params ({params.D}, {params.d_in}) down to ({d_out}, {d_in})"
        )
    if (d_out, d_in) == (params.D, params.d_in):
        return params
    lead = params.weights.shape[:-4]
    R = params.R
    weights = filled(lead + (d_out, d_in, R, R), 0, params.mode)
    biases = filled(lead + (d_out, R, R), 0, params.mode)
    weights[..., :params.D, :params.d_in, :, :] = params.weights
    biases[..., :params.D, :, :] = params.biases
    return LayerParams(weights, biases, params.shared, params.mode)


def identity_params(layer, d_in, h_in=None, mode="exact"):
    """Params making a stride-1 layer the identity on its first d_in channels."""
    if layer.S != 1:
        raise ConstructionError(f"Identity layer needs stride 1, got {layer.S}")
    if layer.D < d_in:
        raise ConstructionError(f"Identity layer needs D >= {d_in}, got {layer.D}")

    weights = filled((layer.D, d_in, 1, 1), 0, mode)
    for c in range(d_in):
        weights[c, c, 0, 0] = 1 if mode == "float" else Fraction(1)
    biases = filled((layer.D, 1, 1), 0, mode)
    params = shrink_receptive(LayerParams(weights, biases, True, mode), layer.R)

    if not layer.shared:
        if h_in is None:
            raise ConstructionError("Unshared identity layer needs the input width")
        params = to_unshared(params, layer.out_size(h_in))
    return params


def _plan_lift(big, small):
    # One entry per big layer: index of the matched small layer, or None for identity
    def search(i, k, channels):
        if i == big.L:
            return [] if k == small.L else None
        layer = big.layers[i]
        if k < small.L:
            target = small.layers[k]
            fits = (
                layer.S == target.S
                and layer.R >= target.R
                and layer.D >= target.D
                and (target.shared or not layer.shared)
            )
            if fits:
                rest = search(i + 1, k + 1, target.D)
                if rest is not None:
                    return [k] + rest
        if layer.S == 1 and layer.D >= channels:
            rest = search(i + 1, k, channels)
            if rest is not None:
                return [None] + rest
        return None

    return search(0, 0, small.M)


def lift_params(big, small, small_params):
    """Params for `big` reproducing `small`, when `small` is derived from `big`
    by deleting stride-1 layers and shrinking windows."""
    if (big.H, big.M) != (small.H, small.M):
        raise ConstructionError("Specs differ in H or M")
    small_params.check(small)
    plan = _plan_lift(big, small)
    if plan is None:
        raise ConstructionError(
            "Smaller spec cannot be derived by deleting stride-1 layers and shrinking windows"
        )
    logger.debug("lift plan %s", plan)

    mode = small_params.mode
    h = big.H
    meaningful = big.M
    prev_d = big.M
    layers = []
    for layer, k in zip(big.layers, plan):
        h_out = layer.out_size(h)
        if k is None:
            lp = identity_params(layer, meaningful, h, mode)
        else:
            lp = small_params[k]
            if not layer.shared:
                lp = to_unshared(lp, h_out)
            lp = shrink_receptive(lp, layer.R)
            meaningful = small.layers[k].D
        layers.append(pad_channels(lp, layer.D, prev_d))
        prev_d = layer.D
        h = h_out
    return NetworkParams(tuple(layers))
