"""Grid tensors by exhaustive enumeration of template indices, and the
standard partitions of the H x H grid positions.

Position (j, i) (row j, column i, 0-based) is mode j * H + i. Assignments
are enumerated row-major over (d_1, ..., d_N), so the flat result is already
laid out the way matricize expects.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from models.config import CHUNK_SIZE, DEFAULT_TOL, GRID_CAP
from models.errors import (
    GridSizeError,
    InvalidPartitionError,
    ShapeError,
    SingularRepresentationError,
)
from models.network import forward_batch
from models.tensor_core import DenseTensor, IndexPartition, Matrix, matricize, matrix_rank

logger = logging.getLogger(__name__)


def mode_index(j, i, H):
    return j * H + i


def mode_position(k, H):
    return divmod(k, H)


def representation_batch(F, indices, M, H):
    # O[b, m, j, i] = F[d_(j,i), m] for each assignment index b
    digits = np.stack(np.unravel_index(indices, (M,) * (H * H)), axis=1)
    O = F[digits]
    return np.transpose(O, (0, 2, 1)).reshape(len(indices), M, H, H)


def build_grid_tensor(
    spec,
    params,
    F=None,
    output_channel=0,
    cap=GRID_CAP,
    threads=1,
    chunk_size=CHUNK_SIZE,
):
    spec.require_collapsing()
    params.check(spec)
    mode = params.mode
    H, M = spec.H, spec.M
    N = H * H

    count = M ** N
    if count > cap:
        raise GridSizeError(f"Grid tensor needs M^N = {M}^{N} = {count} entries, cap is {cap}")
    if not 0 <= output_channel < spec.layers[-1].D:
        raise ShapeError(
            f"Output channel {output_channel} outside 0..{spec.layers[-1].D - 1}"
        )

    F = Matrix.identity(M, mode) if F is None else F.astype(mode)
    if F.dims != (M, M):
        raise ShapeError(f"Representation matrix must be {M}x{M}, got {F.dims}")
    if matrix_rank(F) < M:
        raise SingularRepresentationError("Representation matrix F is singular")

    flat = np.empty(count, dtype=object if mode == "exact" else np.float64)
    chunks = [(start, min(start + chunk_size, count)) for start in range(0, count, chunk_size)]

    def run(bounds):
        start, stop = bounds
        batch = representation_batch(F.data, np.arange(start, stop), M, H)
        out = forward_batch(spec, params, batch)
        flat[start:stop] = out[:, output_channel, 0, 0]
        logger.debug("grid entries %d..%d of %d done", start, stop, count)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    else:
        for bounds in chunks:
            run(bounds)

    return DenseTensor(flat.reshape((M,) * N), mode)


# Partitions

def _require_even(H):
    if H % 2:
        raise InvalidPartitionError(f"Standard partitions need an even H, got {H}")


def left_right_partition(H):
    # P holds columns i < H/2
    _require_even(H)
    P = [mode_index(j, i, H) for j in range(H) for i in range(H) if i < H // 2]
    Q = [mode_index(j, i, H) for j in range(H) for i in range(H) if i >= H // 2]
    return IndexPartition(P, Q)


def top_bottom_partition(H):
    # P holds rows j < H/2
    _require_even(H)
    P = [mode_index(j, i, H) for j in range(H) for i in range(H) if j < H // 2]
    Q = [mode_index(j, i, H) for j in range(H) for i in range(H) if j >= H // 2]
    return IndexPartition(P, Q)


def standard_partition(kind, H):
    if kind == "left-right":
        return left_right_partition(H)
    if kind == "top-bottom":
        return top_bottom_partition(H)
    raise InvalidPartitionError(f"Unknown partition kind '{kind}'")


def _as_modes(entries, H):
    modes = []
    for entry in entries:
        if isinstance(entry, (tuple, list)):
            if H is None:
                raise InvalidPartitionError("Position pairs need the grid width H")
            j, i = entry
            if not (0 <= j < H and 0 <= i < H):
                raise InvalidPartitionError(f"Position {entry} lies outside the {H}x{H} grid")
            modes.append(mode_index(j, i, H))
        else:
            modes.append(int(entry))
    if len(set(modes)) != len(modes):
        raise InvalidPartitionError("Partition side lists a mode twice")
    return sorted(modes)


def custom_partition(I, J, H=None):
    """Partition from mode indices or (row, col) pairs; H enables the cover check."""
    part = IndexPartition(_as_modes(I, H), _as_modes(J, H))
    if H is not None:
        part.check_covers(H * H)
    return part


def even_partitions(N):
    # Each unordered split once: mode 0 always sits in P
    if N % 2:
        raise InvalidPartitionError(f"No even partitions of {N} modes")
    everything = set(range(N))
    for rest in itertools.combinations(range(1, N), N // 2 - 1):
        P = (0,) + rest
        yield IndexPartition(P, tuple(sorted(everything - set(P))))


def parse_partition(text, H):
    text = text.strip()
    if text in ("left-right", "top-bottom"):
        return standard_partition(text, H)
    if text.startswith("custom:"):
        body = text[len("custom:"):]
        if body.count("|") != 1:
            raise InvalidPartitionError(f"Custom partition '{body}' must look like 0,1|2,3")
        left, right = body.split("|")
        try:
            I = [int(v) for v in left.split(",") if v.strip()]
            J = [int(v) for v in right.split(",") if v.strip()]
        except ValueError:
            raise InvalidPartitionError(f"Custom partition '{body}' has non-integer modes")
        return custom_partition(I, J, H)
    raise InvalidPartitionError(
        f"Unknown partition '{text}' (use left-right, top-bottom or custom:I|J)"
    )


def partition_positions(part, H):
    return {
        "P": [list(mode_position(k, H)) for k in part.P],
        "Q": [list(mode_position(k, H)) for k in part.Q],
    }


def grid_rank(grid, part, tol=DEFAULT_TOL):
    return matrix_rank(matricize(grid, part), tol)


def all_partition_ranks(grid, tol=DEFAULT_TOL):
    """Rank under every even partition; the minimum bounds the next-to-last
    width of any non-overlapping network, whatever its pooling geometry."""
    return [(part, grid_rank(grid, part, tol)) for part in even_partitions(grid.order)]
