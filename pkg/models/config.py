import os
from fractions import Fraction

# Repository paths
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ARCH_DIR = os.path.join(BASE_DIR, "arches")

# Largest M^N the grid enumeration will attempt
GRID_CAP = 2 ** 20

# Relative singular-value threshold for numeric rank
DEFAULT_TOL = 1e-9

# Assignments per forward batch while enumerating a grid tensor
CHUNK_SIZE = 4096

# CLI picks exact arithmetic for H up to this size, floats above it
EXACT_MODE_MAX_H = 4

SCALAR_MODES = ("exact", "float")

# {-3,...,3} \ {0} scaled by 1/2
DEFAULT_VALUE_GRID = tuple(Fraction(k, 2) for k in (-3, -2, -1, 1, 2, 3))

# Wider grid for genericity sweeps
GENERIC_VALUE_GRID = tuple(
    Fraction(k, 8) for k in range(-64, 65) if k != 0
)

DEFAULT_SEED = 0
DEFAULT_TRIALS = 100
EQUIV_INPUTS = 50

PARTITION_KINDS = ("left-right", "top-bottom")
