from fractions import Fraction

import numpy as np
import pytest
from hypothesis import strategies as st

from models.network import NetworkSpec
from models.tensor_core import DenseTensor, Matrix

rationals = st.fractions(min_value=-3, max_value=3, max_denominator=4)


@st.composite
def exact_matrices(draw, max_side=4):
    rows = draw(st.integers(1, max_side))
    cols = draw(st.integers(1, max_side))
    values = draw(st.lists(rationals, min_size=rows * cols, max_size=rows * cols))
    return Matrix.exact(np.array(values, dtype=object).reshape(rows, cols))


@st.composite
def exact_tensors(draw, max_order=6, max_dim=3):
    order = draw(st.integers(1, max_order))
    dims = tuple(draw(st.lists(st.integers(1, max_dim), min_size=order, max_size=order)))
    size = int(np.prod(dims))
    values = draw(st.lists(rationals, min_size=size, max_size=size))
    return DenseTensor.exact(np.array(values, dtype=object).reshape(dims))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_rational_tensor(rng):
    def make(dims, low=-3, high=3):
        values = rng.integers(low, high + 1, size=dims)
        return DenseTensor.exact(np.vectorize(lambda v: Fraction(int(v), 2), otypes=[object])(values))
    return make


@pytest.fixture
def nonsingular_rational(rng):
    def make(n):
        while True:
            values = rng.integers(-3, 4, size=(n, n))
            if round(np.linalg.det(values.astype(float))) != 0:
                return Matrix.exact(values.tolist())
    return make


@pytest.fixture
def conv_pool_H4():
    return NetworkSpec(4, 2, ((2, 1, 4), (2, 2, 4), (2, 2, 1)))
