import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supplyshare.basis import BasisConfig, KnotVector, annual_grid, build_basis, place_knots
from supplyshare.errors import ConfigError, DataError

from oracles import cox_de_boor_exact


def test_place_knots_example():
    kv = place_knots((1990, 2030), 2015, spacing=5)
    assert kv.interior_knots == tuple(float(y) for y in range(1990, 2031, 5))
    assert kv.anchor_year == 2015.0
    assert kv.interior_knots[kv.k_star_index] == 2015.0


def test_place_knots_anchor_at_window_end():
    kv = place_knots((1990, 2030), 2030, spacing=5)
    assert kv.k_star_index == len(kv.interior_knots) - 1


def test_place_knots_off_grid_anchor_extends_window():
    kv = place_knots((1990, 2030), 2014, spacing=5)
    assert kv.interior_knots[0] <= 1990 and kv.interior_knots[-1] >= 2030
    assert kv.anchor_year == 2014.0
    assert np.allclose(np.diff(kv.interior_knots), 5)


def test_distinct_regions_distinct_knots():
    assert place_knots((1990, 2030), 2014) != place_knots((1990, 2030), 2016)


def test_place_knots_errors():
    with pytest.raises(ConfigError):
        place_knots((2000, 2003), 2002, spacing=5)
    with pytest.raises(DataError):
        place_knots((2000, 2030), 2040)
    with pytest.raises(ConfigError):
        BasisConfig(spacing=0)


def test_clamped_boundary_knots():
    kv = place_knots((1990, 2030), 2015, spacing=5, degree=3)
    full = kv.full
    assert np.all(full[:4] == 1990) and np.all(full[-4:] == 2030)
    assert kv.n_basis == full.size - 4


def test_degree_zero_piecewise_constant():
    kv = KnotVector((2000.0, 2005.0), 0, 0)
    values = build_basis(kv, [2002.0]).values
    assert values.tolist() == [[1.0]]


def test_grid_outside_span():
    kv = place_knots((1990, 2030), 2015)
    with pytest.raises(DataError):
        build_basis(kv, [1985.0])


def test_values_at_knots_match_exact_recursion():
    kv = place_knots((1990, 2030), 2015, spacing=5, degree=3)
    grid = np.array(kv.interior_knots)
    values = build_basis(kv, grid).values
    for row, x in zip(values, grid):
        exact = cox_de_boor_exact(kv.full, 3, x)
        assert np.max(np.abs(row - np.array([float(v) for v in exact]))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1990, 2030), st.integers(1, 12), st.integers(0, 4))
def test_partition_of_unity_and_locality(anchor, spacing, degree):
    kv = place_knots((1990, 2030), anchor, spacing=spacing, degree=degree)
    grid = annual_grid((1990, 2030)).astype(float)
    values = build_basis(kv, grid).values
    assert np.max(np.abs(values.sum(axis=1) - 1.0)) < 1e-12
    assert values.min() >= 0.0
    full = kv.full
    for k in range(kv.n_basis):
        outside = (grid < full[k]) | (grid > full[k + degree + 1])
        assert np.all(values[outside, k] == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1995, 2025), st.integers(2, 8), st.integers(-50, 50))
def test_translation_equivariance(anchor, spacing, shift):
    kv = place_knots((1990, 2030), anchor, spacing=spacing)
    grid = annual_grid((1990, 2030)).astype(float)
    a = build_basis(kv, grid).values
    b = build_basis(kv.shifted(shift), grid + shift).values
    assert np.max(np.abs(a - b)) < 1e-12
