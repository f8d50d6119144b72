import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamalign.geometry import (
    AngleGrid,
    Query,
    bin_midpoint,
    bin_midpoints,
    from_unit,
    midpoints,
    quantize,
    secondary_midpoints,
    steering_matrix,
    steering_stack,
    steering_vector,
    to_unit,
)


def test_steering_vector_broadside():
    grid = AngleGrid(-60, 60, M=2, k=1, N_R=2)
    np.testing.assert_allclose(steering_vector(0.0, grid),
                               np.array([1, 1]) / np.sqrt(2), atol=1e-15)


def test_steering_vector_endfire():
    grid = AngleGrid(-90, 90, M=2, k=1, N_R=2)
    np.testing.assert_allclose(steering_vector(90.0, grid),
                               np.array([1, -1]) / np.sqrt(2), atol=1e-12)


def test_steering_vector_quarter_turns():
    grid = AngleGrid(-60, 60, M=4, k=1, N_R=4)
    np.testing.assert_allclose(steering_vector(30.0, grid),
                               np.array([1, 1j, -1, -1j]) / 2.0, atol=1e-12)


def test_steering_vector_rejects_out_of_range():
    grid = AngleGrid(-60, 60, M=4, k=1, N_R=4)
    with pytest.raises(ValueError):
        steering_vector(181.0, grid)


@settings(max_examples=200, deadline=None)
@given(st.floats(-180.0, 180.0))
def test_steering_vector_unit_norm(theta):
    grid = AngleGrid(-180, 180, M=16, k=1, N_R=16)
    assert abs(np.linalg.norm(steering_vector(theta, grid)) - 1.0) < 1e-12


def test_steering_matrix_matches_vector():
    grid = AngleGrid(-60, 60, M=8, k=2, N_R=8)
    thetas = [-31.0, 0.5, 44.0]
    stacked = steering_matrix(thetas, grid)
    for row, theta in zip(stacked, thetas):
        np.testing.assert_allclose(row, steering_vector(theta, grid), atol=1e-14)


def test_unit_mapping_examples():
    grid = AngleGrid(-60, 60, M=4, k=1, N_R=4)
    assert to_unit(0.0, grid) == 0.5
    assert to_unit(-60.0, grid) == 0.0
    assert from_unit(to_unit(17.3, grid), grid) == pytest.approx(17.3, abs=1e-12)


def test_unit_mapping_domain_errors():
    grid = AngleGrid(-60, 60, M=4, k=1, N_R=4)
    with pytest.raises(ValueError):
        to_unit(61.0, grid)
    with pytest.raises(ValueError):
        from_unit(1.5, grid)


def test_quantize_examples():
    assert quantize(0.5, 64) == 32
    assert quantize(0.001, 64) == 1
    assert quantize(0.0, 64) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 512))
def test_quantize_recovers_bin_of_midpoint(M):
    grid = AngleGrid(-60, 60, M=M, k=1, N_R=512)
    for i in np.unique(np.linspace(1, M, num=min(M, 32), dtype=int)):
        assert quantize(to_unit(bin_midpoint(int(i), grid), grid), M) == i


def test_midpoints_examples():
    grid = AngleGrid(-60, 60, M=4, k=1, N_R=4)
    np.testing.assert_allclose(midpoints(Query([1]), grid), [-45.0])

    grid2 = AngleGrid(-60, 60, M=2, k=2, N_R=4)
    np.testing.assert_allclose(midpoints(Query([1]), grid2), [-45.0, -15.0])

    grid3 = AngleGrid(-60, 60, M=2, k=1, N_R=4)
    np.testing.assert_allclose(midpoints(Query([1, 2]), grid3), [-30.0, 30.0])


def test_midpoints_spacing_and_order():
    grid = AngleGrid(-60, 60, M=8, k=5, N_R=8)
    for bins in ([1], [3, 7], [2, 4, 8]):
        mids = midpoints(Query(bins), grid)
        assert len(mids) == len(bins) * grid.k
        per_bin = mids.reshape(len(bins), grid.k)
        steps = np.diff(per_bin, axis=1)
        np.testing.assert_allclose(steps, grid.span / (grid.M * grid.k), atol=1e-12)
        assert np.all(steps > 0)


def test_empty_query_rejected():
    with pytest.raises(ValueError):
        Query([])


def test_query_normalizes_and_validates():
    q = Query([3, 1, 3])
    assert q.bins == (1, 3)
    assert q.K == 2
    grid = AngleGrid(-60, 60, M=2, k=1, N_R=4)
    with pytest.raises(ValueError):
        q.validate(grid)


def test_grid_invariants():
    with pytest.raises(ValueError):
        AngleGrid(60, -60, M=4, k=1, N_R=4)
    with pytest.raises(ValueError):
        AngleGrid(-60, 60, M=8, k=1, N_R=4)   # M > N_R
    with pytest.raises(ValueError):
        AngleGrid(-60, 60, M=0, k=1, N_R=4)


def test_secondary_midpoints_partition_bin():
    grid = AngleGrid(-60, 60, M=16, k=4, N_R=16)
    for i in (1, 7, 16):
        mids = secondary_midpoints(i, grid)
        lo = grid.theta_min + (i - 1) * grid.bin_width
        assert np.all(mids > lo) and np.all(mids < lo + grid.bin_width)


def test_steering_stack_shape():
    grid = AngleGrid(-60, 60, M=8, k=3, N_R=8)
    stack = steering_stack(Query([2, 5]), grid)
    assert stack.shape == (6, 8)
