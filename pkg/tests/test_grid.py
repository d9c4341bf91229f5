import numpy as np
import pytest

from ksjko.exceptions import DomainError, GridMismatchError, InvalidResolutionError
from ksjko.grid import (
    DensityField, ScalarField, build_grid, interval, linf_norm, rectangle, refine, same_grid, second_moment,
    total_mass,
)


def test_spacing_and_centres():
    g = build_grid(interval(0.0, 2.0), 4)
    assert g.h == 0.5
    np.testing.assert_allclose(g.centers[0], [0.25, 0.75, 1.25, 1.75])
    np.testing.assert_allclose(g.faces[0], [0, 0.5, 1, 1.5, 2])


def test_rectangle_points_in_c_order():
    g = build_grid(rectangle((0, 1), (0, 2)), (2, 4))
    assert g.spacing == (0.5, 0.5)
    assert g.points.shape == (8, 2)
    np.testing.assert_allclose(g.points[1], [0.25, 0.75])


@pytest.mark.parametrize("n", [0, 1])
def test_resolution_floor(n):
    with pytest.raises(InvalidResolutionError):
        build_grid(interval(), n)


@pytest.mark.parametrize("kwargs", [dict(lo=1.0, hi=1.0), dict(coupling="robin")])
def test_bad_domain(kwargs):
    with pytest.raises(DomainError):
        interval(**kwargs)


def test_freespace_needs_2d():
    with pytest.raises(DomainError):
        interval(coupling="freespace")


def test_negative_and_nonfinite_density_rejected():
    g = build_grid(interval(), 3)
    with pytest.raises(DomainError):
        DensityField(g, [1, -1, 1])
    with pytest.raises(DomainError):
        DensityField(g, [1, np.nan, 1])
    with pytest.raises(DomainError):
        ScalarField(g, [0, np.inf, 0])


def test_values_are_read_only():
    rho = DensityField.uniform(build_grid(interval(), 4))
    with pytest.raises(ValueError):
        rho.values[0] = 3.0


def test_from_function_normalises():
    g = build_grid(rectangle(), 10)
    rho = DensityField.from_function(g, lambda x, y: x + y)
    assert total_mass(rho) == pytest.approx(1.0, abs=1e-14)


def test_zero_profile_rejected():
    with pytest.raises(DomainError):
        DensityField.from_function(build_grid(interval(), 4), lambda x: 0 * x)


def test_linf_first_maximiser():
    rho = DensityField(build_grid(interval(), 4), [1, 3, 3, 1])
    assert linf_norm(rho) == (3.0, 1)


def test_second_moment_midpoint_rule():
    n = 50
    rho = DensityField.uniform(build_grid(interval(-0.5, 0.5), n))
    h = 1 / n
    assert second_moment(rho) == pytest.approx(1 / 12 - h * h / 12, rel=1e-12)


def test_refine_keeps_mass():
    rho = DensityField.from_function(build_grid(rectangle(), 3), lambda x, y: 1 + x * y)
    fine = refine(rho)
    assert fine.grid.shape == (6, 6)
    assert total_mass(fine) == pytest.approx(total_mass(rho))


def test_same_grid_mismatch():
    a = DensityField.uniform(build_grid(interval(), 4))
    b = DensityField.uniform(build_grid(interval(), 5))
    with pytest.raises(GridMismatchError):
        same_grid(a, b)
