from __future__ import annotations

import numpy as np
import pytest

from h2m.errors import DimensionMismatch, TooFewDistinctValues
from h2m.splines import basis, make_knots, smooth_eval, time_covariate


def test_knots_on_uniform_grid_are_quartiles():
    z = np.arange(0.0, 101.0)
    assert np.allclose(make_knots(z, 3), [25.0, 50.0, 75.0])


def test_single_knot_is_the_median():
    z = np.concatenate([-np.linspace(0.1, 4.0, 40), [0.0], np.linspace(0.1, 4.0, 40)])
    knots = make_knots(z, 1)
    assert knots.shape == (1,)
    assert knots[0] == pytest.approx(0.0, abs=1e-12)


def test_knots_are_interior_and_increasing():
    rng = np.random.default_rng(0)
    z = rng.normal(size=500)
    knots = make_knots(z, 6)
    assert np.all(np.diff(knots) > 0)
    assert knots[0] > z.min() and knots[-1] < z.max()


def test_too_few_distinct_values():
    with pytest.raises(TooFewDistinctValues):
        make_knots(np.array([1.0, 1.0, 2.0, 2.0]), 3)
    with pytest.raises(TooFewDistinctValues):
        make_knots(np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]), 2)  # tied quantiles


def test_centered_basis_worked_example():
    sb = basis(np.array([0.0, 1.0, 2.0]), np.array([1.0]))
    assert np.allclose(sb.cubic[:, 0], [1.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0])
    assert np.allclose(sb.linear, [-1.0, 0.0, 1.0])


def test_columns_are_orthogonal_to_intercept():
    rng = np.random.default_rng(1)
    z = rng.normal(10.0, 3.0, 400)
    sb = basis(z, make_knots(z, 6))
    assert abs(sb.linear.mean()) < 1e-10
    assert np.all(np.abs(sb.cubic.mean(axis=0)) < 1e-10)


def test_smooth_eval_is_linear_in_coefficients():
    rng = np.random.default_rng(2)
    z = rng.uniform(0, 1, 200)
    sb = basis(z, make_knots(z, 4))
    a1, a2 = 0.7, -1.3
    b1 = rng.normal(size=4)
    b2 = rng.normal(size=4)
    combined = smooth_eval(sb, a1 + a2, b1 + b2)
    separate = smooth_eval(sb, a1, b1) + smooth_eval(sb, a2, b2)
    assert np.allclose(combined, separate, atol=1e-12)


def test_smooth_eval_dimension_mismatch():
    z = np.linspace(0, 1, 50)
    sb = basis(z, make_knots(z, 3))
    with pytest.raises(DimensionMismatch):
        smooth_eval(sb, 1.0, np.zeros(5))


def test_time_covariate_spans_unit_interval():
    t = time_covariate(731)
    assert t[0] == 0.0 and t[-1] == 1.0
    assert np.all(np.diff(t) > 0)
    assert t.size == 731
