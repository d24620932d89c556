from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projfilter.errors import DegenerateChartError, OutsideTubularNeighborhoodError
from projfilter.geometry import (
    Embedding,
    affine,
    ambient_projector,
    circle,
    ellipse,
    hessian_contraction,
    inverse_metric_tensor,
    metric_projection,
    metric_tensor,
    tangent_projection,
)

from .conftest import EMBEDDINGS, numeric_embedding, paraboloid


def chart_points(name, rng, n):
    dim = EMBEDDINGS[name].chart_dim
    return rng.uniform(-1.0, 1.0, size=(n, dim))


def test_circle_metric_is_one(rng):
    theta = rng.uniform(-np.pi, np.pi, size=(25, 1))
    assert np.allclose(metric_tensor(circle(), theta), 1.0, atol=1e-14)


def test_ellipse_metric_at_quarter_turn():
    assert metric_tensor(ellipse(2.0, 1.0), [np.pi / 2]) == pytest.approx(np.array([[4.0]]), abs=1e-12)


@pytest.mark.parametrize("name", sorted(EMBEDDINGS))
def test_metric_matches_finite_differences(name, rng):
    e = EMBEDDINGS[name]
    theta = chart_points(name, rng, 10)
    assert np.allclose(metric_tensor(e, theta), metric_tensor(numeric_embedding(e), theta), atol=1e-6)
    h = metric_tensor(e, theta)
    assert np.allclose(h @ inverse_metric_tensor(e, theta), np.eye(e.chart_dim), atol=1e-10)


@pytest.mark.parametrize("name", sorted(EMBEDDINGS))
def test_second_derivative_fallback(name, rng):
    e = EMBEDDINGS[name]
    theta = chart_points(name, rng, 5)
    T = e.second_derivative(theta)
    assert np.allclose(T, np.swapaxes(T, -1, -2))
    assert np.allclose(numeric_embedding(e).second_derivative(theta), T, atol=1e-5)


def test_degenerate_chart_rejected():
    # a cusp: the analytic Jacobian vanishes at the origin
    e = Embedding(1, 2, lambda th: np.stack([th[..., 0] ** 3, th[..., 0] ** 2], -1),
                  lambda th: np.stack([3 * th[..., 0] ** 2, 2 * th[..., 0]], -1)[..., None])
    with pytest.raises(DegenerateChartError):
        metric_tensor(e, [0.0])


def test_tangent_projection_examples():
    e = circle()
    assert tangent_projection(e, [0.0], [3.0, 2.0]) == pytest.approx([2.0], abs=1e-14)
    assert tangent_projection(e, [0.0], [3.0, 0.0]) == pytest.approx([0.0], abs=1e-14)


@pytest.mark.parametrize("name", sorted(EMBEDDINGS))
def test_tangent_projection_left_inverse(name, rng):
    e = EMBEDDINGS[name]
    theta = chart_points(name, rng, 20)
    u = rng.normal(size=theta.shape)
    v = np.einsum("...gi,...i->...g", e.jacobian(theta), u)
    assert np.allclose(tangent_projection(e, theta, v), u, atol=1e-10)


@pytest.mark.parametrize("name", sorted(EMBEDDINGS))
def test_ambient_projector_is_orthogonal(name, rng):
    P = ambient_projector(EMBEDDINGS[name], chart_points(name, rng, 20))
    assert np.allclose(P @ P, P, atol=1e-10)
    assert np.allclose(P, np.swapaxes(P, -1, -2), atol=1e-10)


def test_metric_projection_examples():
    e = circle()
    assert metric_projection(e, [2.0, 0.0], [0.1]) == pytest.approx([0.0], abs=1e-10)
    # oracle: dense scan of |x - phi(theta)| over a fine theta grid
    x = np.array([3.0, 4.0])
    grid = np.linspace(-np.pi, np.pi, 2_000_001)
    scan = grid[np.argmin((x[0] - np.cos(grid)) ** 2 + (x[1] - np.sin(grid)) ** 2)]
    theta = metric_projection(e, x, [0.9])
    assert theta[0] == pytest.approx(scan, abs=1e-5)
    assert theta[0] == pytest.approx(0.9272952180016122, abs=1e-10)
    with pytest.raises(OutsideTubularNeighborhoodError):
        metric_projection(e, [0.0, 0.0], [0.3])


@pytest.mark.parametrize("name", sorted(EMBEDDINGS))
def test_metric_projection_first_order_condition(name, rng):
    e = EMBEDDINGS[name]
    theta = chart_points(name, rng, 10)
    x = e.point(theta) + 0.05 * rng.normal(size=(10, e.ambient_dim))
    found = metric_projection(e, x, theta)
    r = x - e.point(found)
    assert np.all(np.abs(np.einsum("...gi,...g->...i", e.jacobian(found), r)) < 1e-10)


@pytest.mark.parametrize("name", sorted(EMBEDDINGS))
def test_points_on_manifold_are_fixed(name, rng):
    e = EMBEDDINGS[name]
    theta = chart_points(name, rng, 10)
    assert np.allclose(metric_projection(e, e.point(theta), theta), theta, atol=1e-10)


@pytest.mark.parametrize("name", ["circle", "ellipse", "paraboloid"])
def test_differential_of_metric_projection(name, rng):
    e = EMBEDDINGS[name]
    theta = chart_points(name, rng, 1)[0]
    v = rng.normal(size=e.ambient_dim)
    x0 = e.point(theta)
    quotients = [(metric_projection(e, x0 + h * v, theta, tol=1e-13) - theta) / h for h in (1e-3, 1e-4)]
    richardson = (10 * quotients[1] - quotients[0]) / 9
    assert np.allclose(richardson, tangent_projection(e, theta, v), atol=1e-4)
    assert np.allclose(quotients[0], quotients[1], atol=1e-2)


def test_hessian_contraction_examples(rng):
    line = affine([[1.0], [2.0]], [0.0, 0.0])
    assert np.array_equal(hessian_contraction(line, [0.3], [1.0], [2.0]), np.zeros(2))
    assert hessian_contraction(circle(), [0.0], [1.0], [1.0]) == pytest.approx([-1.0, 0.0], abs=1e-15)
    e = paraboloid()
    u, v = rng.normal(size=2), rng.normal(size=2)
    assert np.allclose(hessian_contraction(e, [0.1, 0.2], u, v), hessian_contraction(e, [0.1, 0.2], v, u))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.5, 3))
def test_radial_points_project_to_their_angle(angle, radius):
    e = circle()
    x = radius * np.array([np.cos(angle), np.sin(angle)])
    theta = metric_projection(e, x, [angle + 0.2])
    assert np.cos(theta[0] - angle) == pytest.approx(1.0, abs=1e-12)
