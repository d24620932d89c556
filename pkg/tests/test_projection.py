from __future__ import annotations

import numpy as np
import pytest

from projfilter.geometry import affine, circle, ellipse, tangent_projection
from projfilter.projection import (
    KINDS,
    check_ito_jet_consistency,
    circle_test_sde,
    ito_jet_drift,
    ito_jet_drift_fd,
    ito_vector_drift,
    order_probe,
    order_probe_all,
    project,
    project_diffusion,
)
from projfilter.errors import FormulaConsistencyError
from projfilter.sde import ItoSde, brownian_increments, euler_maruyama_step

from .conftest import paraboloid


def constant_sde(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    r, m = b.shape
    return ItoSde(r, m, lambda x, t: np.broadcast_to(a, x.shape[:-1] + (r,)).copy(),
                  lambda x, t: np.broadcast_to(b, x.shape[:-1] + (r, m)).copy(),
                  lambda x, t: np.zeros(x.shape[:-1] + (r, m, r)))


def nonlinear_sde():
    """R^3 SDE with state-dependent drift and two state-dependent noises."""

    def drift(x, t):
        return np.stack([np.sin(x[..., 1]), x[..., 0] * x[..., 2], -x[..., 1]], -1)

    def diffusion(x, t):
        one = np.ones_like(x[..., 0])
        return np.stack([np.stack([one, x[..., 2]], -1), np.stack([x[..., 0], 0.5 * one], -1),
                         np.stack([np.cos(x[..., 1]), x[..., 0] * x[..., 1]], -1)], -2)

    return ItoSde(3, 2, drift, diffusion)


def test_diffusion_examples():
    e = circle()
    assert np.allclose(project_diffusion(constant_sde([0, 0], np.eye(2)), e, [0.0]), [[0.0, 1.0]], atol=1e-15)
    tangent = constant_sde([0, 0], [[0.0], [2.0]])
    assert np.allclose(project_diffusion(tangent, e, [0.0]), [[2.0]], atol=1e-15)
    normal = constant_sde([0, 0], [[1.5], [0.0]])
    assert np.allclose(project_diffusion(normal, e, [0.0]), [[0.0]], atol=1e-15)


def test_diffusion_identical_across_kinds(rng):
    sde, e = nonlinear_sde(), paraboloid()
    for theta in rng.uniform(-1, 1, size=(10, 2)):
        B = [project(sde, e, k).chart_sde.diffusion(theta, 0.3) for k in KINDS]
        assert all(np.array_equal(B[0], b) for b in B[1:])
        assert np.array_equal(B[0], project_diffusion(sde, e, theta, 0.3))


def test_zero_noise_drifts_agree(rng):
    sde = ItoSde(3, 1, nonlinear_sde().drift, lambda x, t: np.zeros(x.shape[:-1] + (3, 1)))
    e = paraboloid()
    for theta in rng.uniform(-1, 1, size=(10, 2)):
        drifts = [project(sde, e, k).chart_sde.drift(theta, 0.0) for k in KINDS]
        assert np.allclose(drifts[0], drifts[1], atol=1e-10) and np.allclose(drifts[0], drifts[2], atol=1e-10)
        assert np.allclose(drifts[1], tangent_projection(e, theta, sde.drift(e.point(theta), 0.0)), atol=1e-12)


def test_affine_embedding_vector_equals_jet(rng):
    e = affine([[1.0, 0.0], [0.0, 1.0], [1.0, -2.0]], [0.0, 1.0, 0.0])
    sde = nonlinear_sde()
    for theta in rng.uniform(-1, 1, size=(10, 2)):
        assert np.allclose(ito_vector_drift(sde, e, theta), ito_jet_drift(sde, e, theta), atol=1e-10)
    additive = constant_sde([0.3, -1.0, 2.0], rng.normal(size=(3, 2)))
    theta = np.array([0.2, 0.4])
    pi_a = tangent_projection(e, theta, [0.3, -1.0, 2.0])
    for k in KINDS:
        assert np.allclose(project(additive, e, k).chart_sde.drift(theta, 0.0), pi_a, atol=1e-8)


def test_circle_brownian_drifts_vanish():
    sde, e = circle_test_sde(), circle()
    for k in KINDS:
        chart = project(sde, e, k).chart_sde
        assert np.allclose(chart.drift(np.array([0.0]), 0.0), 0.0, atol=1e-8)
        assert np.allclose(chart.diffusion(np.array([0.0]), 0.0), [[0.0, 1.0]], atol=1e-15)


def test_ito_jet_atan2_oracle(rng):
    # theta(x) = atan2(x2, x1) is harmonic, so Itô's lemma gives drift D theta(a)
    e = circle()
    for _ in range(10):
        theta = rng.uniform(-np.pi, np.pi, 1)
        a = rng.normal(size=2)
        A = ito_jet_drift(constant_sde(a, np.eye(2)), e, theta)
        grad = np.array([-np.sin(theta[0]), np.cos(theta[0])])
        assert A == pytest.approx([grad @ a], abs=1e-12)


@pytest.mark.parametrize("embedding", [circle(), ellipse(2.0, 1.0)], ids=["circle", "ellipse"])
def test_ito_jet_two_paths_agree(embedding, rng):
    for _ in range(50):
        theta = rng.uniform(-np.pi, np.pi, 1)
        sde = constant_sde(rng.normal(size=2), rng.normal(size=(2, 2)))
        closed, fd = check_ito_jet_consistency(sde, embedding, theta, tol=1e-4)
        assert np.allclose(closed, fd, atol=1e-4)


def test_ito_jet_two_paths_agree_on_surface(rng):
    sde, e = nonlinear_sde(), paraboloid()
    for theta in rng.uniform(-0.5, 0.5, size=(10, 2)):
        assert np.allclose(ito_jet_drift(sde, e, theta), ito_jet_drift_fd(sde, e, theta), atol=1e-4)


def test_consistency_check_raises_on_mismatch(monkeypatch):
    import projfilter.projection as proj

    monkeypatch.setattr(proj, "ito_jet_drift", lambda *a, **k: np.array([1.0]))
    with pytest.raises(FormulaConsistencyError):
        proj.check_ito_jet_consistency(circle_test_sde(), circle(), [0.0])


def test_noise_metric_weights_the_curvature_term():
    e = circle()
    sde = constant_sde([0, 0], np.eye(2))
    A1 = ito_vector_drift(sde, e, [0.3], noise_metric=np.diag([1.0, 3.0]))
    A2 = ito_vector_drift(sde, e, [0.3])
    assert np.isfinite(A1).all() and np.allclose(A2, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        ito_vector_drift(sde, e, [0.3], noise_metric=[[1.0, 2.0], [0.0, 1.0]])


def test_tangent_sde_on_affine_manifold_is_exact():
    e = affine([[1.0], [2.0]], [0.5, -1.0])
    direction = np.array([1.0, 2.0])
    sde = ItoSde(2, 1, lambda x, t: 0.3 * np.ones(x.shape[:-1] + (1,)) * direction,
                 lambda x, t: np.broadcast_to(direction[:, None], x.shape[:-1] + (2, 1)).copy())
    dW = brownian_increments(5, 200, 1, 0.01)
    for k in KINDS:
        chart = project(sde, e, k).chart_sde
        x, y = e.point([0.2]), np.array([0.2])
        for i, dw in enumerate(dW):
            x = euler_maruyama_step(sde, x, i * 0.01, 0.01, dw)
            y = euler_maruyama_step(chart, y, i * 0.01, 0.01, dw)
        assert np.allclose(e.point(y), x, atol=1e-9)


def test_probe_degenerate_on_exact_projection():
    e = affine([[1.0], [0.0]], [0.0, 0.0])
    sde = constant_sde([0.2, 0.0], [[1.0], [0.0]])
    res = order_probe(sde, e, "ito_jet", "strong_ambient", [0.1, 0.05], trials=200, seed=1, theta0=[0.0])
    assert res.degenerate and np.isnan(res.slope)


def test_probe_reproducible_and_small_scale_orders():
    sde, e = circle_test_sde(), circle()
    horizons = [2.0**-k for k in (4, 5, 6, 7)]
    a = order_probe_all(sde, e, "ito_vector", horizons, 20_000, 3, [0.0])
    b = order_probe_all(sde, e, "ito_vector", horizons, 20_000, 3, [0.0])
    assert np.array_equal(a["strong_ambient"].errors, b["strong_ambient"].errors)
    assert 0.8 <= a["strong_ambient"].slope <= 1.2
    jet = order_probe(sde, e, "ito_jet", "strong_metric_projection", horizons, 20_000, 3, [0.0])
    assert jet.slope >= 1.8
    assert set(a) == {"strong_ambient", "weak_ambient", "strong_metric_projection"}
    assert "norm_slope" in a["weak_ambient"].extra
