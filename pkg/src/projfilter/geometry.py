"""Embedded submanifolds given by a parameterization ``phi: R^n -> R^r``.

Index convention used throughout: chart indices ``i, j`` run over ``n``, ambient
indices over ``r`` and noise indices over ``m``.  All functions accept leading
batch axes on chart points and ambient vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateChartError, OutsideTubularNeighborhoodError

MAX_CONDITION = 1e12
FD_STEP = 1e-5


@dataclass(frozen=True)
class Embedding:
    chart_dim: int
    ambient_dim: int
    phi: Callable[[np.ndarray], np.ndarray]
    # (..., n) -> (..., r, n), column i is d phi / d theta^i
    d_phi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # (..., n) -> (..., r, n, n)
    d2_phi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # analytic inverse of phi on its image, if known
    chart: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not 0 < self.chart_dim < self.ambient_dim:
            raise ValueError("need 0 < chart_dim < ambient_dim")

    def point(self, theta) -> np.ndarray:
        return np.asarray(self.phi(np.asarray(theta, dtype=float)), dtype=float)

    def jacobian(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.d_phi is not None:
            return np.asarray(self.d_phi(theta), dtype=float)
        cols = []
        for i in range(self.chart_dim):
            e = np.zeros_like(theta)
            e[..., i] = FD_STEP
            cols.append((self.point(theta + e) - self.point(theta - e)) / (2 * FD_STEP))
        return np.stack(cols, axis=-1)

    def second_derivative(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.d2_phi is not None:
            return np.asarray(self.d2_phi(theta), dtype=float)
        n = self.chart_dim
        if self.d_phi is not None:
            slabs = []
            for j in range(n):
                e = np.zeros_like(theta)
                e[..., j] = FD_STEP
                slabs.append((self.jacobian(theta + e) - self.jacobian(theta - e)) / (2 * FD_STEP))
            d2 = np.stack(slabs, axis=-1)
            return 0.5 * (d2 + np.swapaxes(d2, -1, -2))
        h = 1e-4
        out = np.empty(theta.shape[:-1] + (self.ambient_dim, n, n))
        f0 = self.point(theta)
        for i in range(n):
            ei = np.zeros_like(theta)
            ei[..., i] = h
            out[..., i, i] = (self.point(theta + ei) - 2 * f0 + self.point(theta - ei)) / h**2
            for j in range(i + 1, n):
                ej = np.zeros_like(theta)
                ej[..., j] = h
                mixed = (
                    self.point(theta + ei + ej)
                    - self.point(theta + ei - ej)
                    - self.point(theta - ei + ej)
                    + self.point(theta - ei - ej)
                ) / (4 * h**2)
                out[..., i, j] = mixed
                out[..., j, i] = mixed
        return out


def _check_condition(h: np.ndarray) -> None:
    lam = np.linalg.eigvalsh(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = lam[..., -1] / lam[..., 0]
    if not np.all(np.isfinite(cond)) or np.any(cond > MAX_CONDITION) or np.any(lam[..., 0] <= 0):
        raise DegenerateChartError(f"pullback metric is rank deficient (condition {np.max(cond):.3g})")


def metric_tensor(e: Embedding, theta) -> np.ndarray:
    """Pullback metric ``h_ij = <d_i phi, d_j phi>``."""
    J = e.jacobian(theta)
    h = np.einsum("...gi,...gj->...ij", J, J)
    _check_condition(h)
    return h


def inverse_metric_tensor(e: Embedding, theta) -> np.ndarray:
    return np.linalg.inv(metric_tensor(e, theta))


def tangent_projector(e: Embedding, theta) -> np.ndarray:
    """Chart-valued projector ``h^{-1} J^T`` of shape ``(..., n, r)``.

    This is the differential of the closest-point chart map at ``phi(theta)``:
    it inverts ``J`` on the tangent space and kills the normal space.
    """
    J = e.jacobian(theta)
    h = np.einsum("...gi,...gj->...ij", J, J)
    _check_condition(h)
    return np.linalg.solve(h, np.swapaxes(J, -1, -2))


def ambient_projector(e: Embedding, theta) -> np.ndarray:
    """Orthogonal projector of R^r onto the tangent space, ``J h^{-1} J^T``."""
    return e.jacobian(theta) @ tangent_projector(e, theta)


def tangent_projection(e: Embedding, theta, v) -> np.ndarray:
    return np.einsum("...ig,...g->...i", tangent_projector(e, theta), np.asarray(v, dtype=float))


def hessian_contraction(e: Embedding, theta, u, v) -> np.ndarray:
    """``sum_ij d^2 phi / d theta^i d theta^j u^i v^j`` as an R^r vector."""
    return np.einsum("...gij,...i,...j->...g", e.second_derivative(theta), u, v)


def metric_projection_batch(
    e: Embedding, x, theta0, tol: float = 1e-10, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Damped Newton / Gauss-Newton closest-point search; returns ``(theta, converged_mask)``.

    A point is reported as not converged if the iteration stalls or if the
    stationary point found is not a strict local minimum of ``|x - phi|^2``
    (which is what happens at focal points such as the centre of a circle).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        theta, ok = metric_projection_batch(e, x[None], np.asarray(theta0, dtype=float)[None], tol, max_iter)
        return theta[0], ok[0]
    theta = np.array(np.broadcast_to(theta0, x.shape[:-1] + (e.chart_dim,)), dtype=float)

    def objective(th):
        r = x - e.point(th)
        return np.einsum("...g,...g->...", r, r)

    def objective_at(th, idx):
        r = x[idx] - e.point(th)
        return np.einsum("...g,...g->...", r, r)

    # rounding in |x - phi|^2 is about eps |x| |x - phi|, far above eps f once f is small
    xscale = 1 + np.linalg.norm(x, axis=-1)
    active = np.ones(x.shape[:-1], dtype=bool)
    for _ in range(max_iter):
        r = x - e.point(theta)
        J = e.jacobian(theta)
        g = np.einsum("...gi,...g->...i", J, r)
        gnorm = np.linalg.norm(g, axis=-1)
        active &= gnorm > 1e-3 * tol
        if not np.any(active):
            break
        JtJ = np.einsum("...gi,...gj->...ij", J, J)
        # Newton where the full Hessian is positive definite, Gauss-Newton elsewhere
        H = JtJ - np.einsum("...gij,...g->...ij", e.second_derivative(theta), r)
        convex = np.linalg.eigvalsh(H)[..., 0] > 1e-8 * np.linalg.eigvalsh(JtJ)[..., 0]
        H = np.where(convex[..., None, None], H, JtJ)
        step = np.linalg.solve(H, g[..., None])[..., 0]
        step = np.where(active[..., None], step, 0.0)
        f0 = objective(theta)
        slope = np.einsum("...i,...i->...", g, step)
        scale = np.ones(active.shape)
        pending = active.copy()
        for _ in range(40):
            idx = np.nonzero(pending)
            f1 = objective_at(theta[idx] + scale[idx][..., None] * step[idx], idx)
            # sufficient decrease, with slack for rounding in f
            slack = 1e-14 * xscale[idx] * np.sqrt(f0[idx]) + 1e-300
            ok = f1 <= f0[idx] - 1e-4 * scale[idx] * slope[idx] + slack
            sel = tuple(i[ok] for i in idx)
            pending[sel] = False
            if not np.any(pending):
                break
            scale = np.where(pending, 0.5 * scale, scale)
        theta = np.where(active[..., None] & ~pending[..., None], theta + scale[..., None] * step, theta)
        snorm = scale * np.linalg.norm(step, axis=-1)
        active &= snorm > 1e-15 * (1 + np.linalg.norm(theta, axis=-1))
        if not np.any(active):
            break

    r = x - e.point(theta)
    J = e.jacobian(theta)
    g = np.einsum("...gi,...g->...i", J, r)
    ok = np.linalg.norm(g, axis=-1) <= tol
    # second-order condition: Hessian of 1/2|x - phi|^2 must be positive definite
    h = np.einsum("...gi,...gj->...ij", J, J)
    H = h - np.einsum("...gij,...g->...ij", e.second_derivative(theta), r)
    lam = np.linalg.eigvalsh(H)[..., 0]
    lam_h = np.linalg.eigvalsh(h)[..., 0]
    ok &= lam > 1e-6 * lam_h
    return theta, ok


def metric_projection(e: Embedding, x, theta0, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Chart coordinates of the closest point of the manifold to ``x``.

    Uniqueness of the minimizer is not checked: the result is the local
    minimum reached by descent from ``theta0``.
    """
    theta, ok = metric_projection_batch(e, x, theta0, tol, max_iter)
    if not np.all(ok):
        raise OutsideTubularNeighborhoodError(
            f"closest-point search failed for {np.size(ok) - np.count_nonzero(ok)} point(s)"
        )
    return theta


# ----------------------------------------------------------------------------
# Test embeddings


def circle(radius: float = 1.0) -> Embedding:
    return ellipse(radius, radius)


def ellipse(a: float = 2.0, b: float = 1.0) -> Embedding:
    """``theta -> (a cos theta, b sin theta)``."""

    def phi(th):
        t = th[..., 0]
        return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)

    def d_phi(th):
        t = th[..., 0]
        return np.stack([-a * np.sin(t), b * np.cos(t)], axis=-1)[..., None]

    def d2_phi(th):
        t = th[..., 0]
        return np.stack([-a * np.cos(t), -b * np.sin(t)], axis=-1)[..., None, None]

    chart = None
    if a == b:
        def chart(x):
            return np.arctan2(x[..., 1], x[..., 0])[..., None]

    return Embedding(1, 2, phi, d_phi, d2_phi, chart)


def affine(matrix, offset) -> Embedding:
    """``theta -> offset + matrix @ theta`` (a flat submanifold)."""
    A = np.asarray(matrix, dtype=float)
    c = np.asarray(offset, dtype=float)
    r, n = A.shape

    def phi(th):
        return c + np.einsum("gi,...i->...g", A, th)

    def d_phi(th):
        return np.broadcast_to(A, th.shape[:-1] + (r, n)).copy()

    def d2_phi(th):
        return np.zeros(th.shape[:-1] + (r, n, n))

    def chart(x):
        return np.linalg.lstsq(A, (x - c).T, rcond=None)[0].T

    return Embedding(n, r, phi, d_phi, d2_phi, chart)
