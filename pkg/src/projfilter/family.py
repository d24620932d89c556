"""Parametric density families embedded in L^2, with Gauss-Hermite geometry.

A family point ``theta`` is embedded either directly (``p_theta``) or through
the square root (``sqrt(p_theta)``, the Hellinger embedding).  All inner
products between family-derived functions are evaluated by Gauss-Hermite
quadrature centred on the family member: the integrands are Gaussian-weighted
polynomials for the Gaussian family, so the quadrature is exact to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import BoundaryError, DegenerateFamilyError

DEFAULT_ORDER = 40
MODES = ("direct", "hellinger")
_ALIASES = {"direct": "direct", "l2": "direct", "hellinger": "hellinger", "sqrt": "hellinger"}


def canonical_mode(mode: str) -> str:
    try:
        return _ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown metric mode {mode!r}; expected one of {MODES}") from None


class GaussHermite:
    """Gauss-Hermite rule for integrals over the real line.

    ``integrate(g, c, s)`` approximates ``int g(x) dx`` with nodes
    ``x = c + s sqrt(2) z``; it is exact when ``g(x) = exp(-(x-c)^2 / (2 s^2))``
    times a polynomial of degree below ``2 * order``.
    """

    def __init__(self, order: int = DEFAULT_ORDER):
        self.order = order
        z, w = np.polynomial.hermite.hermgauss(order)
        self.z = z
        self.w = w
        # w e^{z^2} grows large at the outer nodes; form it in log space
        self.w_exp = np.exp(np.log(w) + z**2)

    def nodes(self, center: float, scale: float) -> np.ndarray:
        return center + scale * np.sqrt(2.0) * self.z

    def integration_weights(self, scale: float) -> np.ndarray:
        return scale * np.sqrt(2.0) * self.w_exp

    def integrate(self, g, center: float, scale: float) -> float:
        x = self.nodes(center, scale)
        return float(self.integration_weights(scale) @ g(x))

    def expectation(self, f, mean: float, sd: float) -> float:
        """``E[f(X)]`` for ``X ~ N(mean, sd^2)``."""
        return float(self.w @ f(self.nodes(mean, sd)) / np.sqrt(np.pi))


class DensityFamily:
    """Interface for a smooth parametric density family on the real line.

    Subclasses supply ``density``; everything else has a finite-difference
    default.  Arrays of derivatives put the parameter axes first, e.g.
    ``density_grad(theta, x)`` has shape ``(n,) + x.shape``.
    """

    dim: int = 0
    fd_step = 1e-4

    def check(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float)

    def density(self, theta, x):
        raise NotImplementedError

    def location_scale(self, theta) -> tuple[float, float]:
        """Centre and spread used to place quadrature nodes."""
        raise NotImplementedError

    def sqrt_density(self, theta, x):
        return np.sqrt(self.density(theta, x))

    def _fd_grad(self, fn, theta, x):
        theta = self.check(theta)
        out = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = self.fd_step
            out.append((fn(theta + e, x) - fn(theta - e, x)) / (2 * self.fd_step))
        return np.array(out)

    def _fd_hess(self, fn, theta, x):
        theta = self.check(theta)
        h = self.fd_step
        n = self.dim
        f0 = fn(theta, x)
        out = np.empty((n, n) + np.shape(f0))
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = h
            out[i, i] = (fn(theta + ei, x) - 2 * f0 + fn(theta - ei, x)) / h**2
            for j in range(i + 1, n):
                ej = np.zeros(n)
                ej[j] = h
                out[i, j] = out[j, i] = (
                    fn(theta + ei + ej, x) - fn(theta + ei - ej, x) - fn(theta - ei + ej, x) + fn(theta - ei - ej, x)
                ) / (4 * h**2)
        return out

    def density_grad(self, theta, x):
        return self._fd_grad(self.density, theta, x)

    def density_hess(self, theta, x):
        return self._fd_hess(self.density, theta, x)

    def sqrt_grad(self, theta, x):
        return self._fd_grad(self.sqrt_density, theta, x)

    def sqrt_hess(self, theta, x):
        return self._fd_hess(self.sqrt_density, theta, x)

    def density_dx(self, theta, x):
        h = 1e-5
        return (self.density(theta, x + h) - self.density(theta, x - h)) / (2 * h)

    def density_dxx(self, theta, x):
        h = 1e-4
        return (self.density(theta, x + h) - 2 * self.density(theta, x) + self.density(theta, x - h)) / h**2


class GaussianFamily(DensityFamily):
    """``N(theta[0], theta[1]^2)``: mean and standard deviation coordinates."""

    dim = 2

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (2,):
            raise ValueError(f"Gaussian parameters must have shape (2,), got {theta.shape}")
        if not theta[1] > 0:
            raise BoundaryError(f"standard deviation must be positive, got {theta[1]}")
        return theta

    def location_scale(self, theta):
        mu, s = self.check(theta)
        return mu, s

    def _z(self, theta, x):
        mu, s = self.check(theta)
        return (np.asarray(x, dtype=float) - mu) / s, s

    def density(self, theta, x):
        z, s = self._z(theta, x)
        return np.exp(-0.5 * z**2) / (s * np.sqrt(2 * np.pi))

    def sqrt_density(self, theta, x):
        z, s = self._z(theta, x)
        return np.exp(-0.25 * z**2) / np.sqrt(s * np.sqrt(2 * np.pi))

    def density_grad(self, theta, x):
        z, s = self._z(theta, x)
        p = self.density(theta, x)
        return np.array([p * z / s, p * (z**2 - 1) / s])

    def density_hess(self, theta, x):
        z, s = self._z(theta, x)
        p = self.density(theta, x) / s**2
        mixed = p * (z**3 - 3 * z)
        return np.array([[p * (z**2 - 1), mixed], [mixed, p * (z**4 - 5 * z**2 + 2)]])

    def sqrt_grad(self, theta, x):
        z, s = self._z(theta, x)
        q = self.sqrt_density(theta, x)
        return np.array([q * z / (2 * s), q * (z**2 - 1) / (2 * s)])

    def sqrt_hess(self, theta, x):
        z, s = self._z(theta, x)
        q = self.sqrt_density(theta, x) / (4 * s**2)
        mixed = q * (z**3 - 5 * z)
        return np.array([[q * (z**2 - 2), mixed], [mixed, q * (z**4 - 8 * z**2 + 3)]])

    def density_dx(self, theta, x):
        z, s = self._z(theta, x)
        return -self.density(theta, x) * z / s

    def density_dxx(self, theta, x):
        z, s = self._z(theta, x)
        return self.density(theta, x) * (z**2 - 1) / s**2


GAUSSIAN = GaussianFamily()


@lru_cache(maxsize=8)
def gauss_hermite(order: int = DEFAULT_ORDER) -> GaussHermite:
    """Shared rule per order; the rule holds only read-only arrays."""
    return GaussHermite(order)


@dataclass(frozen=True)
class FamilyGeometry:
    """Embedding data of one family point sampled at quadrature nodes.

    ``phi`` holds ``p`` (direct) or ``sqrt(p)`` (Hellinger) at ``nodes``;
    ``tangents[i]`` and ``second[i, j]`` hold its first and second parameter
    derivatives.  ``inner(u, v)`` integrates a product of node-sampled
    functions.
    """

    theta: np.ndarray
    mode: str
    nodes: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    tangents: np.ndarray
    second: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray

    def inner(self, u, v) -> np.ndarray:
        return np.einsum("...k,...k->...", u * self.weights, v)

    @cached_property
    def dual_basis(self) -> np.ndarray:
        """``pi^i = metric^{ij} tangents_j``, the dual basis to the tangents."""
        return self.metric_inv @ self.tangents

    def chart_projection(self, v) -> np.ndarray:
        """Chart components of the orthogonal projection of ``v`` onto the tangent space."""
        return self.inner(self.dual_basis, v)


def family_metric(theta, mode: str, family: DensityFamily = GAUSSIAN, order: int = DEFAULT_ORDER,
                  quadrature: GaussHermite | None = None) -> FamilyGeometry:
    mode = canonical_mode(mode)
    theta = family.check(theta)
    quad = quadrature or gauss_hermite(order)
    center, spread = family.location_scale(theta)
    # direct-mode integrands carry p^2, whose spread is spread / sqrt(2)
    scale = spread / np.sqrt(2.0) if mode == "direct" else spread
    x = quad.nodes(center, scale)
    if mode == "direct":
        phi, tangents, second = family.density(theta, x), family.density_grad(theta, x), family.density_hess(theta, x)
    else:
        phi, tangents, second = family.sqrt_density(theta, x), family.sqrt_grad(theta, x), family.sqrt_hess(theta, x)
    w = quad.integration_weights(scale)
    G = np.einsum("ik,jk->ij", tangents * w, tangents)
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise DegenerateFamilyError(f"family metric is not positive definite at {theta}") from None
    return FamilyGeometry(theta, mode, x, w, phi, tangents, second, G, np.linalg.inv(G))


def expectation(theta, f, family: DensityFamily = GAUSSIAN, order: int = DEFAULT_ORDER) -> float:
    """``E_p[f] = int f p dx`` under the family member ``theta``."""
    quad = gauss_hermite(order)
    if isinstance(family, GaussianFamily):
        mu, s = family.check(theta)
        return quad.expectation(f, mu, s)
    center, spread = family.location_scale(theta)
    return quad.integrate(lambda x: f(x) * family.density(theta, x), center, spread)


@dataclass(frozen=True)
class L2Representation:
    """Family members as elements of L^2 on a uniform grid, or at quadrature nodes.

    The two routes to an inner product (trapezoid on the grid versus
    Gauss-Hermite) serve as mutual checks.
    """

    mode: str
    half_width: float = 8.0
    num_nodes: int = 400
    order: int = DEFAULT_ORDER

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.num_nodes)

    def embed(self, theta, x, family: DensityFamily = GAUSSIAN):
        if canonical_mode(self.mode) == "direct":
            return family.density(theta, x)
        return family.sqrt_density(theta, x)

    def inner_grid(self, u, v) -> float:
        x = self.grid
        return float(np.trapezoid(u(x) * v(x), x))

    def inner_quadrature(self, u, v, theta, family: DensityFamily = GAUSSIAN) -> float:
        center, spread = family.location_scale(theta)
        scale = spread / np.sqrt(2.0) if canonical_mode(self.mode) == "direct" else spread
        return gauss_hermite(self.order).integrate(lambda x: u(x) * v(x), center, scale)
