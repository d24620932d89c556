"""Scalar nonlinear filtering: Kushner-Stratonovich coefficients, Gaussian
projection filters in the direct L^2 and Hellinger metrics, and the classical
Kalman-Bucy, extended Kalman and Gaussian assumed-density filters.

Signal ``dX = f(X) dt + sigma(X) dW``, observation ``dY = b(X) dt + dV`` with
unit observation noise.  Projection filters evolve ``theta = (mean, sd)`` of a
Gaussian via ``d theta = A dt + B dY`` (Itô form), stepped with Euler-Maruyama.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BoundaryError, RenormalizationRequiredError
from .family import (
    DEFAULT_ORDER,
    GAUSSIAN,
    DensityFamily,
    FamilyGeometry,
    gauss_hermite,
    GaussianFamily,
    canonical_mode,
    family_metric,
)

ScalarFn = Callable[[np.ndarray, float], np.ndarray]

PROJECTIONS = ("stratonovich", "ito_vector", "ito_jet")
FILTERS = ("strat_l2", "strat_hell", "vec_l2", "vec_hell", "jet_l2", "jet_hell", "kalman", "ekf", "adf")
PROJECTION_FILTERS = {
    "strat_l2": ("stratonovich", "direct"),
    "strat_hell": ("stratonovich", "hellinger"),
    "vec_l2": ("ito_vector", "direct"),
    "vec_hell": ("ito_vector", "hellinger"),
    "jet_l2": ("ito_jet", "direct"),
    "jet_hell": ("ito_jet", "hellinger"),
}

_FD = 1e-5


def _fd1(fn, x, t):
    h = _FD * (1 + np.abs(x))
    return (fn(x + h, t) - fn(x - h, t)) / (2 * h)


def _fd2(fn, x, t):
    h = 1e-4 * (1 + np.abs(x))
    return (fn(x + h, t) - 2 * fn(x, t) + fn(x - h, t)) / h**2


@dataclass(frozen=True)
class FilterModel:
    """Scalar signal/observation model; derivative callables are optional."""

    drift: ScalarFn
    diffusion: ScalarFn
    observation: ScalarFn
    drift_dx: Optional[ScalarFn] = None
    diffusion_dx: Optional[ScalarFn] = None
    diffusion_dxx: Optional[ScalarFn] = None
    observation_dx: Optional[ScalarFn] = None
    name: str = "custom"

    def f(self, x, t=0.0):
        return np.asarray(self.drift(np.asarray(x, dtype=float), t), dtype=float) + 0.0 * x

    def df(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        return (self.drift_dx(x, t) if self.drift_dx else _fd1(self.drift, x, t)) + 0.0 * x

    def b(self, x, t=0.0):
        return np.asarray(self.observation(np.asarray(x, dtype=float), t), dtype=float) + 0.0 * x

    def db(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        return (self.observation_dx(x, t) if self.observation_dx else _fd1(self.observation, x, t)) + 0.0 * x

    def sigma(self, x, t=0.0):
        return np.asarray(self.diffusion(np.asarray(x, dtype=float), t), dtype=float) + 0.0 * x

    def sigma2_derivatives(self, x, t=0.0):
        """``(sigma^2, (sigma^2)', (sigma^2)'')`` at ``x``."""
        x = np.asarray(x, dtype=float)
        s = self.sigma(x, t)
        ds = self.diffusion_dx(x, t) if self.diffusion_dx else _fd1(self.diffusion, x, t)
        d2s = self.diffusion_dxx(x, t) if self.diffusion_dxx else _fd2(self.diffusion, x, t)
        return s**2, 2 * s * ds, 2 * (ds**2 + s * d2s)


def cubic_sensor(epsilon: float = 0.05, sigma: float = 1.0) -> FilterModel:
    """``dX = sigma dW``, ``b(x) = x + epsilon x^3``."""
    zero = lambda x, t: np.zeros_like(x)  # noqa: E731
    return FilterModel(
        drift=zero,
        diffusion=lambda x, t: np.full_like(x, sigma),
        observation=lambda x, t: x + epsilon * x**3,
        drift_dx=zero,
        diffusion_dx=zero,
        diffusion_dxx=zero,
        observation_dx=lambda x, t: 1 + 3 * epsilon * x**2,
        name=f"cubic_sensor(epsilon={epsilon})",
    )


@dataclass(frozen=True)
class LinearGaussianModel:
    """``dX = (f0 + alpha X) dt + sigma dW``, ``dY = (b0 + beta X) dt + dV``."""

    alpha: float = 0.0
    sigma: float = 1.0
    beta: float = 1.0
    f0: float = 0.0
    b0: float = 0.0

    def as_filter_model(self) -> FilterModel:
        zero = lambda x, t: np.zeros_like(x)  # noqa: E731
        return FilterModel(
            drift=lambda x, t: self.f0 + self.alpha * x,
            diffusion=lambda x, t: np.full_like(x, self.sigma),
            observation=lambda x, t: self.b0 + self.beta * x,
            drift_dx=lambda x, t: np.full_like(x, self.alpha),
            diffusion_dx=zero,
            diffusion_dxx=zero,
            observation_dx=lambda x, t: np.full_like(x, self.beta),
            name=f"linear(alpha={self.alpha}, sigma={self.sigma}, beta={self.beta})",
        )


def linear_model(beta: float = 1.0, sigma: float = 1.0, alpha: float = 0.0) -> FilterModel:
    return LinearGaussianModel(alpha, sigma, beta).as_filter_model()


def linearize(model: FilterModel, at: float = 0.0, t: float = 0.0) -> LinearGaussianModel:
    """First-order expansion of drift and observation about ``at``."""
    x = np.array(at, dtype=float)
    alpha, beta = float(model.df(x, t)), float(model.db(x, t))
    return LinearGaussianModel(
        alpha=alpha,
        sigma=float(model.sigma(x, t)),
        beta=beta,
        f0=float(model.f(x, t)) - alpha * at,
        b0=float(model.b(x, t)) - beta * at,
    )


@dataclass(frozen=True)
class FilterState:
    theta: np.ndarray
    time: float = 0.0


# ----------------------------------------------------------------------------
# Kushner-Stratonovich coefficient fields


def forward_operator(model: FilterModel, p, x, t: float = 0.0, dp=None, d2p=None):
    """``L* p = -(f p)' + 1/2 (sigma^2 p)''`` at ``x``.

    ``p`` is a callable; its first and second derivatives default to central
    differences.
    """
    x = np.asarray(x, dtype=float)
    pv = p(x)
    dpv = dp(x) if dp is not None else (p(x + 1e-5) - p(x - 1e-5)) / 2e-5
    d2pv = d2p(x) if d2p is not None else (p(x + 1e-4) - 2 * pv + p(x - 1e-4)) / 1e-8
    s2, ds2, d2s2 = model.sigma2_derivatives(x, t)
    return -model.df(x, t) * pv - model.f(x, t) * dpv + 0.5 * (d2s2 * pv + 2 * ds2 * dpv + s2 * d2pv)


def family_forward_operator(model: FilterModel, theta, x, t: float = 0.0, family: DensityFamily = GAUSSIAN):
    return forward_operator(
        model,
        lambda y: family.density(theta, y),
        x,
        t,
        dp=lambda y: family.density_dx(theta, y),
        d2p=lambda y: family.density_dxx(theta, y),
    )


@dataclass(frozen=True)
class KsCoefficients:
    """Drift and noise fields of ``d phi = mu dt + Sigma dY`` for one density.

    ``phi`` is the density itself (direct) or its square root (Hellinger);
    ``strat_drift`` is the drift of the Stratonovich form of the same equation.
    """

    mode: str
    drift: Callable[[np.ndarray], np.ndarray]
    noise: Callable[[np.ndarray], np.ndarray]
    strat_drift: Callable[[np.ndarray], np.ndarray]
    mean_obs: float
    mean_obs_sq: float


def _assemble(mode, p, q, Lp, b, Eb, Eb2):
    if mode == "direct":
        def drift(x):
            return Lp(x) - p(x) * (b(x) - Eb) * Eb

        def noise(x):
            return p(x) * (b(x) - Eb)

        def strat(x):
            return Lp(x) - 0.5 * p(x) * (b(x) ** 2 - Eb2)
    else:
        def drift(x):
            bx = b(x)
            return Lp(x) / (2 * q(x)) - 0.125 * q(x) * (bx - Eb) * (bx + 3 * Eb)

        def noise(x):
            return 0.5 * q(x) * (b(x) - Eb)

        def strat(x):
            return Lp(x) / (2 * q(x)) - 0.25 * q(x) * (b(x) ** 2 - Eb2)

    return KsCoefficients(mode, drift, noise, strat, Eb, Eb2)


def ks_coefficients(model: FilterModel, density, mode: str, t: float = 0.0, family: DensityFamily = GAUSSIAN,
                    order: int = DEFAULT_ORDER) -> KsCoefficients:
    """Coefficient fields for a family point ``theta`` or a grid density.

    Grid densities (objects with ``x`` and ``values``) use central differences
    and trapezoid expectations, and are evaluated by linear interpolation.
    """
    mode = canonical_mode(mode)
    b = lambda x: model.b(x, t)  # noqa: E731
    if hasattr(density, "values") and hasattr(density, "x"):
        xg, pg = np.asarray(density.x), np.asarray(density.values)
        mass = np.trapezoid(pg, xg)
        if abs(mass - 1) > 1e-6:
            raise RenormalizationRequiredError(f"grid density has mass {mass}")
        dx = xg[1] - xg[0]
        dp = np.gradient(pg, dx)
        d2p = np.zeros_like(pg)
        d2p[1:-1] = (pg[2:] - 2 * pg[1:-1] + pg[:-2]) / dx**2
        Lg = forward_operator(model, lambda y: np.interp(y, xg, pg), xg, t,
                              dp=lambda y: dp, d2p=lambda y: d2p)
        Eb = float(np.trapezoid(b(xg) * pg, xg))
        Eb2 = float(np.trapezoid(b(xg) ** 2 * pg, xg))
        p = lambda y: np.interp(y, xg, pg)  # noqa: E731
        q = lambda y: np.sqrt(np.interp(y, xg, pg))  # noqa: E731
        Lp = lambda y: np.interp(y, xg, Lg)  # noqa: E731
        return _assemble(mode, p, q, Lp, b, Eb, Eb2)

    theta = family.check(density)
    quad = gauss_hermite(order)
    center, spread = family.location_scale(theta)
    mass = quad.integrate(lambda y: family.density(theta, y), center, spread)
    if abs(mass - 1) > 1e-6:
        raise RenormalizationRequiredError(f"family density has mass {mass}")
    if isinstance(family, GaussianFamily):
        Eb = quad.expectation(b, *theta)
        Eb2 = quad.expectation(lambda y: b(y) ** 2, *theta)
    else:
        Eb = quad.integrate(lambda y: b(y) * family.density(theta, y), center, spread)
        Eb2 = quad.integrate(lambda y: b(y) ** 2 * family.density(theta, y), center, spread)
    return _assemble(
        mode,
        lambda y: family.density(theta, y),
        lambda y: family.sqrt_density(theta, y),
        lambda y: family_forward_operator(model, theta, y, t, family),
        b,
        Eb,
        Eb2,
    )


# ----------------------------------------------------------------------------
# Projection filter coefficients


def _geometry(model, theta, t, mode, family, order):
    geom = family_metric(theta, mode, family, order)
    ks = ks_coefficients(model, theta, mode, t, family, order)
    return geom, ks


def _diffusion_coefficient(geom: FamilyGeometry, ks: KsCoefficients) -> np.ndarray:
    # shared by all three projections
    return geom.chart_projection(ks.noise(geom.nodes))


def projection_diffusion(model: FilterModel, theta, t: float, mode: str, family: DensityFamily = GAUSSIAN,
                         order: int = DEFAULT_ORDER) -> np.ndarray:
    geom, ks = _geometry(model, theta, t, mode, family, order)
    return _diffusion_coefficient(geom, ks)


def _vector_drift(geom, ks, B):
    curvature = np.einsum("jkq,j,k->q", geom.second, B, B)
    return geom.chart_projection(ks.drift(geom.nodes) - 0.5 * curvature)


def _jet_drift(geom, ks, B):
    x = geom.nodes
    Sigma = ks.noise(x)
    pi = geom.dual_basis
    G, G_inv = geom.metric, geom.metric_inv
    second = geom.second
    term_mu = geom.inner(pi, ks.drift(x))
    # <d2 phi_ab, pi^i>
    d2_pi = np.einsum("abq,iq->iab", second * geom.weights, pi)
    term_tangential = -0.5 * np.einsum("iab,a,b->i", d2_pi, B, B)
    d2_sigma = geom.inner(second, Sigma)
    term_sigma = G_inv @ (d2_sigma @ B)
    term_normal = -G_inv @ np.einsum("eab,b,x,ex->a", d2_pi, B, B, G)
    return term_mu + term_tangential + term_sigma + term_normal


def projection_coefficients(model: FilterModel, theta, t: float, kind: str, mode: str,
                            family: DensityFamily = GAUSSIAN, order: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Itô-form ``(A, B)`` of the chart SDE ``d theta = A dt + B dY``."""
    theta = family.check(theta)
    geom, ks = _geometry(model, theta, t, mode, family, order)
    B = _diffusion_coefficient(geom, ks)
    if kind == "ito_vector":
        return _vector_drift(geom, ks, B), B
    if kind == "ito_jet":
        return _jet_drift(geom, ks, B), B
    if kind == "stratonovich":
        A_strat = geom.chart_projection(ks.strat_drift(geom.nodes))
        # Itô correction 1/2 (dB/dtheta) B from central differences of B
        dB = np.empty((len(theta), len(theta)))
        for j in range(len(theta)):
            h = 1e-6 * (1 + abs(theta[j]))
            e = np.zeros_like(theta)
            e[j] = h
            dB[:, j] = (projection_diffusion(model, theta + e, t, mode, family, order)
                        - projection_diffusion(model, theta - e, t, mode, family, order)) / (2 * h)
        return A_strat + 0.5 * dB @ B, B
    raise ValueError(f"unknown projection {kind!r}; expected one of {PROJECTIONS}")


def _guarded(step, theta, dt, dY):
    """Apply ``step``; on leaving the family retry once as two half steps."""
    new = step(theta, dt, dY)
    if new[-1] > 0 and np.all(np.isfinite(new)):
        return new
    half = step(theta, dt / 2, dY / 2)
    if half[-1] > 0:
        new = step(half, dt / 2, dY / 2)
        if new[-1] > 0 and np.all(np.isfinite(new)):
            return new
    raise BoundaryError(f"scale parameter left the family from theta={theta} (dt={dt}, dY={dY})")


def projection_filter_step(model: FilterModel, state: FilterState, dt: float, dY: float, kind: str, mode: str,
                           family: DensityFamily = GAUSSIAN, order: int = DEFAULT_ORDER) -> FilterState:
    if dt == 0:
        return state
    t = state.time

    def step(theta, h, dy):
        A, B = projection_coefficients(model, theta, t, kind, mode, family, order)
        return theta + A * h + B * dy

    return FilterState(_guarded(step, np.asarray(state.theta, dtype=float), dt, dY), t + dt)


def strat_filter_step(model, state, dt, dY, mode, **kw) -> FilterState:
    return projection_filter_step(model, state, dt, dY, "stratonovich", mode, **kw)


def ito_vector_filter_step(model, state, dt, dY, mode, **kw) -> FilterState:
    return projection_filter_step(model, state, dt, dY, "ito_vector", mode, **kw)


def ito_jet_filter_step(model, state, dt, dY, mode, **kw) -> FilterState:
    return projection_filter_step(model, state, dt, dY, "ito_jet", mode, **kw)


# ----------------------------------------------------------------------------
# Classical Gaussian filters on (mean, variance)


def _guarded_mv(step, mean, var, dt, dY):
    m1, v1 = step(mean, var, dt, dY)
    if v1 > 0 and np.isfinite(m1) and np.isfinite(v1):
        return m1, v1
    mh, vh = step(mean, var, dt / 2, dY / 2)
    if vh > 0:
        m1, v1 = step(mh, vh, dt / 2, dY / 2)
        if v1 > 0 and np.isfinite(m1):
            return m1, v1
    raise BoundaryError(f"variance left the family from ({mean}, {var})")


def kalman_step(lin: LinearGaussianModel, mean: float, variance: float, dt: float, dY: float) -> tuple[float, float]:
    """Euler step of the Kalman-Bucy filter with unit observation noise."""

    def step(m, P, h, dy):
        innovation = dy - (lin.b0 + lin.beta * m) * h
        return (m + (lin.f0 + lin.alpha * m) * h + P * lin.beta * innovation,
                P + (2 * lin.alpha * P + lin.sigma**2 - P**2 * lin.beta**2) * h)

    return _guarded_mv(step, float(mean), float(variance), dt, dY)


def ekf_step(model: FilterModel, mean: float, variance: float, dt: float, dY: float, t: float = 0.0):
    """Extended Kalman-Bucy step, linearizing drift and observation at the mean."""

    def step(m, P, h, dy):
        x = np.array(m)
        bp = float(model.db(x, t))
        innovation = dy - float(model.b(x, t)) * h
        s2 = float(model.sigma(x, t)) ** 2
        return (m + float(model.f(x, t)) * h + P * bp * innovation,
                P + (2 * float(model.df(x, t)) * P + s2 - P**2 * bp**2) * h)

    return _guarded_mv(step, float(mean), float(variance), dt, dY)


def adf_moments(model: FilterModel, mean: float, variance: float, t: float = 0.0, order: int = DEFAULT_ORDER):
    """Gaussian moments used by the assumed-density filter.

    Returns ``(E f, Cov(x, f), E sigma^2, E b, Cov(x, b), E[(x - m)^2 (b - E b)])``.
    """
    quad = gauss_hermite(order)
    sd = np.sqrt(variance)
    E = lambda g: quad.expectation(g, mean, sd)  # noqa: E731
    Ef = E(lambda x: model.f(x, t))
    Eb = E(lambda x: model.b(x, t))
    cov_f = E(lambda x: (x - mean) * model.f(x, t))
    cov_b = E(lambda x: (x - mean) * model.b(x, t))
    Es2 = E(lambda x: model.sigma(x, t) ** 2)
    third = E(lambda x: (x - mean) ** 2 * (model.b(x, t) - Eb))
    return Ef, cov_f, Es2, Eb, cov_b, third


def adf_mean_variance_coefficients(model, mean, variance, t=0.0, order=DEFAULT_ORDER):
    """Itô coefficients of ``d(mean, variance) = a dt + c dY`` for the Gaussian ADF."""
    Ef, cov_f, Es2, Eb, cov_b, third = adf_moments(model, mean, variance, t, order)
    drift = np.array([Ef - cov_b * Eb, 2 * cov_f + Es2 - cov_b**2 - third * Eb])
    noise = np.array([cov_b, third])
    return drift, noise


def gaussian_adf_step(model: FilterModel, mean: float, variance: float, dt: float, dY: float, t: float = 0.0,
                      order: int = DEFAULT_ORDER):
    """Moment-matching Gaussian filter: exact Itô moment equations closed at a Gaussian."""

    def step(m, P, h, dy):
        a, c = adf_mean_variance_coefficients(model, m, P, t, order)
        return m + a[0] * h + c[0] * dy, P + a[1] * h + c[1] * dy

    return _guarded_mv(step, float(mean), float(variance), dt, dY)


def adf_coefficients(model: FilterModel, theta, t: float = 0.0, order: int = DEFAULT_ORDER):
    """ADF written as ``d theta = A dt + B dY`` in (mean, sd) coordinates (Itô's lemma on sd = sqrt(var))."""
    mean, sd = GAUSSIAN.check(theta)
    a, c = adf_mean_variance_coefficients(model, mean, sd**2, t, order)
    A = np.array([a[0], a[1] / (2 * sd) - c[1] ** 2 / (8 * sd**3)])
    B = np.array([c[0], c[1] / (2 * sd)])
    return A, B


def ekf_coefficients(model: FilterModel, theta, t: float = 0.0):
    mean, sd = GAUSSIAN.check(theta)
    x = np.array(mean)
    P = sd**2
    bp = float(model.db(x, t))
    A_mean = float(model.f(x, t)) - P * bp * float(model.b(x, t))
    A_var = 2 * float(model.df(x, t)) * P + float(model.sigma(x, t)) ** 2 - P**2 * bp**2
    return np.array([A_mean, A_var / (2 * sd)]), np.array([P * bp, 0.0])


# ----------------------------------------------------------------------------
# Uniform (mean, sd) steppers


def make_stepper(name: str, model: FilterModel, order: int = DEFAULT_ORDER,
                 linearization: LinearGaussianModel | None = None):
    """``step(theta, t, dt, dY) -> theta`` for a roster name, theta = (mean, sd)."""
    if name in PROJECTION_FILTERS:
        kind, mode = PROJECTION_FILTERS[name]

        def step(theta, t, dt, dY):
            return projection_filter_step(model, FilterState(theta, t), dt, dY, kind, mode, order=order).theta

        return step
    if name == "kalman":
        lin = linearization or linearize(model)

        def classical(m, P, t, dt, dY):
            return kalman_step(lin, m, P, dt, dY)
    elif name == "ekf":
        def classical(m, P, t, dt, dY):
            return ekf_step(model, m, P, dt, dY, t)
    elif name == "adf":
        def classical(m, P, t, dt, dY):
            return gaussian_adf_step(model, m, P, dt, dY, t, order)
    else:
        raise ValueError(f"unknown filter {name!r}; expected one of {FILTERS}")

    def step(theta, t, dt, dY):
        m, P = classical(theta[0], theta[1] ** 2, t, dt, dY)
        return np.array([m, np.sqrt(P)])

    return step
