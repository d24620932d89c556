"""Stratonovich, Itô-vector and Itô-jet projections of an ambient SDE onto a chart.

Each projection returns a :class:`ProjectedSde` whose ``chart_sde`` is an Itô
SDE in chart coordinates (the Stratonovich projection is converted to Itô form
so that every projection can be stepped with the same integrator).  The
diffusion coefficient is produced by :func:`project_diffusion` for all three
kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FormulaConsistencyError, ProbeInvalidError
from .geometry import (
    Embedding,
    metric_projection_batch,
    tangent_projector,
)
from .sde import ItoSde, StratonovichSde, ito_to_stratonovich, noise_generator, stratonovich_to_ito

KINDS = ("stratonovich", "ito_vector", "ito_jet")
CRITERIA = ("strong_ambient", "weak_ambient", "strong_metric_projection")


@dataclass(frozen=True)
class ProjectedSde:
    kind: str
    chart_sde: ItoSde
    embedding: Embedding


def _noise_metric(m: int, noise_metric) -> np.ndarray:
    if noise_metric is None:
        return np.eye(m)
    g = np.asarray(noise_metric, dtype=float)
    if g.shape != (m, m) or not np.allclose(g, g.T) or np.linalg.eigvalsh(g)[0] <= 0:
        raise ValueError("noise metric must be a symmetric positive-definite m x m matrix")
    return g


def project_diffusion(sde: ItoSde, e: Embedding, theta, t: float = 0.0) -> np.ndarray:
    """Chart diffusion ``B_alpha = psi_* Pi b_alpha``, shape ``(..., n, m)``."""
    theta = np.asarray(theta, dtype=float)
    _, b = sde.evaluate(e.point(theta), t)
    return tangent_projector(e, theta) @ b


def _curvature_term(T, B, g):
    # sum_{alpha beta} g^{alpha beta} (d^2 phi)(B_alpha, B_beta), an R^r vector
    return np.einsum("...gij,...ia,...jb,ab->...g", T, B, B, g)


def stratonovich_projection(sde: ItoSde, e: Embedding) -> ProjectedSde:
    strat = ito_to_stratonovich(sde)

    def drift(theta, t):
        abar, _ = strat.evaluate(e.point(theta), t)
        return np.einsum("...ig,...g->...i", tangent_projector(e, theta), abar)

    def diffusion(theta, t):
        return project_diffusion(sde, e, theta, t)

    chart = StratonovichSde(e.chart_dim, sde.num_noises, drift, diffusion)
    return ProjectedSde("stratonovich", stratonovich_to_ito(chart), e)


def ito_vector_drift(sde: ItoSde, e: Embedding, theta, t: float = 0.0, noise_metric=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = _noise_metric(sde.num_noises, noise_metric)
    a, b = sde.evaluate(e.point(theta), t)
    P = tangent_projector(e, theta)
    B = P @ b
    corrected = a - 0.5 * _curvature_term(e.second_derivative(theta), B, g)
    return np.einsum("...ig,...g->...i", P, corrected)


def ito_vector_projection(sde: ItoSde, e: Embedding, noise_metric=None) -> ProjectedSde:
    def drift(theta, t):
        return ito_vector_drift(sde, e, theta, t, noise_metric)

    def diffusion(theta, t):
        return project_diffusion(sde, e, theta, t)

    return ProjectedSde("ito_vector", ItoSde(e.chart_dim, sde.num_noises, drift, diffusion), e)


def ito_jet_drift(sde: ItoSde, e: Embedding, theta, t: float = 0.0, noise_metric=None) -> np.ndarray:
    """Closed-form Itô-jet drift.

    ``A = Pi a - 1/2 Pi T(B, B) + h^{-1} <T(., B), b> - h^{-1} <T(., B), J B>``
    with every noise pair contracted against the noise metric; the last two
    terms together pair the curvature with the normal part of ``b``.
    """
    theta = np.asarray(theta, dtype=float)
    g = _noise_metric(sde.num_noises, noise_metric)
    a, b = sde.evaluate(e.point(theta), t)
    J = e.jacobian(theta)
    P = tangent_projector(e, theta)
    h_inv = np.linalg.inv(np.einsum("...gi,...gj->...ij", J, J))
    T = e.second_derivative(theta)
    B = P @ b
    JB = J @ B
    first = np.einsum("...ig,...g->...i", P, a)
    tangential = -0.5 * np.einsum("...ig,...g->...i", P, _curvature_term(T, B, g))
    along_b = np.einsum("...gkj,...ja,...gb,ab->...k", T, B, b, g)
    along_jb = np.einsum("...gkj,...ja,...gb,ab->...k", T, B, JB, g)
    normal = np.einsum("...ik,...k->...i", h_inv, along_b - along_jb)
    return first + tangential + normal


def ito_jet_drift_fd(sde: ItoSde, e: Embedding, theta, t: float = 0.0, noise_metric=None, step: float = 1e-3):
    """Itô-jet drift from finite differences of the closest-point chart map.

    ``A = D pi(a) + 1/2 sum g^{ab} D^2 pi(b_a, b_b)`` with both derivatives taken
    by central differences of :func:`metric_projection_batch` around ``phi(theta)``.
    Only unbatched ``theta`` is supported.
    """
    theta = np.asarray(theta, dtype=float)
    g = _noise_metric(sde.num_noises, noise_metric)
    x0 = e.point(theta)
    a, b = sde.evaluate(x0, t)
    # g = L L^T turns the double sum into a sum of squares of columns of b L
    cols = (b @ np.linalg.cholesky(g)).T

    def chart_of(x):
        th, ok = metric_projection_batch(e, x, theta, tol=1e-13)
        if not np.all(ok):
            raise FormulaConsistencyError("closest-point map unavailable for finite differences")
        return th

    out = np.zeros(e.chart_dim)
    na = np.linalg.norm(a)
    if na > 0:
        s = step / na
        out += (chart_of(x0 + s * a) - chart_of(x0 - s * a)) / (2 * s)
    for c in cols:
        nc = np.linalg.norm(c)
        if nc == 0:
            continue
        s = step / nc
        plus, minus = chart_of(x0 + s * c), chart_of(x0 - s * c)
        out += 0.5 * (plus - 2 * theta + minus) / s**2
    return out


def check_ito_jet_consistency(sde: ItoSde, e: Embedding, theta, t: float = 0.0, tol: float = 1e-4, noise_metric=None):
    """Compare the closed form with the finite-difference path; raise on disagreement."""
    closed = ito_jet_drift(sde, e, theta, t, noise_metric)
    fd = ito_jet_drift_fd(sde, e, theta, t, noise_metric)
    if np.max(np.abs(closed - fd)) > tol:
        raise FormulaConsistencyError(f"Itô-jet drift mismatch: closed form {closed}, finite differences {fd}")
    return closed, fd


def ito_jet_projection(sde: ItoSde, e: Embedding, noise_metric=None) -> ProjectedSde:
    def drift(theta, t):
        return ito_jet_drift(sde, e, theta, t, noise_metric)

    def diffusion(theta, t):
        return project_diffusion(sde, e, theta, t)

    return ProjectedSde("ito_jet", ItoSde(e.chart_dim, sde.num_noises, drift, diffusion), e)


def project(sde: ItoSde, e: Embedding, kind: str) -> ProjectedSde:
    if kind == "stratonovich":
        return stratonovich_projection(sde, e)
    if kind == "ito_vector":
        return ito_vector_projection(sde, e)
    if kind == "ito_jet":
        return ito_jet_projection(sde, e)
    raise ValueError(f"unknown projection kind {kind!r}; expected one of {KINDS}")


# ----------------------------------------------------------------------------
# Optimality-order probes

DEGENERATE_LEVEL = 1e-24


@dataclass(frozen=True)
class ProbeResult:
    kind: str
    criterion: str
    horizons: np.ndarray
    errors: np.ndarray
    std_errors: np.ndarray
    discarded: np.ndarray
    trials: int
    slope: float
    degenerate: bool
    extra: dict = field(default_factory=dict)


def fit_loglog_slope(horizons, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(horizon)``."""
    return float(np.polyfit(np.log(horizons), np.log(errors), 1)[0])


def _simulate_horizon(sde, proj, e, theta0, t_end, trials, substeps, seed, key, chunk, antithetic):
    n_chunks = -(-trials // chunk)
    m = sde.num_noises
    sums = {"diff": np.zeros(e.ambient_dim), "diff2": np.zeros(e.ambient_dim), "sq": 0.0, "sq2": 0.0, "mp": 0.0, "mp2": 0.0}
    kept = 0
    discarded = 0
    dt = t_end / substeps
    for c in range(n_chunks):
        size = min(chunk, trials - c * chunk)
        rng = noise_generator(seed, key, c)
        half = (size + 1) // 2 if antithetic else size
        z = rng.standard_normal((substeps, half, m))
        if antithetic:
            z = np.concatenate([z, -z], axis=1)[:, :size]
        dW = np.sqrt(dt) * z
        X = np.broadcast_to(e.point(theta0), (size, e.ambient_dim)).copy()
        Y = np.broadcast_to(np.asarray(theta0, dtype=float), (size, e.chart_dim)).copy()
        s = 0.0
        with np.errstate(all="ignore"):
            for k in range(substeps):
                a, b = sde.drift(X, s), sde.diffusion(X, s)
                A, B = proj.chart_sde.drift(Y, s), proj.chart_sde.diffusion(Y, s)
                X = X + a * dt + np.einsum("...ia,...a->...i", b, dW[k])
                Y = Y + A * dt + np.einsum("...ia,...a->...i", B, dW[k])
                s += dt
            theta_star, ok = metric_projection_batch(e, X, Y)
        ok &= np.all(np.isfinite(X), axis=-1) & np.all(np.isfinite(Y), axis=-1)
        discarded += int(size - np.count_nonzero(ok))
        X, Y, theta_star = X[ok], Y[ok], theta_star[ok]
        phiY = e.point(Y)
        d = X - phiY
        sq = np.einsum("...g,...g->...", d, d)
        mp_vec = e.point(theta_star) - phiY
        mp = np.einsum("...g,...g->...", mp_vec, mp_vec)
        sums["diff"] += d.sum(axis=0)
        sums["diff2"] += (d**2).sum(axis=0)
        sums["sq"] += sq.sum()
        sums["sq2"] += (sq**2).sum()
        sums["mp"] += mp.sum()
        sums["mp2"] += (mp**2).sum()
        kept += len(sq)
    return sums, kept, discarded


def order_probe_all(
    sde: ItoSde,
    e: Embedding,
    kind: str,
    horizons: Sequence[float],
    trials: int,
    seed: int,
    theta0,
    substeps: int = 16,
    chunk: int = 25_000,
    antithetic: bool = True,
    max_discard_fraction: float = 0.01,
) -> dict[str, ProbeResult]:
    """Monte Carlo error-versus-horizon tables for every criterion at once.

    The ambient SDE and the projected chart SDE are driven by the same Brownian
    increments (synchronous coupling), each with ``substeps`` Euler steps per
    horizon, so the discretization error scales with the horizon too.  Paths
    whose closest-point search fails are dropped and counted.  With
    ``antithetic`` each normal draw is paired with its negation, which cancels
    the odd-order noise in the weak (mean-difference) criterion; the reported
    standard errors ignore the pairing and are conservative there.
    """
    proj = project(sde, e, kind)
    horizons = np.asarray(sorted(horizons, reverse=True), dtype=float)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    table = {c: ([], []) for c in CRITERIA}
    weak_norm = []
    discards = []
    for k, t_end in enumerate(horizons):
        sums, kept, discarded = _simulate_horizon(
            sde, proj, e, theta0, t_end, trials, substeps, seed, k, chunk, antithetic
        )
        if discarded > max_discard_fraction * trials:
            raise ProbeInvalidError(
                f"{discarded} of {trials} paths left the tubular neighbourhood at horizon {t_end}"
            )
        discards.append(discarded)
        mean_d = sums["diff"] / kept
        var_d = np.maximum(sums["diff2"] / kept - mean_d**2, 0.0)
        se_mean = np.sqrt(var_d / kept)
        for crit, total, total2 in (("strong_ambient", sums["sq"], sums["sq2"]), ("strong_metric_projection", sums["mp"], sums["mp2"])):
            mean = total / kept
            table[crit][0].append(mean)
            table[crit][1].append(np.sqrt(max(total2 / kept - mean**2, 0.0) / kept))
        weak = float(mean_d @ mean_d)
        table["weak_ambient"][0].append(weak)
        table["weak_ambient"][1].append(float(2 * np.sqrt(np.sum((mean_d * se_mean) ** 2)) + se_mean @ se_mean))
        weak_norm.append(np.sqrt(weak))

    results = {}
    for crit in CRITERIA:
        errors = np.array(table[crit][0])
        degenerate = bool(np.all(errors <= DEGENERATE_LEVEL))
        slope = float("nan") if degenerate else fit_loglog_slope(horizons, np.maximum(errors, 1e-300))
        extra = {}
        if crit == "weak_ambient":
            norm = np.array(weak_norm)
            extra["norm_errors"] = norm
            extra["norm_slope"] = float("nan") if degenerate else fit_loglog_slope(horizons, np.maximum(norm, 1e-300))
        results[crit] = ProbeResult(
            kind, crit, horizons, errors, np.array(table[crit][1]), np.array(discards), trials, slope, degenerate, extra
        )
    return results


def order_probe(sde: ItoSde, e: Embedding, kind: str, criterion: str, horizons, trials: int, seed: int, theta0, **kwargs) -> ProbeResult:
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    return order_probe_all(sde, e, kind, horizons, trials, seed, theta0, **kwargs)[criterion]


def circle_test_sde() -> ItoSde:
    """Planar Brownian motion (``a = 0``, ``b = Id``), the standard probe SDE."""

    def drift(x, t):
        return np.zeros_like(x)

    def diffusion(x, t):
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def jac(x, t):
        return np.zeros(x.shape[:-1] + (2, 2, 2))

    return ItoSde(2, 2, drift, diffusion, jac)
