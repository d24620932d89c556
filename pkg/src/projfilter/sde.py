"""Itô and Stratonovich SDEs on R^r, calculus conversion and Euler-Maruyama paths.

Coefficient callables take ``(x, t)`` with ``x`` of shape ``(..., r)`` and must
broadcast over leading axes: ``drift`` returns ``(..., r)`` and ``diffusion``
returns ``(..., r, m)`` whose column ``alpha`` is the vector field driven by
``W^alpha``.  Batched evaluation is what lets the Monte Carlo probes run whole
ensembles in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, EvaluationError, ShapeError

Coefficient = Callable[[np.ndarray, float], np.ndarray]

FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class _SdeBase:
    dim: int
    num_noises: int
    drift: Coefficient
    diffusion: Coefficient
    # (x, t) -> (..., r, m, r) with [i, alpha, j] = d b^i_alpha / d x^j
    diffusion_jacobian: Optional[Coefficient] = None

    def __post_init__(self):
        if self.dim < 1 or self.num_noises < 1:
            raise ValueError("dim and num_noises must be positive")

    def evaluate(self, x, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Drift and diffusion at ``x`` with shape and finiteness checks."""
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.drift(x, t), dtype=float)
        b = np.asarray(self.diffusion(x, t), dtype=float)
        lead = x.shape[:-1]
        if a.shape != lead + (self.dim,):
            raise ShapeError(f"drift returned shape {a.shape}, expected {lead + (self.dim,)}")
        if b.shape != lead + (self.dim, self.num_noises):
            raise ShapeError(
                f"diffusion returned shape {b.shape}, expected {lead + (self.dim, self.num_noises)}"
            )
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise EvaluationError("non-finite coefficient", state=x)
        return a, b

    def diffusion_derivative(self, x, t: float = 0.0) -> np.ndarray:
        """``d b^i_alpha / d x^j`` as ``(..., r, m, r)``; central differences if no analytic form."""
        x = np.asarray(x, dtype=float)
        if self.diffusion_jacobian is not None:
            db = np.asarray(self.diffusion_jacobian(x, t), dtype=float)
        else:
            cols = []
            for j in range(self.dim):
                h = FD_REL_STEP * (1.0 + np.abs(x[..., j]))
                e = np.zeros_like(x)
                e[..., j] = h
                diff = np.asarray(self.diffusion(x + e, t)) - np.asarray(self.diffusion(x - e, t))
                cols.append(diff / (2.0 * h[..., None, None]))
            db = np.stack(cols, axis=-1)
        if not np.all(np.isfinite(db)):
            raise EvaluationError("non-finite diffusion derivative", state=x)
        return db


@dataclass(frozen=True)
class ItoSde(_SdeBase):
    """``dX = a(X, t) dt + b_alpha(X, t) dW^alpha`` (Itô)."""


@dataclass(frozen=True)
class StratonovichSde(_SdeBase):
    """``dX = abar(X, t) dt + b_alpha(X, t) o dW^alpha`` (Stratonovich)."""


def _noise_induced_drift(sde: _SdeBase, x, t) -> np.ndarray:
    # sum_alpha sum_j (d_j b^i_alpha) b^j_alpha
    b = np.asarray(sde.diffusion(np.asarray(x, dtype=float), t), dtype=float)
    db = sde.diffusion_derivative(x, t)
    return np.einsum("...iaj,...ja->...i", db, b)


def ito_to_stratonovich(sde: ItoSde) -> StratonovichSde:
    """Stratonovich form: ``abar = a - 1/2 sum (d_j b_alpha) b^j_alpha``; diffusion unchanged."""

    def drift(x, t):
        return np.asarray(sde.drift(x, t), dtype=float) - 0.5 * _noise_induced_drift(sde, x, t)

    return StratonovichSde(sde.dim, sde.num_noises, drift, sde.diffusion, sde.diffusion_jacobian)


def stratonovich_to_ito(sde: StratonovichSde) -> ItoSde:
    """Inverse of :func:`ito_to_stratonovich`."""

    def drift(x, t):
        return np.asarray(sde.drift(x, t), dtype=float) + 0.5 * _noise_induced_drift(sde, x, t)

    return ItoSde(sde.dim, sde.num_noises, drift, sde.diffusion, sde.diffusion_jacobian)


def noise_generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the substream ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def brownian_increments(seed: int, steps: int, num_noises: int, dt: float, stream: int = 0) -> np.ndarray:
    """``(steps, m)`` Brownian increments, one independent substream per component."""
    out = np.empty((steps, num_noises))
    scale = np.sqrt(dt)
    for alpha in range(num_noises):
        out[:, alpha] = scale * noise_generator(seed, stream, alpha).standard_normal(steps)
    return out


def euler_maruyama_step(sde: ItoSde, x, t: float, dt: float, dW, step: int | None = None) -> np.ndarray:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    a, b = sde.evaluate(x, t)
    x_new = np.asarray(x, dtype=float) + a * dt + np.einsum("...ia,...a->...i", b, np.asarray(dW, dtype=float))
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"non-finite state after step at t={t}", step=step, time=t)
    return x_new


@dataclass(frozen=True)
class SamplePath:
    times: np.ndarray  # (k+1,)
    states: np.ndarray  # (k+1, r)
    increments: np.ndarray  # (k, m)

    def __post_init__(self):
        if len(self.states) != len(self.times) or len(self.increments) != len(self.times) - 1:
            raise ShapeError("inconsistent path lengths")


def num_steps(horizon: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = int(round(horizon / dt))
    if k < 0 or abs(k * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"horizon {horizon} is not an integer number of steps of {dt}")
    return k


def replay(sde: ItoSde, x0, times, increments) -> np.ndarray:
    """States obtained by stepping ``sde`` through the stored increments."""
    times = np.asarray(times, dtype=float)
    states = [np.asarray(x0, dtype=float)]
    for k, dW in enumerate(increments):
        states.append(euler_maruyama_step(sde, states[-1], times[k], times[k + 1] - times[k], dW, step=k))
    return np.array(states)


def simulate_path(sde: ItoSde, x0, horizon: float, dt: float, seed: int, stream: int = 0) -> SamplePath:
    k = num_steps(horizon, dt)
    times = dt * np.arange(k + 1)
    increments = brownian_increments(seed, k, sde.num_noises, dt, stream)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sde.dim,):
        raise ShapeError(f"x0 has shape {x0.shape}, expected {(sde.dim,)}")
    return SamplePath(times, replay(sde, x0, times, increments), increments)
