from __future__ import annotations

import numpy as np
import pytest

from projfilter.geometry import Embedding, affine, circle, ellipse


def numeric_embedding(e: Embedding) -> Embedding:
    """The same parameterization with every derivative left to finite differences."""
    return Embedding(e.chart_dim, e.ambient_dim, e.phi)


def paraboloid() -> Embedding:
    """Graph of ``z = x^2 + xy - y^2 / 2`` in R^3 (a curved surface)."""

    def phi(th):
        u, v = th[..., 0], th[..., 1]
        return np.stack([u, v, u**2 + u * v - 0.5 * v**2], axis=-1)

    def d_phi(th):
        u, v = th[..., 0], th[..., 1]
        one, zero = np.ones_like(u), np.zeros_like(u)
        return np.stack(
            [np.stack([one, zero], -1), np.stack([zero, one], -1), np.stack([2 * u + v, u - v], -1)], axis=-2
        )

    def d2_phi(th):
        out = np.zeros(th.shape[:-1] + (3, 2, 2))
        out[..., 2, :, :] = [[2.0, 1.0], [1.0, -1.0]]
        return out

    return Embedding(2, 3, phi, d_phi, d2_phi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


EMBEDDINGS = {
    "circle": circle(),
    "ellipse": ellipse(2.0, 1.0),
    "line": affine([[1.0], [2.0]], [0.5, -1.0]),
    "paraboloid": paraboloid(),
}


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
