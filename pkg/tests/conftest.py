"""Shared builders for the test suite."""

import math

import numpy as np
import pytest

from sbm_contagion import bundled
from sbm_contagion.model import Atom, ModelSpec


def matrix(entries: dict, R: int = 2, T: int = 2) -> np.ndarray:
    """``R x T`` matrix from ``{(r, alpha): value}`` with 1-based keys."""
    out = np.zeros((R, T))
    for (r, a), v in entries.items():
        out[r - 1, a - 1] = v
    return out


def debtor_dependent(p: float = 1 / 3, q: float = 0.0) -> ModelSpec:
    """Impact 2 between two type-1 institutions, 1 otherwise; capital 2."""
    t1 = matrix({(2, 1): 2, (1, 2): 2})
    t2 = matrix({(1, 1): 2, (1, 2): 2})
    return ModelSpec(2, 2, [Atom(p, 1, t1, t1, 2, q), Atom(1 - p, 2, t2, t2, 2, q)])


def creditor_only(p: float = 1 / 3, q: float = 0.0) -> ModelSpec:
    """Same skeleton, impact 2 w.p. ``p`` on any link into a type-1 institution."""
    out = matrix({(1, 1): 2, (2, 1): 2, (1, 2): 2})
    in1 = matrix({(1, 1): 2 * (1 - p), (1, 2): 2 * (1 - p), (2, 1): 2 * p, (2, 2): 2 * p})
    in2 = matrix({(1, 1): 2, (1, 2): 2})
    return ModelSpec(2, 2, [Atom(p, 1, in1, out, 2, q), Atom(1 - p, 2, in2, out, 2, q)])


def two_subsystems(w1: float, w2: float, w3: float, q: float = 0.01) -> ModelSpec:
    """Non-resilient type 1 (capital 1) coupled to resilient type 2 (capital 2)."""
    return ModelSpec(
        1,
        2,
        [
            Atom(0.5, 1, [[w1, w3]], [[2 * w1, w3]], 1, q),
            Atom(0.5, 2, [[w3, w2]], [[w3, 2 * w2]], 2, q),
        ],
    )


def single_type(w_in: float, w_out: float, capital, q: float = 0.0, R: int = 2) -> ModelSpec:
    return ModelSpec(R, 1, [Atom(1.0, 1, [[w_in]] * R, [[w_out]] * R, capital, q)])


def reduced_debtor_dependent(z):
    """Embed the reduced pair ``(z1, z2)`` into the full coordinates of :func:`debtor_dependent`."""
    z1, z2 = z
    full = np.zeros((2, 2, 2))
    full[1, 0, 0] = full[0, 1, 0] = z1
    full[0, 0, 1] = full[0, 1, 1] = z2
    return full


def reduced_creditor_only(z):
    z1, z2 = z
    full = np.zeros((2, 2, 2))
    full[0, 0, 0] = full[1, 0, 0] = full[0, 1, 0] = z1
    full[0, 0, 1] = full[1, 0, 1] = full[0, 1, 1] = z2
    return full


def random_spec(rng: np.random.Generator, R: int | None = None, T: int | None = None, atoms: int | None = None,
                zero_capital: bool = False, inf_capital: bool = True) -> ModelSpec:
    """Random finitary spec with small integer capitals and sparse weights."""
    R = R or int(rng.integers(1, 4))
    T = T or int(rng.integers(1, 4))
    J = atoms or int(rng.integers(1, 5))
    probs = rng.dirichlet(np.ones(J))
    out = []
    for j in range(J):
        w_in = rng.uniform(0, 2.5, (R, T)) * (rng.random((R, T)) < 0.7)
        w_out = rng.uniform(0, 2.5, (R, T)) * (rng.random((R, T)) < 0.7)
        lo = 0 if zero_capital else 1
        cap = int(rng.integers(lo, 5))
        if inf_capital and rng.random() < 0.1:
            cap = math.inf
        out.append(Atom(float(probs[j]), int(rng.integers(1, T + 1)), w_in, w_out, cap, 0.0, float(rng.uniform(0, 3))))
    return ModelSpec(R, T, out)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=bundled.names())
def bundled_name(request):
    return request.param


# -- acceptance report --------------------------------------------------------------

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
