"""Queue parameterization and the truncated generator matrix.

The model is the single-server bulk-service queue: customers arrive one at a
time after independent Exp(lambda) gaps, and whenever at least ``m`` customers
are present a service completion (after an Exp(mu) time) removes exactly ``m``
of them at once.  The state is the number of waiting customers, so the
generator acts on sequences indexed by 0, 1, 2, ... with three bands:

* every state ``i`` feeds ``i + 1`` at rate lambda,
* states ``i >= m`` feed ``i - m`` at rate mu,
* the diagonal balances the row.

Everything downstream (polynomials, spectral functionals, oracles) is a
different route to the matrix exponential of this one operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveRate, TruncationTooSmall, ZeroBatchSize

__all__ = ["QueueParams", "GeneratorMatrix", "validate_params", "build_generator"]


@dataclass(frozen=True)
class QueueParams:
    """Arrival rate, batch-service rate, and batch size of the queue.

    Parameters
    ----------
    lam : float
        Arrival rate, must be positive and finite.
    mu : float
        Batch-service rate, must be positive and finite.
    m : int
        Batch size (number of customers removed per service), at least 1.
    """

    lam: float
    mu: float
    m: int

    @property
    def is_critical(self) -> bool:
        """Whether arrivals exactly balance the service drain (lam == m*mu)."""
        return math.isclose(self.lam, self.m * self.mu, rel_tol=1e-12)


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """A finite north-west section of the infinite generator.

    Attributes
    ----------
    dim : int
        Section size N.
    entries : numpy.ndarray
        N x N array with the three bands at offsets +1, 0 and -m.  The array
        is frozen (non-writeable) after construction; interior rows sum to
        zero exactly, the last row may leak probability (truncation).
    """

    dim: int
    entries: np.ndarray


def validate_params(p: QueueParams) -> None:
    """Check the model invariants, raising on the first violation.

    Raises
    ------
    NonPositiveRate
        If ``lam`` or ``mu`` is not a positive finite number.
    ZeroBatchSize
        If ``m < 1``.
    """
    if not (math.isfinite(p.lam) and p.lam > 0):
        raise NonPositiveRate(f"arrival rate must be positive and finite, got {p.lam}")
    if not (math.isfinite(p.mu) and p.mu > 0):
        raise NonPositiveRate(f"service rate must be positive and finite, got {p.mu}")
    if int(p.m) != p.m or p.m < 1:
        raise ZeroBatchSize(f"batch size must be an integer >= 1, got {p.m}")


def build_generator(p: QueueParams, N: int) -> GeneratorMatrix:
    """Assemble the N x N section of the generator.

    Row ``i < m`` holds (-lam, lam) on the diagonal/superdiagonal; row
    ``i >= m`` holds mu at column ``i - m``, ``-(lam + mu)`` on the diagonal
    and lam on the superdiagonal.  Bands that stick out of the section are
    simply dropped, which makes the last row's sum negative; oracles
    compensate by taking N large.

    Raises
    ------
    TruncationTooSmall
        If ``N < m + 2`` (no complete interior row would exist).
    """
    validate_params(p)
    if N < p.m + 2:
        raise TruncationTooSmall(f"need N >= m + 2 = {p.m + 2}, got {N}")
    lam, mu, m = p.lam, p.mu, p.m
    a = np.zeros((N, N))
    idx = np.arange(N)
    a[idx[:-1], idx[:-1] + 1] = lam
    a[idx[:m], idx[:m]] = -lam
    a[idx[m:], idx[m:]] = -(lam + mu)
    a[idx[m:], idx[m:] - m] = mu
    a.flags.writeable = False
    return GeneratorMatrix(dim=N, entries=a)
