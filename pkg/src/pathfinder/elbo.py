"""Monte Carlo evidence lower bound for a candidate approximation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError


@dataclass
class ElboEstimate:
    """Sample ELBO: mean of log p - log q over the draws.

    ``value`` is -inf whenever any per-draw term is non-finite, which
    disqualifies the candidate without raising.
    """

    value: float
    per_draw: np.ndarray

    @property
    def num_draws(self) -> int:
        return len(self.per_draw)


def elbo_estimate(logp_vals, logq_vals) -> ElboEstimate:
    """ELBO from paired target and approximation log densities."""
    logp_vals = np.asarray(logp_vals, dtype=float)
    logq_vals = np.asarray(logq_vals, dtype=float)
    if logp_vals.shape != logq_vals.shape or logp_vals.ndim != 1 or logp_vals.size < 1:
        raise DimensionMismatchError(
            f"need equal-length vectors of at least one draw, "
            f"got {logp_vals.shape} and {logq_vals.shape}"
        )
    with np.errstate(invalid="ignore"):
        per_draw = logp_vals - logq_vals
    if np.all(np.isfinite(per_draw)):
        value = float(np.mean(per_draw))
    else:
        value = -np.inf
    return ElboEstimate(value=value, per_draw=per_draw)
