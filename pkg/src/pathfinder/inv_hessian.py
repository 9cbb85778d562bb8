"""Diagonal inverse-Hessian recovery and compact covariance factors.

Walks an optimization trajectory once to rebuild, for every iteration, the
per-coordinate diagonal seed of the inverse Hessian estimate together with
indicators of which position/gradient update pairs are usable.  The compact
factors beta and gamma of the low-rank-plus-diagonal covariance

    Sigma = diag(alpha) + beta @ gamma @ beta.T

are then assembled on demand for any iteration from the windowed pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularEError
from .lbfgs import Trajectory

# Pair acceptance threshold: s'z must exceed ALPHA_PAIR_EPS * ||z||^2, i.e.
# the gradient change may not be more than 1e12 times the position change
# along z.  This is deliberately stricter than the optimizer's own history
# gate and keeps the diagonal update well posed.
ALPHA_PAIR_EPS = 1e-12


@dataclass
class AlphaRecovery:
    """Per-iteration diagonal seeds and pair bookkeeping for a trajectory.

    All four arrays have one entry per optimization step: ``alphas[l]`` is the
    strictly positive diagonal in effect after step l+1, ``xis[l]`` flags
    whether that step's (s, z) pair was accepted, and rejected steps carry the
    previous alpha forward unchanged.
    """

    alphas: np.ndarray   # (L, N)
    xis: np.ndarray      # (L,) of {0, 1}
    s_list: np.ndarray   # (L, N) position updates
    z_list: np.ndarray   # (L, N) updates of the negative-log-density gradient

    @property
    def num_iters(self) -> int:
        return len(self.xis)


@dataclass
class CompactFactors:
    """Windowed pair matrices and the derived low-rank factors at one iteration.

    ``S`` and ``Z`` hold the most recent accepted pairs (latest in the last
    column), ``E`` is the upper-triangular matrix of S_i'Z_j products with
    strictly positive diagonal ``eta``, and ``beta``/``gamma`` give
    Sigma = diag(alpha) + beta gamma beta'.  Empty factors (rank 0) encode a
    purely diagonal covariance.
    """

    S: np.ndarray        # (N, J')
    Z: np.ndarray        # (N, J')
    E: np.ndarray        # (J', J') upper triangular
    eta: np.ndarray      # (J',)
    beta: np.ndarray     # (N, 2J')
    gamma: np.ndarray    # (2J', 2J')
    alpha: np.ndarray    # (N,)

    @property
    def num_pairs(self) -> int:
        return self.S.shape[1]

    @property
    def rank(self) -> int:
        return 2 * self.S.shape[1]


def alpha_recover(trajectory: Trajectory, history_size: int = 6) -> AlphaRecovery:
    """Recover per-coordinate diagonal inverse-Hessian seeds along a trajectory.

    The seed starts at the all-ones vector.  For each accepted pair the
    diagonal is refreshed coordinate-wise from the quadratic forms
    a = z'diag(alpha)z, b = z's, c = s'diag(alpha)^-1 s; pairs failing the
    curvature condition, or whose update would drive any component of alpha
    non-positive, are rejected and leave alpha untouched.

    ``history_size`` is carried in the signature for interface parity; the
    window is applied later, at factor-assembly time.
    """
    del history_size
    thetas = trajectory.thetas
    grads = trajectory.grads
    L = trajectory.num_iters
    N = thetas.shape[1]

    alphas = np.empty((L, N))
    xis = np.zeros(L, dtype=int)
    s_list = thetas[1:] - thetas[:-1]
    z_list = grads[:-1] - grads[1:]

    alpha = np.ones(N)
    for l in range(L):
        s = s_list[l]
        z = z_list[l]
        b = float(s @ z)
        if b > ALPHA_PAIR_EPS * float(z @ z):
            a = float(z @ (alpha * z))
            c = float(s @ (s / alpha))
            inv = a / (b * alpha) + (z * z) / b - (a * s * s) / (b * c * alpha * alpha)
            with np.errstate(divide="ignore", invalid="ignore"):
                candidate = 1.0 / inv
            if np.all(np.isfinite(candidate)) and np.all(candidate > 0.0):
                alpha = candidate
                xis[l] = 1
        alphas[l] = alpha
    return AlphaRecovery(alphas, xis, s_list, z_list)


def factors_from_pairs(S, Z, alpha) -> CompactFactors:
    """Build E, eta, beta, gamma for given pair matrices and diagonal seed."""
    S = np.asarray(S, dtype=float)
    Z = np.asarray(Z, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    N = alpha.size
    J = S.shape[1] if S.ndim == 2 else 0
    if J == 0:
        empty = np.zeros((N, 0))
        return CompactFactors(
            S=empty, Z=empty, E=np.zeros((0, 0)), eta=np.zeros(0),
            beta=np.zeros((N, 0)), gamma=np.zeros((0, 0)), alpha=alpha,
        )

    E = np.triu(S.T @ Z)
    eta = np.diag(E).copy()
    if not np.all(eta > 0.0):
        raise SingularEError("accepted pairs must have positive s'z on the diagonal")

    beta = np.concatenate([alpha[:, None] * Z, S], axis=1)
    einv = solve_triangular(E, np.eye(J), lower=False)
    inner = np.diag(eta) + Z.T @ (alpha[:, None] * Z)
    bottom_right = einv.T @ inner @ einv
    bottom_right = 0.5 * (bottom_right + bottom_right.T)
    gamma = np.zeros((2 * J, 2 * J))
    gamma[:J, J:] = -einv
    gamma[J:, :J] = -einv.T
    gamma[J:, J:] = bottom_right
    return CompactFactors(S=S, Z=Z, E=E, eta=eta, beta=beta, gamma=gamma, alpha=alpha)


def assemble_factors(recovery: AlphaRecovery, l: int, history_size: int) -> CompactFactors:
    """Compact factors for iteration ``l`` (1-based) of a recovered trajectory.

    Takes the last at-most-``history_size`` accepted pairs up to iteration l,
    additionally dropping the oldest pairs so the low-rank dimension 2J' never
    exceeds N (needed by the thin-QR step downstream).
    """
    if not 1 <= l <= recovery.num_iters:
        raise IndexError(f"iteration {l} outside 1..{recovery.num_iters}")
    accepted = [i for i in range(l) if recovery.xis[i] == 1]
    keep = accepted[-history_size:]
    N = recovery.alphas.shape[1]
    max_pairs = N // 2
    if len(keep) > max_pairs:
        keep = keep[len(keep) - max_pairs:]
    alpha = recovery.alphas[l - 1]
    if not keep:
        return factors_from_pairs(np.zeros((N, 0)), np.zeros((N, 0)), alpha)
    S = recovery.s_list[keep].T
    Z = recovery.z_list[keep].T
    return factors_from_pairs(S, Z, alpha)
