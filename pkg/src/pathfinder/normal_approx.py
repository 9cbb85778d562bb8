"""Factored normal approximations: build, sample, and evaluate in O(NJ) per draw.

The covariance Sigma = diag(alpha) + beta gamma beta' is handled through a
thin QR factorization of diag(alpha)^(-1/2) beta and a small Cholesky factor,
giving Sigma = T T' with T = diag(alpha^(1/2)) [Q Ltilde  P].  The orthogonal
complement P is never materialized: draws use the identity
Q (Ltilde - I) (Q'u) + u and log densities use
||P'w||^2 = ||w||^2 - ||Q'w||^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CholeskyFailError
from .inv_hessian import CompactFactors
from .targets import LOG_2PI

# One re-orthogonalization pass is applied if the thin QR loses orthonormality
# beyond this bound (possible for ill-conditioned beta).
QR_ORTHO_TOL = 1e-8


@dataclass
class FactoredNormal:
    """Normal approximation N(mu, Sigma) in factored form.

    ``qmat`` has orthonormal columns, ``lt`` is the lower-triangular Cholesky
    factor of the small inner matrix, and ``logdet`` is the log determinant of
    Sigma.  ``rank == 0`` encodes a purely diagonal covariance.
    """

    mu: np.ndarray        # (N,)
    alpha: np.ndarray     # (N,) strictly positive diagonal
    qmat: np.ndarray      # (N, 2J')
    lt: np.ndarray        # (2J', 2J') lower triangular
    logdet: float

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def rank(self) -> int:
        return self.qmat.shape[1]


@dataclass
class DrawBatch:
    """Draws from a FactoredNormal with their log densities under it."""

    draws: np.ndarray        # (M, N)
    logq: np.ndarray         # (M,)
    u_norms_sq: np.ndarray   # (M,) squared norms of the standard-normal inputs


def build(factors: CompactFactors, theta, grad) -> FactoredNormal:
    """Construct the approximation located at a trajectory point.

    ``theta`` and ``grad`` are the trajectory position and its log-density
    gradient; the mean takes one quasi-Newton step from there.  Raises
    CholeskyFailError when the inner matrix is not positive definite, which
    callers treat as a failed candidate rather than a fatal error.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    alpha = factors.alpha
    logdet_diag = float(np.sum(np.log(alpha)))

    if factors.num_pairs == 0:
        mu = theta + alpha * grad
        return FactoredNormal(
            mu=mu, alpha=alpha, qmat=np.zeros((alpha.size, 0)),
            lt=np.zeros((0, 0)), logdet=logdet_diag,
        )

    beta = factors.beta
    gamma = factors.gamma
    inv_sqrt_alpha = 1.0 / np.sqrt(alpha)
    qmat, rmat = np.linalg.qr(inv_sqrt_alpha[:, None] * beta, mode="reduced")
    ortho_err = np.abs(qmat.T @ qmat - np.eye(qmat.shape[1])).max()
    if ortho_err > QR_ORTHO_TOL:
        qmat, r2 = np.linalg.qr(qmat, mode="reduced")
        rmat = r2 @ rmat

    inner = np.eye(rmat.shape[0]) + rmat @ gamma @ rmat.T
    inner = 0.5 * (inner + inner.T)
    try:
        lt = np.linalg.cholesky(inner)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailError("inner matrix not positive definite") from exc

    logdet = logdet_diag + 2.0 * float(np.sum(np.log(np.diag(lt))))
    mu = theta + alpha * grad + beta @ (gamma @ (beta.T @ grad))
    return FactoredNormal(mu=mu, alpha=alpha, qmat=qmat, lt=lt, logdet=logdet)


def sample(approx: FactoredNormal, num_draws: int, rng: np.random.Generator) -> DrawBatch:
    """Draw ``num_draws`` samples, one fresh standard-normal N-vector each.

    The log density of each draw follows directly from the squared norm of
    its standard-normal input, so no solve is needed here.
    """
    if num_draws < 1:
        raise ValueError("num_draws must be >= 1")
    n = approx.dim
    u = rng.standard_normal((num_draws, n))
    u_norms_sq = np.einsum("ij,ij->i", u, u)
    if approx.rank > 0:
        qtu = u @ approx.qmat                        # (M, 2J')
        x = u + (qtu @ (approx.lt - np.eye(approx.rank)).T) @ approx.qmat.T
    else:
        x = u
    draws = approx.mu + np.sqrt(approx.alpha) * x
    logq = -0.5 * (approx.logdet + u_norms_sq + n * LOG_2PI)
    return DrawBatch(draws=draws, logq=logq, u_norms_sq=u_norms_sq)


def eval_logq(approx: FactoredNormal, x) -> float:
    """Exact log density of ``x`` under the approximation, in O(NJ + J^2)."""
    x = np.asarray(x, dtype=float)
    w = (x - approx.mu) / np.sqrt(approx.alpha)
    if approx.rank > 0:
        qtw = approx.qmat.T @ w
        v = solve_triangular(approx.lt, qtw, lower=True)
        mahal = float(v @ v) + float(w @ w) - float(qtw @ qtw)
    else:
        mahal = float(w @ w)
    return -0.5 * (approx.logdet + mahal + approx.dim * LOG_2PI)
