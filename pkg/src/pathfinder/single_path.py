"""Single-path driver: optimize, score candidate approximations, draw from the best.

One run optimizes the log density from a random initialization, rebuilds a
normal approximation at every trajectory point, scores each by Monte Carlo
ELBO (embarrassingly parallel across points), and returns draws from the
ELBO-maximizing approximation.  Runs never raise on pathological geometry:
a run that cannot produce any valid approximation returns its last trajectory
point as a single draw flagged with +inf approximation log density, which
guarantees zero importance weight downstream.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import normal_approx
from .elbo import elbo_estimate
from .errors import AllFailedError, CholeskyFailError, NonFiniteError, SingularEError
from .inv_hessian import alpha_recover, assemble_factors
from .lbfgs import LbfgsOptions, Termination, optimize
from .seeding import STREAM_CANDIDATE, STREAM_FINAL, STREAM_INIT, substream
from .targets import CounterView


@dataclass(frozen=True)
class PathfinderOptions:
    """Tuning parameters for one optimization path.

    ``max_iters``, ``rel_tol``, and ``history_size`` are shared with the
    optimizer and pushed into the nested L-BFGS options; the remaining L-BFGS
    knobs (Wolfe bounds, pair threshold) live in ``lbfgs``.
    """

    max_iters: int = 1000
    rel_tol: float = 1e-13
    history_size: int = 6
    elbo_draws: int = 5
    num_draws: int = 100
    init_radius: float = 2.0
    lbfgs: LbfgsOptions = field(default_factory=LbfgsOptions)

    def __post_init__(self):
        if min(self.max_iters, self.history_size, self.elbo_draws, self.num_draws) < 1:
            raise ValueError("max_iters, history_size, elbo_draws, num_draws must be >= 1")
        if self.rel_tol <= 0 or self.init_radius <= 0:
            raise ValueError("rel_tol and init_radius must be positive")
        object.__setattr__(
            self,
            "lbfgs",
            dataclasses.replace(
                self.lbfgs,
                history_size=self.history_size,
                rel_tol=self.rel_tol,
                max_iters=self.max_iters,
            ),
        )


@dataclass
class PathfinderRun:
    """Output of one path.

    A failed run carries exactly one draw (the last trajectory point) with
    ``logq == +inf``; otherwise ``l_star`` is the 1-based trajectory iteration
    whose approximation won the ELBO argmax.  ``logp`` stays None until a
    pooling step evaluates target log densities for the draws.
    """

    draws: np.ndarray
    logq: np.ndarray
    elbo_trace: np.ndarray
    l_star: Optional[int]
    failed: bool
    n_logp: int
    n_grad: int
    num_iters: int
    termination: Optional[Termination]
    scored_candidates: int
    lbfgs_n_logp: int
    lbfgs_n_grad: int
    logp: Optional[np.ndarray] = None
    approx: Optional[normal_approx.FactoredNormal] = None

    @property
    def counters(self):
        return self.n_logp, self.n_grad


def select_argmax(elbo_trace) -> int:
    """1-based index of the largest finite ELBO, ties broken toward smaller index.

    Raises AllFailedError when no entry is finite.
    """
    trace = np.asarray(elbo_trace, dtype=float)
    finite = np.isfinite(trace)
    if trace.size == 0 or not np.any(finite):
        raise AllFailedError("no candidate produced a finite ELBO")
    masked = np.where(finite, trace, -np.inf)
    return int(np.argmax(masked)) + 1


def _score_candidate(tally, recovery, trajectory, l, opts, seed, path_index):
    """ELBO of the candidate at iteration l, or -inf if it fails anywhere."""
    try:
        factors = assemble_factors(recovery, l, opts.history_size)
        approx = normal_approx.build(factors, trajectory.thetas[l], trajectory.grads[l])
    except (CholeskyFailError, SingularEError):
        return -np.inf, False
    if not (np.isfinite(approx.logdet) and np.all(np.isfinite(approx.mu))):
        return -np.inf, False
    rng = substream(seed, path_index, STREAM_CANDIDATE, l)
    batch = normal_approx.sample(approx, opts.elbo_draws, rng)
    logp_vals = tally.logp_many(batch.draws)
    return elbo_estimate(logp_vals, batch.logq).value, True


def _failed_run(last_point, elbo_trace, tally, num_iters, termination,
                scored=0, lbfgs_n_logp=None, lbfgs_n_grad=None):
    return PathfinderRun(
        draws=np.asarray(last_point, dtype=float)[None, :],
        logq=np.array([np.inf]),
        elbo_trace=np.asarray(elbo_trace, dtype=float),
        l_star=None,
        failed=True,
        n_logp=tally.n_logp,
        n_grad=tally.n_grad,
        num_iters=num_iters,
        termination=termination,
        scored_candidates=scored,
        lbfgs_n_logp=tally.n_logp if lbfgs_n_logp is None else lbfgs_n_logp,
        lbfgs_n_grad=tally.n_grad if lbfgs_n_grad is None else lbfgs_n_grad,
        logp=None,
    )


def run_single(target, opts: PathfinderOptions, seed: int, path_index: int = 0,
               workers: int = 1) -> PathfinderRun:
    """Run one path against ``target`` under the given master seed.

    All randomness comes from substreams keyed by (path_index, purpose,
    candidate index), so results are bit-identical for a fixed
    (target, opts, seed, path_index) regardless of ``workers``.
    """
    tally = CounterView(target)
    rng_init = substream(seed, path_index, STREAM_INIT)
    theta0 = rng_init.uniform(-opts.init_radius, opts.init_radius, tally.dim)

    try:
        trajectory = optimize(tally, theta0, opts.lbfgs)
    except NonFiniteError:
        return _failed_run(theta0, [], tally, 0, None)

    num_iters = trajectory.num_iters
    if num_iters == 0:
        return _failed_run(trajectory.thetas[-1], [], tally, 0, trajectory.termination)

    lbfgs_n_logp = tally.n_logp
    lbfgs_n_grad = tally.n_grad

    recovery = alpha_recover(trajectory, opts.history_size)
    candidates = range(1, num_iters + 1)

    def score(l):
        return _score_candidate(tally, recovery, trajectory, l, opts, seed, path_index)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, candidates))
    else:
        results = [score(l) for l in candidates]

    elbo_trace = np.array([value for value, _ in results])
    scored = sum(1 for _, sampled in results if sampled)

    try:
        l_star = select_argmax(elbo_trace)
    except AllFailedError:
        return _failed_run(trajectory.thetas[-1], elbo_trace, tally,
                           num_iters, trajectory.termination,
                           scored, lbfgs_n_logp, lbfgs_n_grad)

    # Rebuild the winner and draw a fresh batch of output draws.
    factors = assemble_factors(recovery, l_star, opts.history_size)
    approx = normal_approx.build(factors, trajectory.thetas[l_star], trajectory.grads[l_star])
    rng_final = substream(seed, path_index, STREAM_FINAL)
    batch = normal_approx.sample(approx, opts.num_draws, rng_final)

    return PathfinderRun(
        draws=batch.draws,
        logq=batch.logq,
        elbo_trace=elbo_trace,
        l_star=l_star,
        failed=False,
        n_logp=tally.n_logp,
        n_grad=tally.n_grad,
        num_iters=num_iters,
        termination=trajectory.termination,
        scored_candidates=scored,
        lbfgs_n_logp=lbfgs_n_logp,
        lbfgs_n_grad=lbfgs_n_grad,
        approx=approx,
    )
