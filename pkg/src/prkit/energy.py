"""The regularized distribution q(x) proportional to p(x) * exp(alpha * f(x)).

Closing the constraint term against the base model gives an energy-tilted
distribution whose negative energy is alpha*f(x) + log p(x). This module
provides the exact table and partition function on enumerable spaces, the
self-normalized importance-sampling estimators that replace them
elsewhere (proposal = the base model itself, weights exp(alpha*f)),
sampling-importance-resampling for diagnostics, and the variational
objective KL(q'||p) - alpha*E_q'[f] whose minimizer is the tilted
distribution with optimal value -log Z.

All weight handling happens in the log domain with a max shift, safe for
|alpha*f| up to 700. Estimators may split their draws into chunks with
independent substreams; chunk results merge in plan order, so a threaded
evaluation is bit-identical to the serial one for the same (seed, chunks).
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .models import is_explicit
from .spaces import DEFAULT_ENUMERATION_CAP, enumerate_space

logger = logging.getLogger(__name__)

ESS_WARN_FRACTION = 0.05


class EstimatorDegenerateError(RuntimeError):
    """All importance weights underflowed to zero."""


@dataclass(frozen=True, eq=False)
class EnergyDistribution:
    """Binding of a base model, a constraint, a weight, and one instance's
    side information. Never materialized except through exact enumeration
    or weighted samples."""

    model: object
    constraint: object
    alpha: float
    side_info: object = None
    context: object = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if not self.alpha > 0:
            raise ValueError("constraint weight alpha must be positive")

    def log_tilt(self, xs) -> np.ndarray:
        """alpha * f(x) for a batch of samples, the log importance weight."""
        return self.alpha * np.asarray(
            self.constraint.evaluate_batch(xs, self.side_info), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ISEstimate:
    value: object          # float, or ndarray for vector-valued h
    stderr: object
    ess: float
    n: int


def _require_explicit(q: EnergyDistribution):
    if not is_explicit(q.model):
        raise TypeError("exact computations need an explicit base model")


def _log_scores(q: EnergyDistribution, space, cap) -> tuple:
    _require_explicit(q)
    elements = enumerate_space(space, cap)
    log_p = q.model.log_prob_batch(elements, q.context)
    return elements, log_p + q.log_tilt(elements)


def exact_q(q: EnergyDistribution, space, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Exact probability table of the tilted distribution, in enumeration order."""
    _, scores = _log_scores(q, space, cap)
    return np.exp(scores - logsumexp(scores))


def exact_partition(q: EnergyDistribution, space,
                    cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Z = sum_x p(x) exp(alpha f(x)), accumulated in the log domain."""
    _, scores = _log_scores(q, space, cap)
    return float(np.exp(logsumexp(scores)))


def _chunk_sizes(n: int, chunks: int):
    if chunks < 1:
        raise ValueError("need at least one chunk")
    base, extra = divmod(n, chunks)
    return [base + (1 if i < extra else 0) for i in range(chunks)]


def draws_and_log_weights(q: EnergyDistribution, n: int, rng: np.random.Generator,
                          chunks: int = 1, workers: int = 0):
    """Proposal draws from the base model with their log tilts.

    Draws are produced per chunk from spawned substreams and merged in
    chunk order; `workers` > 0 evaluates chunks on a thread pool without
    changing the merged result.
    """
    sizes = [s for s in _chunk_sizes(n, chunks) if s > 0]
    children = rng.spawn(len(sizes))

    def one(args):
        child, size = args
        xs = q.model.sample(size, child, context=q.context)
        return xs, q.log_tilt(xs)

    jobs = list(zip(children, sizes))
    if workers:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, jobs))
    else:
        parts = [one(job) for job in jobs]
    draws = np.concatenate([p[0] for p in parts], axis=0)
    log_w = np.concatenate([p[1] for p in parts])
    return draws, log_w


def _shifted_weights(log_w: np.ndarray) -> tuple:
    shift = float(np.max(log_w))
    if not np.isfinite(shift):
        raise EstimatorDegenerateError("all importance weights are zero")
    return np.exp(log_w - shift), shift


def _ess(u: np.ndarray) -> float:
    return float(u.sum() ** 2 / (u ** 2).sum())


def estimate_partition(q: EnergyDistribution, n: int, rng: np.random.Generator,
                       chunks: int = 1, workers: int = 0) -> ISEstimate:
    """Monte Carlo estimate Z_hat = mean_i exp(alpha f(x_i)), x_i from p.

    Unbiased for the exact partition function; the reported standard
    error is the sample standard deviation of the weights over sqrt(n).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    _, log_w = draws_and_log_weights(q, n, rng, chunks, workers)
    u, shift = _shifted_weights(log_w)
    value = float(np.exp(shift) * u.mean())
    stderr = float(np.exp(shift) * u.std(ddof=1) / np.sqrt(n))
    ess = _ess(u)
    _warn_low_ess(ess, n, "estimate_partition")
    return ISEstimate(value=value, stderr=stderr, ess=ess, n=n)


def self_normalized_weights(q: EnergyDistribution, draws) -> tuple:
    """(normalized weights, info) for given proposal draws.

    info carries z_hat, ess and the raw shifted weights; the normalized
    weights are u / (u . 1) so that a constant function integrates to
    exactly 1.
    """
    log_w = q.log_tilt(draws)
    u, shift = _shifted_weights(log_w)
    denom = u @ np.ones(u.size)
    if denom == 0.0:
        raise EstimatorDegenerateError("importance weight sum underflowed")
    info = {
        "z_hat": float(np.exp(shift) * u.mean()),
        "ess": _ess(u),
        "log_w": log_w,
        "denom": denom,
        "u": u,
    }
    return u / denom, info


def is_expectation(q: EnergyDistribution, h, n: int, rng: np.random.Generator,
                   chunks: int = 1, workers: int = 0) -> ISEstimate:
    """Self-normalized importance-sampling estimate of E_q[h].

    E_q[h] ~= sum_i exp(alpha f(x_i)) h(x_i) / sum_i exp(alpha f(x_i)),
    with x_i drawn from the base model; the partition estimate in the
    denominator shares the same draws. Consistent but biased. Vector h is
    handled componentwise with shared weights.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    draws, log_w = draws_and_log_weights(q, n, rng, chunks, workers)
    u, _ = _shifted_weights(log_w)
    denom = u @ np.ones(u.size)
    if denom == 0.0:
        raise EstimatorDegenerateError("importance weight sum underflowed")
    values = np.asarray(h(draws), dtype=np.float64)
    if values.shape[0] != u.size:
        raise ValueError("h must return one row per draw")
    value = (u @ values) / denom
    w_norm = u / denom
    resid = values - value
    if values.ndim == 1:
        stderr = float(np.sqrt(((w_norm * resid) ** 2).sum()))
        value = float(value)
    else:
        stderr = np.sqrt(((w_norm[:, None] * resid) ** 2).sum(axis=0))
    ess = _ess(u)
    _warn_low_ess(ess, n, "is_expectation")
    return ISEstimate(value=value, stderr=stderr, ess=ess, n=n)


def sample_q_sir(q: EnergyDistribution, num_particles: int, num_draws: int,
                 rng: np.random.Generator):
    """Approximate q samples by systematic resampling of proposal particles.

    Draw m particles from the base model, then resample k of them with
    probabilities proportional to exp(alpha f). Systematic resampling
    keeps equal-weight resampling a permutation of the particle multiset.
    Diagnostics only; the training path uses weighted expectations.
    """
    if not num_particles >= num_draws >= 1:
        raise ValueError("need num_particles >= num_draws >= 1")
    draws, log_w = draws_and_log_weights(q, num_particles, rng)
    u, _ = _shifted_weights(log_w)
    denom = u @ np.ones(u.size)
    if denom == 0.0:
        raise EstimatorDegenerateError("importance weight sum underflowed")
    cdf = np.cumsum(u / denom)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(num_draws)) / num_draws
    idx = np.searchsorted(cdf, positions, side="left")
    return draws[idx]


def pr_objective(q: EnergyDistribution, space, table=None,
                 cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """KL(q'||p) - alpha E_q'[f] for a probability table q'.

    Evaluated at the exact tilted table (the default) this equals
    -log Z. Any other distribution scores strictly higher.
    """
    elements, scores = _log_scores(q, space, cap)
    log_p = q.model.log_prob_batch(elements, q.context)
    tilt = scores - log_p
    if table is None:
        table = np.exp(scores - logsumexp(scores))
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (len(elements),):
        raise ValueError("table shape does not match the space")
    if np.any(table < 0) or abs(table.sum() - 1.0) > 1e-9:
        raise ValueError("table is not a probability distribution")
    mask = table > 0
    kl = float(np.sum(table[mask] * (np.log(table[mask]) - log_p[mask])))
    return kl - float(table @ tilt)


def _warn_low_ess(ess: float, n: int, where: str):
    if ess < ESS_WARN_FRACTION * n:
        logger.warning("%s: effective sample size %.1f of %d draws (%.1f%%)",
                       where, ess, n, 100.0 * ess / n)


def diagnostics(q: EnergyDistribution, n: int, rng: np.random.Generator) -> dict:
    """One-pass per-instance diagnostics: z_hat, ESS, and the KL estimate
    alpha*E_q[f] - log Z_hat (valid for implicit base models too, since
    q/p = exp(alpha f)/Z needs no base density)."""
    draws, log_w = draws_and_log_weights(q, n, rng)
    u, shift = _shifted_weights(log_w)
    denom = u @ np.ones(u.size)
    if denom == 0.0:
        raise EstimatorDegenerateError("importance weight sum underflowed")
    z_hat = float(np.exp(shift) * u.mean())
    e_tilt = float((u @ log_w) / denom)          # E_q[alpha f]
    return {"z_hat": z_hat, "ess": _ess(u), "n": n,
            "kl_q_p": e_tilt - float(np.log(z_hat))}


def append_estimate_csv(path, label: str, estimate: ISEstimate, seed: int):
    """Append one estimator diagnostic row to a run's CSV metrics file."""
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["label", "value", "stderr", "ess", "n", "seed"])
        value = estimate.value if np.isscalar(estimate.value) \
            else float(np.mean(estimate.value))
        stderr = estimate.stderr if np.isscalar(estimate.stderr) \
            else float(np.mean(estimate.stderr))
        writer.writerow([label, repr(float(value)), repr(float(stderr)),
                         repr(float(estimate.ess)), estimate.n, seed])
