"""Tabular demonstrations of the regularization/RL correspondence.

The KL-regularized expected-reward objective over a joint state-action
distribution,

    min_q KL(q || p) - alpha * E_q[R],

has the closed-form solution q*(x) = p(x) exp(alpha R(x)) / Z: the same
tilted form the constraint framework produces, with (base model,
constraint) mapped to (old policy, reward). reps_estep implements that
solution independently of the energy module so the equality of the two
code paths is a real check, not a tautology. MaxEnt reward induction fits
q_phi(x) = exp(alpha R_phi(x)) / Z (uniform base) to demonstrations by
exact gradient ascent on the log-likelihood.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp


class NonErgodicError(ValueError):
    """The chain induced by the policy has more than one recurrent class."""


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transitions: np.ndarray    # (S, A, S), rows sum to 1
    rewards: np.ndarray        # (S, A)

    def __post_init__(self):
        transitions = np.asarray(self.transitions, dtype=np.float64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "rewards", rewards)
        if transitions.ndim != 3 or transitions.shape[0] != transitions.shape[2]:
            raise ValueError("transitions must have shape (S, A, S)")
        if rewards.shape != transitions.shape[:2]:
            raise ValueError("rewards must have shape (S, A)")
        if np.any(transitions < 0) or \
                np.max(np.abs(transitions.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be stochastic within 1e-12")

    @property
    def num_states(self):
        return self.transitions.shape[0]

    @property
    def num_actions(self):
        return self.transitions.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "TabularMDP":
        doc = json.loads(text)
        mdp = cls(np.array(doc["transitions"], dtype=np.float64),
                  np.array(doc["rewards"], dtype=np.float64))
        if (mdp.num_states, mdp.num_actions) != (doc["num_states"], doc["num_actions"]):
            raise ValueError("declared sizes do not match the tables")
        return mdp


@dataclass(frozen=True, eq=False)
class PolicyTable:
    probs: np.ndarray          # (S, A), rows sum to 1

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError("policy must be a (S, A) table")
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("policy rows must be stochastic within 1e-12")


def policy_transition(mdp: TabularMDP, policy: PolicyTable) -> np.ndarray:
    """State-to-state matrix P_pi(s'|s) = sum_a pi(a|s) P(s'|s,a)."""
    return np.einsum("sa,sat->st", policy.probs, mdp.transitions)


def _check_ergodic(p: np.ndarray):
    n, _ = connected_components(p > 0, directed=True, connection="strong")
    if n != 1:
        raise NonErgodicError(
            f"chain has {n} strongly connected components; need a single "
            "recurrent class")


def stationary_distribution(mdp: TabularMDP, policy: PolicyTable,
                            tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stationary state distribution of the chain induced by the policy.

    Damped power iteration on (I + P)/2 (same fixed point, aperiodic), run
    to a left-residual below tol against the undamped chain.
    """
    p = policy_transition(mdp, policy)
    _check_ergodic(p)
    half = 0.5 * (np.eye(p.shape[0]) + p)
    mu = np.full(p.shape[0], 1.0 / p.shape[0])
    for _ in range(max_iter):
        nxt = mu @ half
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < tol:
            mu = nxt
            break
        mu = nxt
    residual = np.abs(mu @ p - mu).sum()
    if residual > 1e-10:
        raise NonErgodicError(f"power iteration stalled; residual {residual:.3e}")
    return mu


def joint_distribution(mdp: TabularMDP, policy: PolicyTable) -> np.ndarray:
    """p(s, a) = mu(s) pi(a|s) under the stationary distribution."""
    mu = stationary_distribution(mdp, policy)
    return mu[:, None] * policy.probs


def reps_estep(p_joint: np.ndarray, rewards: np.ndarray, alpha: float) -> np.ndarray:
    """Closed-form solution of the KL-regularized reward maximization:
    q*(x) = p(x) exp(alpha R(x)) / Z, elementwise over the joint table.

    Independent log-domain implementation; adding a constant to the
    rewards leaves the output unchanged.
    """
    p_joint = np.asarray(p_joint, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if p_joint.shape != rewards.shape:
        raise ValueError("joint distribution and rewards must share a shape")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if abs(p_joint.sum() - 1.0) > 1e-9 or np.any(p_joint < 0):
        raise ValueError("p_joint must be a distribution")
    with np.errstate(divide="ignore"):
        scores = np.where(p_joint > 0, np.log(p_joint) + alpha * rewards, -np.inf)
    flat = scores.ravel()
    norm = logsumexp(flat)
    if not np.isfinite(norm):
        raise ValueError("base distribution has no mass anywhere the reward "
                         "is finite")
    return np.exp(scores - norm)


def reps_mstep(q_star: np.ndarray) -> PolicyTable:
    """Conditional projection pi(a|s) proportional to q*(s, a).

    The KL(q* || mu . pi) minimizer over row-stochastic tables; states
    with zero marginal mass get a uniform row by convention.
    """
    q_star = np.asarray(q_star, dtype=np.float64)
    marginal = q_star.sum(axis=1, keepdims=True)
    uniform = np.full_like(q_star, 1.0 / q_star.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = np.where(marginal > 0, q_star / np.where(marginal > 0, marginal, 1.0),
                        uniform)
    return PolicyTable(rows)


@dataclass
class IRLFitResult:
    phi: np.ndarray
    q: np.ndarray
    converged: bool
    steps: int
    grad_norm: float


def maxent_irl_fit(demo_counts: np.ndarray, features: np.ndarray, alpha: float = 1.0,
                   step_size: float = 4.0, max_steps: int = 10_000,
                   tol: float = 1e-10) -> IRLFitResult:
    """Fit reward weights by maximizing the demo likelihood of
    q_phi(x) = exp(alpha * features(x) . phi) / Z (uniform base).

    Exact gradient ascent: grad = alpha * (demo feature mean - E_q[features]).
    Non-convergence inside the budget is reported on the result, never
    silently accepted.
    """
    demo_counts = np.asarray(demo_counts, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if demo_counts.ndim != 1 or features.shape[0] != demo_counts.size:
        raise ValueError("need one feature row per space point")
    if demo_counts.sum() <= 0:
        raise ValueError("need at least one demonstration")
    if features.shape[1] > features.shape[0]:
        raise ValueError("feature dimension exceeds the space size")
    p_hat = demo_counts / demo_counts.sum()
    target = p_hat @ features
    phi = np.zeros(features.shape[1])
    grad_norm = np.inf
    steps = 0
    for steps in range(1, max_steps + 1):
        scores = alpha * (features @ phi)
        q = np.exp(scores - logsumexp(scores))
        grad = alpha * (target - q @ features)
        phi = phi + step_size * grad
        grad_norm = float(np.abs(grad).max())
        if grad_norm < tol:
            break
    scores = alpha * (features @ phi)
    q = np.exp(scores - logsumexp(scores))
    return IRLFitResult(phi=phi, q=q, converged=grad_norm < tol,
                        steps=steps, grad_norm=grad_norm)


def correspondence_report(p_joint: np.ndarray, rewards: np.ndarray, alpha: float,
                          demo_counts: np.ndarray = None) -> dict:
    """Executable record of the regularizer/policy-optimization match-up.

    Computes the tilted distribution along both code paths (the energy
    module on a categorical model with a one-hot-feature constraint, and
    reps_estep on the raw tables) and reports their agreement, plus the
    reward-induction fit when demonstrations are given.
    """
    from .constraints import LinearFeatureConstraint, make_feature_map
    from .energy import EnergyDistribution, exact_q
    from .models import CategoricalModel
    from .spaces import SampleSpace

    p_flat = np.asarray(p_joint, dtype=np.float64).ravel()
    r_flat = np.asarray(rewards, dtype=np.float64).ravel()
    q_rl = reps_estep(p_flat, r_flat, alpha)

    psi = make_feature_map("one-hot-outcome", num_outcomes=p_flat.size)
    constraint = LinearFeatureConstraint(psi, r_flat, feature_map_batch=psi.batch)
    with np.errstate(divide="ignore"):
        model = CategoricalModel(np.where(p_flat > 0, np.log(p_flat), -745.0))
    q_pr = exact_q(EnergyDistribution(model, constraint, alpha),
                   SampleSpace.finite_set(p_flat.size))

    report = {
        "alpha": alpha,
        "pr": {"base_model": p_flat.tolist(), "constraint": r_flat.tolist(),
               "tilted": q_pr.tolist()},
        "rl": {"old_policy": p_flat.tolist(), "reward": r_flat.tolist(),
               "new_policy": q_rl.tolist()},
        "q_max_abs_difference": float(np.abs(q_pr - q_rl).max()),
    }
    if demo_counts is not None:
        demo_counts = np.asarray(demo_counts, dtype=np.float64).ravel()
        features = np.eye(p_flat.size)
        fit = maxent_irl_fit(demo_counts, features, alpha=alpha)
        p_demo = demo_counts / demo_counts.sum()
        report["demos"] = p_demo.tolist()
        report["irl"] = {
            "fitted_q": fit.q.tolist(),
            "converged": fit.converged,
            "tv_to_demos": float(0.5 * np.abs(fit.q - p_demo).sum()),
        }
    return report
