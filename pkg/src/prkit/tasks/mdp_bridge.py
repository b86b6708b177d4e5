"""MDP bridge task: the tabular correspondence demonstrations, run as an
experiment so they share the report/CSV machinery.

A seeded random ergodic MDP and policy define the joint state-action
distribution; demonstrations are drawn from the closed-form tilted
policy, and the reward is re-induced from them by exact maximum-likelihood
ascent over a saturated feature family. The per-iteration report tracks
the demo negative log-likelihood (loss and perplexity metric) and the KL
between the empirical demos and the fitted distribution.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from ..rl import PolicyTable, TabularMDP, correspondence_report, joint_distribution, reps_estep
from ..rng import stream
from ..training import IterationRecord, TrainReport


@dataclass
class MdpInstance:
    mdp: TabularMDP
    policy: PolicyTable
    p_joint: np.ndarray
    q_star: np.ndarray
    demo_counts: np.ndarray
    alpha: float


def build_instance(num_states: int, num_actions: int, seed: int,
                   num_demos: int = 4000, alpha: float = 1.0) -> MdpInstance:
    rng = stream(seed, "mdp")
    transitions = softmax(1.2 * rng.standard_normal(
        (num_states, num_actions, num_states)), axis=2)
    rewards = 0.8 * rng.standard_normal((num_states, num_actions))
    mdp = TabularMDP(transitions, rewards)
    policy = PolicyTable(softmax(rng.standard_normal(
        (num_states, num_actions)), axis=1))
    p_joint = joint_distribution(mdp, policy)
    q_star = reps_estep(p_joint, mdp.rewards, alpha)
    flat = q_star.ravel()
    demo_rng = stream(seed, "mdp-demos")
    counts = demo_rng.multinomial(num_demos, flat / flat.sum())
    return MdpInstance(mdp=mdp, policy=policy, p_joint=p_joint, q_star=q_star,
                       demo_counts=counts.astype(np.float64), alpha=alpha)


def run_irl_training(instance: MdpInstance, iterations: int,
                     step_size: float = 4.0) -> tuple:
    """Exact-likelihood reward induction with a per-iteration report.

    Saturated one-hot features over the flattened state-action space, so
    the maximum-likelihood fit should recover the empirical demo
    distribution; returns (report, fitted q, tv trace).
    """
    counts = instance.demo_counts
    p_hat = counts / counts.sum()
    size = p_hat.size
    alpha = instance.alpha
    phi = np.zeros(size)
    report = TrainReport()
    tv = []
    mask = p_hat > 0
    for t in range(iterations):
        tic = time.perf_counter()
        scores = alpha * phi
        log_q = scores - logsumexp(scores)
        q = np.exp(log_q)
        nll = -float(p_hat @ log_q)
        kl = float(np.sum(p_hat[mask] * (np.log(p_hat[mask]) - log_q[mask])))
        tv.append(0.5 * float(np.abs(q - p_hat).sum()))
        z_hat = float(np.exp(logsumexp(scores) - np.log(size)))
        report.append(IterationRecord(
            iteration=t, loss_total=nll, loss_original=nll, kl_q_p=kl,
            constraint_ll=-nll, task_metric=float(np.exp(nll)), z_hat=z_hat,
            ess=float(size), seconds=time.perf_counter() - tic))
        phi = phi + step_size * alpha * (p_hat - q)
    scores = alpha * phi
    q = np.exp(scores - logsumexp(scores))
    return report, q, tv


def make_correspondence_report(instance: MdpInstance) -> dict:
    return correspondence_report(instance.p_joint, instance.mdp.rewards,
                                 instance.alpha, instance.demo_counts)
