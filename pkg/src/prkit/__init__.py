"""prkit: posterior regularization with learnable knowledge constraints.

A generative model p(x) is regularized through an auxiliary distribution
q(x) proportional to p(x) exp(alpha f(x)), where the constraint f is
learned from demonstrations as an extrinsic reward. The package provides
the desk-scale models and constraints, exact and importance-sampling
machinery for q, the joint training loop with its ablation baselines,
tabular policy-optimization and reward-induction correspondences, and
brute-force oracles that verify all of it.
"""

from .constraints import (CompositeConstraint, GridSideInfo, InfillSideInfo,
                          LinearFeatureConstraint, MatchingConstraint,
                          PartConsistencyConstraint, ZeroConstraint,
                          make_feature_map)
from .energy import (EnergyDistribution, EstimatorDegenerateError, ISEstimate,
                     estimate_partition, exact_partition, exact_q,
                     is_expectation, pr_objective, sample_q_sir)
from .models import (AutoregressiveSequenceModel, CategoricalModel,
                     ImplicitPushforwardModel, grad_log_prob, is_explicit,
                     log_prob, sample)
from .oracles import (FiniteDistribution, brute_expectation, exact_kl,
                      finite_diff_grad, frequency_test, tv_distance)
from .params import ParamVector
from .rl import (IRLFitResult, PolicyTable, TabularMDP, correspondence_report,
                 joint_distribution, maxent_irl_fit, reps_estep, reps_mstep,
                 stationary_distribution)
from .rng import stream
from .spaces import SampleSpace, SizeCapError, enumerate_space
from .training import (DemonstrationSet, TrainConfig, TrainReport, TrainResult,
                       constraint_grad_gan, constraint_grad_maxent,
                       constraint_grad_naive, mstep_explicit, mstep_implicit,
                       original_objective_grad, train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
