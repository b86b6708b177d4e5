"""Minimal test rigs for the pathwise-gradient identities.

A two-parameter scalar pushforward (loc + scale * z) with an exactly
standardized noise set, so that the empirical score identity holds to
rounding error, plus a quadratic constraint differentiable in the sample.
"""

from dataclasses import dataclass, replace

import numpy as np

from .params import ParamVector


def standardized_symmetric_normal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian draws made exactly symmetric and unit-second-moment.

    Symmetry zeroes the empirical mean; the rescaling pins mean(z^2) to 1,
    which is what makes the Monte Carlo policy-drift term vanish at the
    current parameters under common random numbers.
    """
    half = rng.standard_normal(n // 2)
    z = np.concatenate([half, -half])
    return z / np.sqrt(np.mean(z ** 2))


def log_normal_pdf(x: np.ndarray, loc: float, scale: float) -> np.ndarray:
    return -0.5 * ((x - loc) / scale) ** 2 - np.log(np.abs(scale)) \
        - 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class AffinePushforwardRig:
    """Scalar pushforward g(z) = loc + scale * z with two parameters.

    Implements the implicit-model protocol (push / vjp_params / sample)
    for the pathwise update tests; no density is exposed.
    """

    loc: float = 0.0
    scale: float = 1.0
    noise_dim: int = 1

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_blocks([("loc", np.array([self.loc])),
                                        ("scale", np.array([self.scale]))])

    def with_params(self, params: ParamVector) -> "AffinePushforwardRig":
        return replace(self, loc=float(params.block("loc")[0]),
                       scale=float(params.block("scale")[0]))

    def push(self, z: np.ndarray, features=None) -> np.ndarray:
        return self.loc + self.scale * np.asarray(z).ravel()

    def sample(self, n: int, rng: np.random.Generator, context=None) -> np.ndarray:
        return self.push(rng.standard_normal((n, 1)), context)

    def vjp_params(self, z: np.ndarray, features, cotangent) -> ParamVector:
        z = np.asarray(z).ravel()
        cot = np.asarray(cotangent).ravel()
        return ParamVector.from_blocks([
            ("loc", np.array([cot.sum()])),
            ("scale", np.array([float(cot @ z)])),
        ])


@dataclass(frozen=True, eq=False)
class QuadraticConstraint:
    """f(x) = -(x - target)^2 on scalar samples; maximal at the target."""

    target: float = 0.0

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_blocks([])

    def with_params(self, params: ParamVector) -> "QuadraticConstraint":
        return self

    def evaluate(self, x, side_info=None) -> float:
        return -float((np.asarray(x) - self.target) ** 2)

    def evaluate_batch(self, xs, side_info=None) -> np.ndarray:
        return -(np.asarray(xs, dtype=np.float64).ravel() - self.target) ** 2

    def grad_params_batch(self, xs, side_info=None) -> np.ndarray:
        return np.zeros((len(np.asarray(xs).ravel()), 0))

    def grad_params(self, x, side_info=None) -> ParamVector:
        return self.params

    def grad_sample(self, x, side_info=None) -> np.ndarray:
        return -2.0 * (np.asarray(x, dtype=np.float64) - self.target)

    def grad_sample_batch(self, xs, side_info=None) -> np.ndarray:
        return -2.0 * (np.asarray(xs, dtype=np.float64) - self.target)
