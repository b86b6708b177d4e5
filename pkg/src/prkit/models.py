"""Desk-scale generative models.

Two explicit families (categorical outcomes; full-prefix autoregressive
token sequences) and one implicit family (a pushforward of Gaussian noise
through an affine-plus-sigmoid map onto a real grid). Explicit models
evaluate exact log densities and analytic score vectors; the implicit
model only simulates, and nothing in this module will evaluate a density
for it.

All models are pure values: evaluation and sampling never mutate, and
parameter updates go through with_params(), which returns a new model.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_softmax, softmax

from .params import ParamVector
from .spaces import SampleSpace


def _inverse_cdf_sample(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draw; probs (n, K), uniforms (n,)."""
    cdf = np.cumsum(probs, axis=1)
    # guard against cumsum rounding leaving cdf[-1] slightly below 1
    cdf[:, -1] = 1.0
    return (uniforms[:, None] > cdf).sum(axis=1)


@dataclass(frozen=True, eq=False)
class CategoricalModel:
    """Explicit distribution over a finite outcome set, softmax(logits)."""

    logits: np.ndarray
    context_id: object = None

    def __post_init__(self):
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=np.float64))
        if self.logits.ndim != 1 or self.logits.size < 2:
            raise ValueError("logits must be a vector of length >= 2")

    @property
    def space(self) -> SampleSpace:
        return SampleSpace.finite_set(self.logits.size)

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_blocks([("logits", self.logits)])

    def with_params(self, params: ParamVector) -> "CategoricalModel":
        return replace(self, logits=params.block("logits").copy())

    def _check_outcome(self, x):
        k = int(x)
        if k != x or not 0 <= k < self.logits.size:
            raise ValueError(f"outcome {x!r} outside the sample space")
        return k

    def log_prob(self, x, context=None) -> float:
        k = self._check_outcome(x)
        return float(log_softmax(self.logits)[k])

    def log_prob_batch(self, xs, context=None) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        return log_softmax(self.logits)[xs]

    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def sample(self, n: int, rng: np.random.Generator, context=None) -> np.ndarray:
        if n < 1:
            raise ValueError("need n >= 1")
        p = np.broadcast_to(self.probs(), (n, self.logits.size))
        return _inverse_cdf_sample(p, rng.random(n))

    def grad_log_prob(self, x, context=None) -> ParamVector:
        # d log softmax(l)_k / d l = onehot(k) - softmax(l)
        k = self._check_outcome(x)
        g = -self.probs()
        g[k] += 1.0
        return ParamVector.from_blocks([("logits", g)])

    def add_weighted_grad_log_prob(self, xs, weights, context, out: np.ndarray):
        """Accumulate sum_i weights[i] * grad log p(xs[i]) into a flat buffer."""
        xs = np.asarray(xs, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        out -= weights.sum() * self.probs()
        np.add.at(out, xs, weights)

    def weighted_grad_log_prob(self, xs, weights, context=None) -> ParamVector:
        """Sum_i weights[i] * grad log p(xs[i]) as one dense vector."""
        out = np.zeros(self.logits.size)
        self.add_weighted_grad_log_prob(xs, weights, context, out)
        return ParamVector(out, self.params.layout)


@dataclass(frozen=True, eq=False)
class AutoregressiveSequenceModel:
    """Explicit distribution over length-L token sequences.

    Position i holds a conditional logit table indexed by a prefix bucket
    and a small discrete context identifier. prefix_mode "full" buckets on
    the entire prefix (requires length <= 8 to stay desk-scale);
    "last-token" buckets on the most recent token only. The log
    probability of a sequence is the sum of its L conditional log
    probabilities.
    """

    vocab: int
    length: int
    num_contexts: int = 1
    prefix_mode: str = "full"
    param_vector: ParamVector = None

    def __post_init__(self):
        if not (2 <= self.vocab and 1 <= self.length <= 8):
            raise ValueError("need vocab >= 2 and 1 <= length <= 8")
        if self.num_contexts < 1:
            raise ValueError("need num_contexts >= 1")
        if self.prefix_mode not in ("full", "last-token"):
            raise ValueError("prefix_mode must be 'full' or 'last-token'")
        if self.param_vector is None:
            object.__setattr__(self, "param_vector", self._zero_params())
        expected = sum(self.num_buckets(i) * self.num_contexts * self.vocab
                       for i in range(self.length))
        if self.param_vector.size != expected:
            raise ValueError("parameter vector does not match table shapes")

    def num_buckets(self, position: int) -> int:
        if self.prefix_mode == "full":
            return self.vocab ** position
        return 1 if position == 0 else self.vocab

    def _bucket(self, prefix_state: np.ndarray, position: int,
                last_token: np.ndarray) -> np.ndarray:
        if self.prefix_mode == "full":
            return prefix_state
        return np.zeros_like(last_token) if position == 0 else last_token

    def _zero_params(self) -> ParamVector:
        blocks = []
        for i in range(self.length):
            rows = self.num_buckets(i) * self.num_contexts
            blocks.append((f"pos{i}", np.zeros(rows * self.vocab)))
        return ParamVector.from_blocks(blocks)

    @property
    def space(self) -> SampleSpace:
        return SampleSpace.token_sequence(self.vocab, self.length)

    @property
    def params(self) -> ParamVector:
        return self.param_vector

    def with_params(self, params: ParamVector) -> "AutoregressiveSequenceModel":
        return replace(self, param_vector=params)

    def table(self, position: int) -> np.ndarray:
        """Logit table at a position, shape (buckets, contexts, vocab)."""
        block = self.param_vector.block(f"pos{position}")
        return block.reshape(self.num_buckets(position), self.num_contexts,
                             self.vocab)

    def _check_batch(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
        if xs.shape[1] != self.length:
            raise ValueError("sequence length does not match the sample space")
        if xs.min() < 0 or xs.max() >= self.vocab:
            raise ValueError("token outside the vocabulary")
        return xs

    def _contexts(self, context, n) -> np.ndarray:
        cs = np.zeros(n, dtype=np.int64) if context is None else \
            np.broadcast_to(np.asarray(context, dtype=np.int64), (n,))
        if cs.size and (cs.min() < 0 or cs.max() >= self.num_contexts):
            raise ValueError("context id out of range")
        return cs

    def log_prob_batch(self, xs, context=None) -> np.ndarray:
        xs = self._check_batch(xs)
        cs = self._contexts(context, xs.shape[0])
        total = np.zeros(xs.shape[0])
        prefix = np.zeros(xs.shape[0], dtype=np.int64)
        last = np.zeros(xs.shape[0], dtype=np.int64)
        for i in range(self.length):
            rows = self.table(i)[self._bucket(prefix, i, last), cs]
            total += np.take_along_axis(
                log_softmax(rows, axis=1), xs[:, i:i + 1], axis=1).ravel()
            prefix = prefix * self.vocab + xs[:, i]
            last = xs[:, i]
        return total

    def log_prob(self, x, context=None) -> float:
        return float(self.log_prob_batch(np.asarray(x)[None, :], context)[0])

    def sample(self, n: int, rng: np.random.Generator, context=None) -> np.ndarray:
        if n < 1:
            raise ValueError("need n >= 1")
        cs = self._contexts(context, n)
        out = np.zeros((n, self.length), dtype=np.int64)
        prefix = np.zeros(n, dtype=np.int64)
        last = np.zeros(n, dtype=np.int64)
        for i in range(self.length):
            probs = softmax(self.table(i)[self._bucket(prefix, i, last), cs], axis=1)
            out[:, i] = _inverse_cdf_sample(probs, rng.random(n))
            prefix = prefix * self.vocab + out[:, i]
            last = out[:, i]
        return out

    def add_weighted_grad_log_prob(self, xs, weights, context, out: np.ndarray):
        """Accumulate sum_i weights[i] * grad_theta log p(xs[i] | context[i])
        into a flat buffer laid out like the parameter vector. Each sample
        touches exactly `length` table rows."""
        xs = self._check_batch(xs)
        weights = np.asarray(weights, dtype=np.float64)
        cs = self._contexts(context, xs.shape[0])
        prefix = np.zeros(xs.shape[0], dtype=np.int64)
        last = np.zeros(xs.shape[0], dtype=np.int64)
        offsets = {name: (a, b) for name, a, b in self.param_vector.layout}
        for i in range(self.length):
            a, b = offsets[f"pos{i}"]
            grad = out[a:b].reshape(self.num_buckets(i), self.num_contexts,
                                    self.vocab)
            bucket = self._bucket(prefix, i, last)
            rows = self.table(i)[bucket, cs]
            delta = -softmax(rows, axis=1) * weights[:, None]
            np.add.at(grad, (bucket, cs), delta)
            np.add.at(grad, (bucket, cs, xs[:, i]), weights)
            prefix = prefix * self.vocab + xs[:, i]
            last = xs[:, i]

    def weighted_grad_log_prob(self, xs, weights, context=None) -> ParamVector:
        """Sum_i weights[i] * grad_theta log p(xs[i] | context[i])."""
        out = np.zeros(self.param_vector.size)
        self.add_weighted_grad_log_prob(xs, weights, context, out)
        return ParamVector(out, self.param_vector.layout)

    def grad_log_prob(self, x, context=None) -> ParamVector:
        return self.weighted_grad_log_prob(
            np.asarray(x)[None, :], np.ones(1), context)


@dataclass(frozen=True, eq=False)
class ImplicitPushforwardModel:
    """Deterministic map from (Gaussian noise, context features) to a grid.

    g(z, u) = sigmoid(W_u u + W_z z + b), reshaped to (height, width).
    Simulation only: there is intentionally no log_prob anywhere on this
    class. Gradients flow through vjp_params (pathwise).
    """

    height: int
    width: int
    noise_dim: int
    feature_dim: int
    param_vector: ParamVector = None

    def __post_init__(self):
        if min(self.height, self.width, self.noise_dim, self.feature_dim) < 1:
            raise ValueError("all dimensions must be positive")
        if self.param_vector is None:
            cells = self.height * self.width
            object.__setattr__(self, "param_vector", ParamVector.from_blocks([
                ("w_feat", np.zeros(cells * self.feature_dim)),
                ("w_noise", np.zeros(cells * self.noise_dim)),
                ("bias", np.zeros(cells)),
            ]))

    @property
    def space(self) -> SampleSpace:
        return SampleSpace.real_grid(self.height, self.width)

    @property
    def params(self) -> ParamVector:
        return self.param_vector

    def with_params(self, params: ParamVector) -> "ImplicitPushforwardModel":
        return replace(self, param_vector=params)

    def _weights(self):
        cells = self.height * self.width
        w_feat = self.param_vector.block("w_feat").reshape(cells, self.feature_dim)
        w_noise = self.param_vector.block("w_noise").reshape(cells, self.noise_dim)
        bias = self.param_vector.block("bias")
        return w_feat, w_noise, bias

    def _pre_activation(self, z: np.ndarray, features: np.ndarray) -> np.ndarray:
        w_feat, w_noise, bias = self._weights()
        return z @ w_noise.T + features @ w_feat.T + bias

    def push(self, z: np.ndarray, features: np.ndarray) -> np.ndarray:
        """Map noise draws (n, noise_dim) to grids (n, height, width)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        features = np.asarray(features, dtype=np.float64)
        pre = self._pre_activation(z, features)
        out = 1.0 / (1.0 + np.exp(-pre))
        return out.reshape(z.shape[0], self.height, self.width)

    def sample(self, n: int, rng: np.random.Generator, context=None) -> np.ndarray:
        if n < 1:
            raise ValueError("need n >= 1")
        if context is None:
            raise ValueError("pushforward model needs context features")
        z = rng.standard_normal((n, self.noise_dim))
        return self.push(z, context)

    def vjp_params(self, z: np.ndarray, features: np.ndarray,
                   cotangent: np.ndarray) -> ParamVector:
        """Sum_i cotangent[i] . d g(z_i, u) / d theta, as one ParamVector."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        features = np.asarray(features, dtype=np.float64)
        cells = self.height * self.width
        pre = self._pre_activation(z, features)
        sig = 1.0 / (1.0 + np.exp(-pre))
        dpre = np.asarray(cotangent).reshape(z.shape[0], cells) * sig * (1.0 - sig)
        feats = np.broadcast_to(features, (z.shape[0], self.feature_dim))
        return ParamVector.from_blocks([
            ("w_feat", (dpre.T @ feats).ravel()),
            ("w_noise", (dpre.T @ z).ravel()),
            ("bias", dpre.sum(axis=0)),
        ])


def is_explicit(model) -> bool:
    return hasattr(model, "log_prob")


def log_prob(model, x, context=None) -> float:
    """Exact log density of an explicit model; rejects implicit models."""
    if not is_explicit(model):
        raise TypeError(
            f"{type(model).__name__} is implicit: no density can be evaluated")
    return model.log_prob(x, context)


def grad_log_prob(model, x, context=None) -> ParamVector:
    if not is_explicit(model):
        raise TypeError(
            f"{type(model).__name__} is implicit: no score can be evaluated")
    return model.grad_log_prob(x, context)


def sample(model, n: int, rng: np.random.Generator, context=None):
    return model.sample(n, rng, context=context)
