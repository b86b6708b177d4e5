"""Parameterized constraint functions with analytic parameter gradients.

A constraint scores a sample against its instance's side information;
higher is better. Three families:

* LinearFeatureConstraint  -- weights dotted with a user feature map.
* MatchingConstraint       -- embeds a generated sequence's masked-span
  content and the held-out true infill, scores their match with a
  one-hidden-layer tanh network.
* PartConsistencyConstraint -- a learnable per-cell part classifier
  applied to generated and true grids; the score is the negative
  symmetrized per-cell KL between the two part distributions (the
  cross-entropy gap), which is 0 exactly when the distributions agree.

Every gradient here is hand-derived and checked against central finite
differences in the test suite.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_softmax

from .params import ParamVector

MASK = -1  # sentinel for a masked template position


@dataclass(frozen=True, eq=False)
class InfillSideInfo:
    """Template with masked spans plus the held-out true infill.

    template: tuple of token ids with MASK at masked positions.
    spans:    tuple of (start, length) pairs.
    infill:   tuple of token tuples, one per span; plugging them into the
              template recovers the complete sequence.
    """
    template: tuple
    spans: tuple
    infill: tuple


@dataclass(frozen=True, eq=False)
class GridSideInfo:
    """True target grid plus the key-cell specification for the grid task."""
    source: np.ndarray
    keypoints: tuple           # ((row, col) anchor per part)
    target: np.ndarray
    labels: np.ndarray         # per-cell part label of the target, 0 = background

    def __post_init__(self):
        for name in ("source", "target", "labels"):
            arr = np.asarray(getattr(self, name))
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


class ZeroConstraint:
    """f identically 0; the trivial constraint used by tests and baselines."""

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_blocks([])

    def with_params(self, params: ParamVector) -> "ZeroConstraint":
        return self

    def evaluate(self, x, side_info=None) -> float:
        return 0.0

    def evaluate_batch(self, xs, side_info=None) -> np.ndarray:
        return np.zeros(len(xs))

    def grad_params(self, x, side_info=None) -> ParamVector:
        return self.params

    def grad_params_batch(self, xs, side_info=None) -> np.ndarray:
        return np.zeros((len(xs), 0))

    def grad_sample(self, x, side_info=None) -> np.ndarray:
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def grad_sample_batch(self, xs, side_info=None) -> np.ndarray:
        return np.zeros_like(np.asarray(xs, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class LinearFeatureConstraint:
    """f(x, s) = weights . feature_map(x, s), exactly linear in the weights."""

    feature_map: object                 # callable (x, side_info) -> (M,) array
    weights: np.ndarray
    feature_map_batch: object = None    # optional callable (xs, side_info) -> (n, M)

    def __post_init__(self):
        object.__setattr__(self, "weights",
                           np.asarray(self.weights, dtype=np.float64))

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_blocks([("weights", self.weights)])

    def with_params(self, params: ParamVector) -> "LinearFeatureConstraint":
        return replace(self, weights=params.block("weights").copy())

    def _features(self, x, side_info) -> np.ndarray:
        psi = np.asarray(self.feature_map(x, side_info), dtype=np.float64)
        if psi.shape != self.weights.shape:
            raise ValueError(
                f"feature dimension {psi.shape} does not match weights "
                f"{self.weights.shape}")
        return psi

    def features_batch(self, xs, side_info=None) -> np.ndarray:
        if self.feature_map_batch is not None:
            psi = np.asarray(self.feature_map_batch(xs, side_info), dtype=np.float64)
            if psi.ndim != 2 or psi.shape[1] != self.weights.size:
                raise ValueError("batch feature dimension does not match weights")
            return psi
        return np.stack([self._features(x, side_info) for x in xs])

    def evaluate(self, x, side_info=None) -> float:
        return float(self.weights @ self._features(x, side_info))

    def evaluate_batch(self, xs, side_info=None) -> np.ndarray:
        return self.features_batch(xs, side_info) @ self.weights

    def grad_params(self, x, side_info=None) -> ParamVector:
        return ParamVector.from_blocks([("weights", self._features(x, side_info))])

    def grad_params_batch(self, xs, side_info=None) -> np.ndarray:
        return self.features_batch(xs, side_info)


# Feature maps nameable from task configs.
FEATURE_MAPS = {}


def register_feature_map(name):
    def wrap(factory):
        FEATURE_MAPS[name] = factory
        return factory
    return wrap


def make_feature_map(name, **kwargs):
    try:
        factory = FEATURE_MAPS[name]
    except KeyError:
        raise KeyError(f"unknown feature map {name!r}; "
                       f"registered: {sorted(FEATURE_MAPS)}") from None
    return factory(**kwargs)


@register_feature_map("one-hot-outcome")
def _one_hot_outcome(num_outcomes: int):
    def psi(x, side_info=None):
        v = np.zeros(num_outcomes)
        v[int(x)] = 1.0
        return v

    def psi_batch(xs, side_info=None):
        xs = np.asarray(xs, dtype=np.int64)
        v = np.zeros((xs.size, num_outcomes))
        v[np.arange(xs.size), xs] = 1.0
        return v
    psi.batch = psi_batch
    return psi


@register_feature_map("token-count")
def _token_count(tokens):
    tokens = tuple(tokens)

    def psi(x, side_info=None):
        x = np.asarray(x)
        return np.array([float((x == t).sum()) for t in tokens])
    return psi


@dataclass(frozen=True, eq=False)
class MatchingConstraint:
    """Log-likelihood of recovering the held-out infill from a generated
    sequence's masked-span content.

    Per span: a = mean learned embedding of the generated tokens in the
    span feeds one tanh hidden layer; a vocabulary head turns the hidden
    state into a token distribution, and the score is the mean log
    probability of the true infill tokens under it. Scores are <= 0 and
    maximal when the recovery distribution puts all its mass on the
    truth; the constraint score is the mean over spans (0 when nothing is
    masked, which is the supremum). Bounded above by construction, so
    ascent on any training signal cannot run off through a constant
    direction.
    """

    vocab: int
    embed_dim: int = 8
    hidden_dim: int = 16
    param_vector: ParamVector = None

    def __post_init__(self):
        if self.param_vector is None:
            object.__setattr__(self, "param_vector", self._zero_params())

    def _zero_params(self) -> ParamVector:
        return ParamVector.from_blocks([
            ("embed", np.zeros(self.vocab * self.embed_dim)),
            ("w1", np.zeros(self.hidden_dim * self.embed_dim)),
            ("b1", np.zeros(self.hidden_dim)),
            ("head", np.zeros(self.vocab * self.hidden_dim)),
            ("head_bias", np.zeros(self.vocab)),
        ])

    @classmethod
    def initialized(cls, vocab, rng, embed_dim=8, hidden_dim=16,
                    scale=0.1) -> "MatchingConstraint":
        base = cls(vocab, embed_dim, hidden_dim)
        values = rng.normal(0.0, scale, base.param_vector.size)
        return base.with_params(base.param_vector.with_values(values))

    @property
    def params(self) -> ParamVector:
        return self.param_vector

    def with_params(self, params: ParamVector) -> "MatchingConstraint":
        return replace(self, param_vector=params)

    def _pieces(self):
        pv = self.param_vector
        return (pv.block("embed").reshape(self.vocab, self.embed_dim),
                pv.block("w1").reshape(self.hidden_dim, self.embed_dim),
                pv.block("b1"),
                pv.block("head").reshape(self.vocab, self.hidden_dim),
                pv.block("head_bias"))

    def _span_forward(self, xs, start, slen):
        emb, w1, b1, head, head_bias = self._pieces()
        a = emb[xs[:, start:start + slen]].mean(axis=1)
        hidden = np.tanh(a @ w1.T + b1)
        logits = hidden @ head.T + head_bias
        return a, hidden, log_softmax(logits, axis=1)

    def evaluate(self, x, side_info) -> float:
        return float(self.evaluate_batch(np.asarray(x)[None, :], side_info)[0])

    def evaluate_batch(self, xs, side_info) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
        if not side_info.spans:
            return np.zeros(xs.shape[0])
        total = np.zeros(xs.shape[0])
        for (start, slen), true_tokens in zip(side_info.spans, side_info.infill):
            _, _, log_p = self._span_forward(xs, start, slen)
            target = np.asarray(true_tokens, dtype=np.int64)
            total += log_p[:, target].mean(axis=1)
        return total / len(side_info.spans)

    def grad_params(self, x, side_info) -> ParamVector:
        flat = self.grad_params_batch(np.asarray(x)[None, :], side_info)[0]
        return self.param_vector.with_values(flat)

    def grad_params_batch(self, xs, side_info) -> np.ndarray:
        """Per-sample gradient rows, shape (n, num_params)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
        n = xs.shape[0]
        emb, w1, b1, head, head_bias = self._pieces()
        g_emb = np.zeros((n, self.vocab, self.embed_dim))
        g_w1 = np.zeros((n,) + w1.shape)
        g_b1 = np.zeros((n, self.hidden_dim))
        g_head = np.zeros((n,) + head.shape)
        g_head_bias = np.zeros((n, self.vocab))
        k = float(len(side_info.spans)) if side_info.spans else 1.0
        for (start, slen), true_tokens in zip(side_info.spans, side_info.infill):
            toks = xs[:, start:start + slen]
            target = np.asarray(true_tokens, dtype=np.int64)
            a, hidden, log_p = self._span_forward(xs, start, slen)
            target_mean = np.zeros(self.vocab)
            np.add.at(target_mean, target, 1.0 / target.size)
            r = (target_mean - np.exp(log_p)) / k          # (n, V)
            g_head_bias += r
            g_head += r[:, :, None] * hidden[:, None, :]
            back = (r @ head) * (1.0 - hidden ** 2)        # (n, H)
            g_b1 += back
            g_w1 += back[:, :, None] * a[:, None, :]
            da = back @ w1                                 # (n, E)
            for j in range(slen):
                np.add.at(g_emb, (np.arange(n), toks[:, j]), da / slen)
        return np.concatenate([
            g_emb.reshape(n, -1), g_w1.reshape(n, -1), g_b1,
            g_head.reshape(n, -1), g_head_bias], axis=1)

    def grad_sample(self, x, side_info):
        raise TypeError("MatchingConstraint scores discrete sequences; "
                        "it has no sample gradient")


def _patch_index_map(height: int, width: int) -> np.ndarray:
    """(cells, 9) indices of each cell's 3x3 neighborhood; -1 means padded."""
    idx = np.full((height * width, 9), -1, dtype=np.int64)
    for i in range(height):
        for j in range(width):
            c = i * width + j
            k = 0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    r, s = i + di, j + dj
                    if 0 <= r < height and 0 <= s < width:
                        idx[c, k] = r * width + s
                    k += 1
    return idx


@dataclass(frozen=True, eq=False)
class PartConsistencyConstraint:
    """Learnable per-cell part classifier scoring grid/grid consistency.

    The classifier maps each cell's 3x3 neighborhood (plus bias) to part
    logits. Applied to the generated grid and to the true target grid it
    yields per-cell part distributions; the score is minus the mean
    symmetrized KL between them, which is <= 0 and 0 exactly when every
    cell's distributions coincide. Symmetric in the two grids by
    construction.
    """

    height: int
    width: int
    num_labels: int
    param_vector: ParamVector = None

    PATCH = 9  # 3x3 neighborhood

    def __post_init__(self):
        if self.param_vector is None:
            object.__setattr__(self, "param_vector", ParamVector.from_blocks([
                ("classifier", np.zeros(self.num_labels * (self.PATCH + 1)))]))
        object.__setattr__(self, "_index_map",
                           _patch_index_map(self.height, self.width))
        # per-parameter-state memo of reference-grid quantities; invalidated
        # naturally because with_params builds a fresh instance
        object.__setattr__(self, "_target_memo", {})

    @classmethod
    def initialized(cls, height, width, num_labels, rng,
                    scale=0.1) -> "PartConsistencyConstraint":
        base = cls(height, width, num_labels)
        values = rng.normal(0.0, scale, base.param_vector.size)
        return base.with_params(base.param_vector.with_values(values))

    @property
    def params(self) -> ParamVector:
        return self.param_vector

    def with_params(self, params: ParamVector) -> "PartConsistencyConstraint":
        return replace(self, param_vector=params)

    @property
    def classifier(self) -> np.ndarray:
        return self.param_vector.block("classifier").reshape(
            self.num_labels, self.PATCH + 1)

    def patches(self, grids: np.ndarray) -> np.ndarray:
        """(n, cells, 10) patch features with zero padding and a bias column."""
        grids = np.asarray(grids, dtype=np.float64)
        single = grids.ndim == 2
        flat = grids.reshape(-1, self.height * self.width)
        padded = np.concatenate([flat, np.zeros((flat.shape[0], 1))], axis=1)
        feats = padded[:, self._index_map]          # -1 picks the zero column
        bias = np.ones(feats.shape[:2] + (1,))
        out = np.concatenate([feats, bias], axis=2)
        return out[0] if single else out

    def cell_log_probs(self, grids: np.ndarray) -> np.ndarray:
        grids = np.asarray(grids, dtype=np.float64)
        if grids.ndim == 2:
            grids = grids[None]
        logits = self.patches(grids) @ self.classifier.T
        return log_softmax(logits, axis=-1)         # (n, cells, labels)

    def evaluate(self, x, side_info) -> float:
        return float(self.evaluate_batch(np.asarray(x)[None], side_info)[0])

    def _target_side(self, side_info):
        key = id(side_info)
        if key not in self._target_memo:
            uy = self.patches(np.asarray(side_info.target))
            ly = log_softmax(uy @ self.classifier.T, axis=-1)
            self._target_memo[key] = (uy, ly)
        return self._target_memo[key]

    def evaluate_batch(self, xs, side_info) -> np.ndarray:
        lx = self.cell_log_probs(xs)
        _, ly = self._target_side(side_info)
        px, py = np.exp(lx), np.exp(ly)
        diff = lx - ly
        j = 0.5 * ((px * diff).sum(axis=-1) + (py * -diff).sum(axis=-1))
        return -j.mean(axis=-1)

    def grad_params(self, x, side_info) -> ParamVector:
        flat = self.grad_params_batch(np.asarray(x)[None], side_info)[0]
        return self.param_vector.with_values(flat)

    def grad_params_batch(self, xs, side_info) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:
            xs = xs[None]
        n = xs.shape[0]
        cells = self.height * self.width
        ux = self.patches(xs)                                   # (n, cells, 10)
        uy, ly = self._target_side(side_info)                   # (cells, ...)
        lx = log_softmax(ux @ self.classifier.T, axis=-1)
        px, py = np.exp(lx), np.exp(ly)
        r = lx - ly
        # dJ/d logits_x = 0.5 * [px*(r - <px,r>) + (px - py)], symmetric for y
        dlx = 0.5 * (px * (r - (px * r).sum(-1, keepdims=True)) + (px - py))
        dly = 0.5 * (py * (-r + (py * r).sum(-1, keepdims=True)) + (py - px))
        g = np.einsum("ncl,ncp->nlp", dlx, ux)
        g += np.einsum("ncl,cp->nlp", dly, uy)
        return (-g / cells).reshape(n, -1)

    def grad_sample(self, x, side_info) -> np.ndarray:
        return self.grad_sample_batch(np.asarray(x)[None], side_info)[0]

    def grad_sample_batch(self, xs, side_info) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:
            xs = xs[None]
        n = xs.shape[0]
        cells = self.height * self.width
        ux = self.patches(xs)
        _, ly = self._target_side(side_info)
        lx = log_softmax(ux @ self.classifier.T, axis=-1)
        px, py = np.exp(lx), np.exp(ly)
        r = lx - ly
        dlx = 0.5 * (px * (r - (px * r).sum(-1, keepdims=True)) + (px - py))
        dpatch = dlx @ self.classifier[:, :self.PATCH]           # (n, cells, 9)
        grad = np.zeros((n, cells + 1))                          # +1 absorbs padding
        cols = np.where(self._index_map < 0, cells, self._index_map)
        np.add.at(grad, (np.arange(n)[:, None, None],
                         np.broadcast_to(cols, (n,) + cols.shape)), dpatch)
        return (-grad[:, :cells] / cells).reshape(n, self.height, self.width)


@dataclass(frozen=True, eq=False)
class CompositeConstraint:
    """Weighted sum of constraints sharing one concatenated parameter vector."""

    constraints: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.constraints) != len(self.weights) or not self.constraints:
            raise ValueError("need matching, nonempty constraints and weights")

    @property
    def params(self) -> ParamVector:
        blocks = []
        for i, c in enumerate(self.constraints):
            pv = c.params
            for name, a, b in pv.layout:
                blocks.append((f"c{i}.{name}", pv.values[a:b]))
        return ParamVector.from_blocks(blocks)

    def with_params(self, params: ParamVector) -> "CompositeConstraint":
        updated = []
        for i, c in enumerate(self.constraints):
            pv = c.params
            vals = np.concatenate([params.block(f"c{i}.{name}")
                                   for name, _, _ in pv.layout]) \
                if pv.layout else np.zeros(0)
            updated.append(c.with_params(pv.with_values(vals)))
        return replace(self, constraints=tuple(updated))

    def evaluate(self, x, side_info=None) -> float:
        return float(sum(w * c.evaluate(x, side_info)
                         for w, c in zip(self.weights, self.constraints)))

    def evaluate_batch(self, xs, side_info=None) -> np.ndarray:
        total = np.zeros(len(xs))
        for w, c in zip(self.weights, self.constraints):
            total += w * c.evaluate_batch(xs, side_info)
        return total

    def grad_params_batch(self, xs, side_info=None) -> np.ndarray:
        return np.concatenate(
            [w * c.grad_params_batch(xs, side_info)
             for w, c in zip(self.weights, self.constraints)], axis=1)

    def grad_params(self, x, side_info=None) -> ParamVector:
        flat = self.grad_params_batch([x], side_info)[0]
        return self.params.with_values(flat)
