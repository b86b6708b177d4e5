"""Template-infill task: generate token sequences that complete a template.

Synthetic sentences come from a hidden first-order Markov generator with
banded transitions, so the masked-out content is statistically
predictable from its surroundings. Each instance pairs the full sequence
with a template (the sequence with one or more spans masked) and the
held-out infill; plugging the infill back into the template reconstructs
the sequence exactly.

The generative model conditions on a small discrete context id (the
mask-span placement); the template's token content is consumed only by
the matching constraint through the side information.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import softmax

from ..constraints import MASK, InfillSideInfo, MatchingConstraint
from ..models import AutoregressiveSequenceModel
from ..rng import stream
from ..training import DemonstrationSet

ENUMERATION_GUARD = (12, 7)  # vocab, length caps keep exact oracles feasible


@dataclass(frozen=True)
class MaskPolicy:
    kind: str = "span"         # "span" or "none"
    span_len: int = 2
    num_spans: int = 1

    def __post_init__(self):
        if self.kind not in ("span", "none"):
            raise ValueError("mask policy kind must be 'span' or 'none'")
        if self.kind == "span" and (self.span_len < 1 or self.num_spans < 1):
            raise ValueError("span policy needs positive span_len and num_spans")

    @classmethod
    def from_dict(cls, doc) -> "MaskPolicy":
        if doc is None:
            return cls()
        if isinstance(doc, MaskPolicy):
            return doc
        return cls(**doc)


def span_layouts(length: int, policy: MaskPolicy) -> list:
    """All valid span-start layouts, each a tuple of (start, span_len).

    The layout index doubles as the model's context id.
    """
    if policy.kind == "none":
        return [()]
    starts = range(length - policy.span_len + 1)
    layouts = []
    for combo in combinations(starts, policy.num_spans):
        spans = tuple((s, policy.span_len) for s in sorted(combo))
        if all(b_start >= a_start + a_len
               for (a_start, a_len), (b_start, _) in zip(spans, spans[1:])):
            layouts.append(spans)
    if not layouts:
        raise ValueError("mask policy does not fit in the sequence length")
    return layouts


def num_contexts(length: int, policy: MaskPolicy) -> int:
    return len(span_layouts(length, policy))


def _markov_tables(vocab: int, length: int, seed: int):
    """Hidden generator: position-inhomogeneous Markov chain.

    Each position carries its own strongly non-uniform token bias plus a
    banded dependence on the previous token, so masked spans are
    predictable both from their position and from their neighborhood.
    """
    rng = stream(seed, "infill-chain")
    init = softmax(1.3 * rng.standard_normal(vocab))
    band = np.full((vocab, vocab), 0.0)
    for i in range(vocab):
        for d in (0, 1):
            band[i, (i + d) % vocab] = 1.0
    tables = []
    for _ in range(1, length):
        position_bias = 1.3 * rng.standard_normal(vocab)
        logits = position_bias[None, :] + 0.3 * band \
            + 0.15 * rng.standard_normal((vocab, vocab))
        tables.append(softmax(logits, axis=1))
    return init, np.stack(tables) if tables else np.zeros((0, vocab, vocab))


def generate_infill_dataset(vocab: int, length: int, mask_policy, n: int,
                            seed: int, n_test: int = 0) -> DemonstrationSet:
    """Synthetic (sequence, template, infill) triples, deterministic per seed."""
    if not (2 <= vocab <= ENUMERATION_GUARD[0] and 1 <= length <= ENUMERATION_GUARD[1]):
        raise ValueError(
            f"need vocab <= {ENUMERATION_GUARD[0]} and length <= "
            f"{ENUMERATION_GUARD[1]} to keep the space enumerable")
    if n < 1 or n_test < 0:
        raise ValueError("need n >= 1 and n_test >= 0")
    policy = MaskPolicy.from_dict(mask_policy)
    layouts = span_layouts(length, policy)
    total = n + n_test
    init_probs, trans = _markov_tables(vocab, length, seed)

    seq_rng = stream(seed, "infill-data")
    xs = np.zeros((total, length), dtype=np.int64)
    u = seq_rng.random((total, length))
    cdf0 = np.cumsum(init_probs)
    cdf0[-1] = 1.0
    xs[:, 0] = np.searchsorted(cdf0, u[:, 0], side="right").clip(max=vocab - 1)
    for i in range(1, length):
        cdf = np.cumsum(trans[i - 1], axis=1)
        cdf[:, -1] = 1.0
        rows = cdf[xs[:, i - 1]]
        xs[:, i] = (u[:, i:i + 1] > rows).sum(axis=1)

    mask_rng = stream(seed, "infill-mask")
    contexts = mask_rng.integers(0, len(layouts), size=total)
    side_infos = []
    for row, ctx in zip(xs, contexts):
        spans = layouts[ctx]
        template = row.copy()
        infill = []
        for start, slen in spans:
            infill.append(tuple(int(t) for t in row[start:start + slen]))
            template[start:start + slen] = MASK
        side_infos.append(InfillSideInfo(template=tuple(int(t) for t in template),
                                         spans=spans, infill=tuple(infill)))
    split = np.array(["train"] * n + ["test"] * n_test)
    return DemonstrationSet(samples=xs, side_infos=side_infos,
                            contexts=contexts, split=split)


def build_model(vocab: int, length: int, mask_policy, seed: int = 0,
                init_scale: float = 1.2,
                prefix_mode: str = "last-token") -> AutoregressiveSequenceModel:
    """Sequence model with seeded random initial logits.

    A deliberately biased starting point: early samples are then poor,
    which is the regime where fitting the constraint to the model's own
    tilted samples entrenches mistakes while demonstration-anchored
    constraint learning corrects them.
    """
    policy = MaskPolicy.from_dict(mask_policy)
    model = AutoregressiveSequenceModel(
        vocab=vocab, length=length, num_contexts=num_contexts(length, policy),
        prefix_mode=prefix_mode)
    if init_scale > 0:
        rng = stream(seed, "infill-model-init")
        model = model.with_params(model.params.with_values(
            init_scale * rng.standard_normal(model.params.size)))
    return model


def build_constraint(vocab: int, seed: int, embed_dim: int = 3,
                     hidden_dim: int = 6, scale: float = 0.7) -> MatchingConstraint:
    """Small recovery scorer. The capacity is deliberately tight: a tiny
    head saturates quickly, which both keeps the learned tilt stable late
    in training and keeps the score spread bounded. The init scale is
    large enough that scores are span-sensitive from the first step."""
    return MatchingConstraint.initialized(
        vocab, stream(seed, "infill-constraint-init"),
        embed_dim=embed_dim, hidden_dim=hidden_dim, scale=scale)


def greedy_decode(model: AutoregressiveSequenceModel, context: int) -> np.ndarray:
    """Deterministic most-likely-token rollout for a context id."""
    out = np.zeros(model.length, dtype=np.int64)
    prefix = np.zeros(1, dtype=np.int64)
    last = np.zeros(1, dtype=np.int64)
    for i in range(model.length):
        bucket = model._bucket(prefix, i, last)[0]
        logits = model.table(i)[bucket, int(context)]
        out[i] = int(np.argmax(logits))
        prefix = prefix * model.vocab + out[i]
        last[0] = out[i]
    return out
