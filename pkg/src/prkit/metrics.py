"""Task metrics: perplexity, infill exact match, and the grid analogs.

grid-ssim-lite is a single-scale structural-similarity score over 3x3
windows with the usual stabilizers C1 = 0.01^2, C2 = 0.03^2 for a unit
dynamic range; values fall in [-1, 1] and a grid scores 1 against itself.
grid-part-consistency is 1 minus the mean absolute difference between
generated and true values over the part-labeled cells.
"""

import numpy as np

from .models import is_explicit
from .rng import stream

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

METRIC_NAMES = ("perplexity", "infill-exact-match",
                "grid-ssim-lite", "grid-part-consistency")

METRIC_NOISE_SEED = 90210    # fixed stream for generation-based metrics
METRIC_NOISE_DRAWS = 4


class MetricMismatchError(TypeError):
    pass


def perplexity(model, demos) -> float:
    """exp(mean per-token negative log-likelihood) over the set."""
    if not is_explicit(model):
        raise MetricMismatchError("perplexity needs an explicit model")
    xs = np.asarray(demos.samples)
    contexts = np.asarray(demos.contexts)
    log_probs = model.log_prob_batch(xs, contexts)
    tokens_per = xs.shape[1] if xs.ndim > 1 else 1
    return float(np.exp(-log_probs.mean() / tokens_per))


def infill_exact_match(model, demos) -> float:
    """Fraction of masked spans whose greedy decode reproduces the truth."""
    from .tasks.infill import greedy_decode
    if not is_explicit(model):
        raise MetricMismatchError("infill-exact-match needs an explicit model")
    hits = total = 0
    decoded = {}
    for inst in demos.instances():
        ctx = int(inst.context)
        if ctx not in decoded:
            decoded[ctx] = greedy_decode(model, ctx)
        seq = decoded[ctx]
        for (start, slen), truth in zip(inst.side_info.spans, inst.side_info.infill):
            total += 1
            if tuple(int(t) for t in seq[start:start + slen]) == tuple(truth):
                hits += 1
    return hits / total if total else 1.0


def ssim_lite(a: np.ndarray, b: np.ndarray) -> float:
    """Mean single-scale SSIM over all 3x3 windows of two grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("need two grids of identical shape")
    h, w = a.shape
    if h < 3 or w < 3:
        raise ValueError("grids must be at least 3x3")
    windows_a = np.lib.stride_tricks.sliding_window_view(a, (3, 3)).reshape(-1, 9)
    windows_b = np.lib.stride_tricks.sliding_window_view(b, (3, 3)).reshape(-1, 9)
    mu_a = windows_a.mean(axis=1)
    mu_b = windows_b.mean(axis=1)
    var_a = windows_a.var(axis=1)
    var_b = windows_b.var(axis=1)
    cov = ((windows_a - mu_a[:, None]) * (windows_b - mu_b[:, None])).mean(axis=1)
    score = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2))
    return float(score.mean())


def _generated_grids(model, inst):
    rng = stream(METRIC_NOISE_SEED, "grid-metric")
    z = rng.standard_normal((METRIC_NOISE_DRAWS, model.noise_dim))
    return model.push(z, inst.context)


def grid_ssim_lite(model, demos) -> float:
    if is_explicit(model):
        raise MetricMismatchError("grid metrics need the pushforward model")
    scores = []
    for inst in demos.instances():
        target = np.asarray(inst.side_info.target)
        scores += [ssim_lite(x, target) for x in _generated_grids(model, inst)]
    return float(np.mean(scores))


def grid_part_consistency(model, demos) -> float:
    """Mean over part cells of 1 - |generated - true|, averaged over
    instances and a fixed set of noise draws."""
    if is_explicit(model):
        raise MetricMismatchError("grid metrics need the pushforward model")
    scores = []
    for inst in demos.instances():
        target = np.asarray(inst.side_info.target)
        mask = np.asarray(inst.side_info.labels) > 0
        if not mask.any():
            continue
        for x in _generated_grids(model, inst):
            scores.append(1.0 - float(np.abs(x - target)[mask].mean()))
    return float(np.mean(scores))


_DISPATCH = {
    "perplexity": perplexity,
    "infill-exact-match": infill_exact_match,
    "grid-ssim-lite": grid_ssim_lite,
    "grid-part-consistency": grid_part_consistency,
}


def compute_metric(kind: str, model, demos) -> float:
    if kind not in _DISPATCH:
        raise MetricMismatchError(
            f"unknown metric {kind!r}; known: {METRIC_NAMES}")
    return _DISPATCH[kind](model, demos)


def make_metric_fn(kind: str):
    def metric(model, demos):
        return compute_metric(kind, model, demos)
    return metric
