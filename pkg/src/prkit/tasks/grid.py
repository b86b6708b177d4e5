"""Grid rearrangement task: move source parts to key-cell positions.

Each instance is a triple (source grid, keypoints, target grid). The
source carries `parts` 3x3 patches with per-instance appearance jitter,
parked at fixed slots; the target places those patches at seeded keypoint
anchors over a constant background, plus bounded noise. Ground-truth
per-cell part labels of the target are retained for constraint
pre-training. With noise 0 the target is an exact deterministic function
of (source, keypoints).

The base model is an implicit pushforward conditioned on features built
from the source pixels and keypoint one-hot maps; its original objective
is squared reconstruction distance (L1 behind a flag) plus an optional
learned binary-discriminator confusion term.
"""

import json
from dataclasses import dataclass

import numpy as np

from ..constraints import GridSideInfo, PartConsistencyConstraint
from ..models import ImplicitPushforwardModel
from ..params import ParamVector
from ..rng import stream
from ..training import DemonstrationSet

PART_SIZE = 3
BACKGROUND = 0.05
PART_BASE_INTENSITY = (0.9, 0.6, 0.35, 0.75)
APPEARANCE_JITTER = 0.08


def _part_patch(part: int, intensity: float) -> np.ndarray:
    """3x3 appearance stamp; a mild per-part gradient keeps parts
    distinguishable by a patch classifier."""
    rows = np.linspace(-0.05, 0.05, PART_SIZE)[:, None]
    cols = np.linspace(-0.03, 0.03, PART_SIZE)[None, :]
    return np.clip(intensity + rows + ((-1) ** part) * cols, 0.0, 1.0)


def _source_slots(parts: int, height: int, width: int) -> list:
    slots = []
    r, c = 1, 1
    for _ in range(parts):
        if c + PART_SIZE > width - 1:
            r, c = r + PART_SIZE + 1, 1
        if r + PART_SIZE > height:
            raise ValueError("grid too small for the requested parts")
        slots.append((r, c))
        c += PART_SIZE + 1
    return slots


def _draw_keypoints(rng, parts, height, width):
    """Non-overlapping part anchors, rejection-sampled deterministically."""
    while True:
        anchors = [(int(rng.integers(0, height - PART_SIZE + 1)),
                    int(rng.integers(0, width - PART_SIZE + 1)))
                   for _ in range(parts)]
        ok = all(abs(a[0] - b[0]) >= PART_SIZE or abs(a[1] - b[1]) >= PART_SIZE
                 for i, a in enumerate(anchors) for b in anchors[i + 1:])
        if ok:
            return anchors


def generate_grid_dataset(height: int, width: int, parts: int, noise: float,
                          n: int, seed: int, n_test: int = 0,
                          intensity_shift: float = 0.0,
                          stream_name: str = "grid-data") -> DemonstrationSet:
    """Synthetic triples; per-cell part labels ride along in the side info."""
    if not (4 <= height <= 16 and 4 <= width <= 16):
        raise ValueError("grid sides must be between 4 and 16")
    if not 1 <= parts <= 4:
        raise ValueError("need between 1 and 4 parts")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = stream(seed, stream_name)
    slots = _source_slots(parts, height, width)
    total = n + n_test
    samples = np.zeros((total, height, width))
    side_infos, contexts = [], []
    for index in range(total):
        intensities = [np.clip(PART_BASE_INTENSITY[k] + intensity_shift
                               + rng.uniform(-APPEARANCE_JITTER, APPEARANCE_JITTER),
                               0.1, 1.0) for k in range(parts)]
        patches = [_part_patch(k, intensities[k]) for k in range(parts)]
        source = np.full((height, width), BACKGROUND)
        for k, (r, c) in enumerate(slots):
            source[r:r + PART_SIZE, c:c + PART_SIZE] = patches[k]
        anchors = _draw_keypoints(rng, parts, height, width)
        target = np.full((height, width), BACKGROUND)
        labels = np.zeros((height, width), dtype=np.int64)
        for k, (r, c) in enumerate(anchors):
            target[r:r + PART_SIZE, c:c + PART_SIZE] = patches[k]
            labels[r:r + PART_SIZE, c:c + PART_SIZE] = k + 1
        if noise > 0:
            source = np.clip(source + rng.uniform(-noise, noise, source.shape), 0, 1)
            target = np.clip(target + rng.uniform(-noise, noise, target.shape), 0, 1)
        side_infos.append(GridSideInfo(source=source, keypoints=tuple(anchors),
                                       target=target, labels=labels))
        contexts.append(context_features(source, anchors, height, width))
        samples[index] = target
    split = np.array(["train"] * n + ["test"] * n_test)
    return DemonstrationSet(samples=samples, side_infos=side_infos,
                            contexts=contexts, split=split)


def context_features(source: np.ndarray, keypoints, height: int,
                     width: int) -> np.ndarray:
    """Model conditioning: source pixels, keypoint one-hot maps, bias."""
    maps = []
    for r, c in keypoints:
        m = np.zeros((height, width))
        m[r:r + PART_SIZE, c:c + PART_SIZE] = 1.0
        maps.append(m.ravel())
    return np.concatenate([np.asarray(source).ravel()] + maps + [np.ones(1)])


def feature_dim(height: int, width: int, parts: int) -> int:
    return height * width * (parts + 1) + 1


def build_model(height: int, width: int, parts: int,
                noise_dim: int = 4) -> ImplicitPushforwardModel:
    return ImplicitPushforwardModel(height=height, width=width,
                                    noise_dim=noise_dim,
                                    feature_dim=feature_dim(height, width, parts))


def build_constraint(height: int, width: int, parts: int,
                     seed: int) -> PartConsistencyConstraint:
    return PartConsistencyConstraint.initialized(
        height, width, parts + 1, stream(seed, "grid-constraint-init"))


def pretrain_part_classifier(constraint: PartConsistencyConstraint,
                             labeled: DemonstrationSet, steps: int = 300,
                             step_size: float = 0.5) -> PartConsistencyConstraint:
    """Supervised fit of the part classifier on a labeled grid set.

    Plain full-batch gradient descent on the per-cell cross entropy. The
    labeled set typically comes from generate_grid_dataset with an
    intensity shift, standing in for pre-training on out-of-domain data.
    """
    grids = np.asarray(labeled.samples)
    labels = np.stack([s.labels for s in labeled.side_infos]).reshape(len(labeled), -1)
    feats = constraint.patches(grids)                  # (n, cells, 10)
    flat_feats = feats.reshape(-1, feats.shape[-1])
    flat_labels = labels.ravel()
    w = constraint.classifier.copy()
    n = flat_labels.size
    onehot = np.zeros((n, w.shape[0]))
    onehot[np.arange(n), flat_labels] = 1.0
    for _ in range(steps):
        logits = flat_feats @ w.T
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        grad = (probs - onehot).T @ flat_feats / n
        w -= step_size * grad
    return constraint.with_params(constraint.params.with_values(w.ravel()))


class GridObjective:
    """Reconstruction loss for the implicit grid model.

    Mean squared distance between generated and true grids (mean absolute
    with use_l1), plus adv_weight times a non-saturating confusion term
    against a learned linear binary discriminator. The discriminator is
    refreshed with one logistic-regression step per call; its parameters
    are the objective's mutable state.
    """

    def __init__(self, height: int, width: int, adv_weight: float = 0.05,
                 use_l1: bool = False, noise_draws: int = 4,
                 disc_step: float = 0.2, eval_instances: int = 128):
        self.height = height
        self.width = width
        self.adv_weight = adv_weight
        self.use_l1 = use_l1
        self.noise_draws = noise_draws
        self.disc_step = disc_step
        self.eval_instances = eval_instances
        self.disc = np.zeros(height * width + 1)

    def _disc_score(self, grids: np.ndarray) -> np.ndarray:
        flat = grids.reshape(grids.shape[0], -1)
        return flat @ self.disc[:-1] + self.disc[-1]

    def _generate(self, model, instances, rng):
        k = self.noise_draws
        zs, outs, targets = [], [], []
        for inst in instances:
            z = rng.standard_normal((k, model.noise_dim))
            zs.append(z)
            outs.append(model.push(z, inst.context))
            targets.append(np.broadcast_to(np.asarray(inst.side_info.target),
                                           (k, self.height, self.width)))
        return zs, outs, targets

    def loss_and_grad(self, model, train_set, instances, rng):
        zs, outs, targets = self._generate(model, instances, rng)
        cells = self.height * self.width
        total = len(instances) * self.noise_draws
        loss = 0.0
        grad = np.zeros(model.params.size)
        gen_flat, true_flat = [], []
        for inst, z, x, y in zip(instances, zs, outs, targets):
            diff = x - y
            if self.use_l1:
                loss += float(np.abs(diff).sum()) / (cells * total)
                cot = np.sign(diff) / (cells * total)
            else:
                loss += float((diff ** 2).sum()) / (cells * total)
                cot = 2.0 * diff / (cells * total)
            if self.adv_weight > 0:
                score = self._disc_score(x)
                d = 1.0 / (1.0 + np.exp(-score))
                loss += self.adv_weight * float(
                    -np.log(np.clip(d, 1e-12, None)).sum()) / total
                conf = -(1.0 - d)[:, None] * self.disc[:-1][None, :]
                cot = cot + self.adv_weight * conf.reshape(x.shape) / total
            grad += model.vjp_params(z, inst.context, cot).values
            gen_flat.append(x.reshape(x.shape[0], -1))
            true_flat.append(y.reshape(y.shape[0], -1))
        if self.adv_weight > 0:
            self._update_discriminator(np.concatenate(gen_flat),
                                       np.concatenate(true_flat))
        return loss, ParamVector(grad, model.params.layout)

    def _update_discriminator(self, gen_flat: np.ndarray, true_flat: np.ndarray):
        xs = np.concatenate([gen_flat, true_flat])
        ys = np.concatenate([np.zeros(len(gen_flat)), np.ones(len(true_flat))])
        feats = np.concatenate([xs, np.ones((len(xs), 1))], axis=1)
        d = 1.0 / (1.0 + np.exp(-(feats @ self.disc)))
        self.disc -= self.disc_step * ((d - ys) @ feats) / len(xs)

    def eval_loss(self, model, train_set, seed):
        """Deterministic probe loss on a fixed subset with fixed noise."""
        count = min(self.eval_instances, len(train_set))
        instances = train_set.instances(range(count))
        rng = stream(seed, "grid-loss-eval")
        loss = 0.0
        cells = self.height * self.width
        total = count * self.noise_draws
        gen_scores = []
        for inst in instances:
            z = rng.standard_normal((self.noise_draws, model.noise_dim))
            x = model.push(z, inst.context)
            diff = x - np.asarray(inst.side_info.target)
            if self.use_l1:
                loss += float(np.abs(diff).sum()) / (cells * total)
            else:
                loss += float((diff ** 2).sum()) / (cells * total)
            if self.adv_weight > 0:
                gen_scores.append(self._disc_score(x))
        if self.adv_weight > 0:
            d = 1.0 / (1.0 + np.exp(-np.concatenate(gen_scores)))
            loss += self.adv_weight * float(-np.log(np.clip(d, 1e-12, None)).mean())
        return loss

    def state_json(self):
        return json.dumps({"disc": self.disc.tolist()})

    def load_state_json(self, text):
        self.disc = np.array(json.loads(text)["disc"], dtype=np.float64)
