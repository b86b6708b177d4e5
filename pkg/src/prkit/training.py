"""Joint learning of a generative model and its knowledge constraints.

One outer iteration updates the constraint parameters first and the model
parameters second. The constraint ascends the demonstration
log-likelihood of the tilted distribution,

    grad_phi = alpha * ( E_demos[grad_phi f] - E_q[grad_phi f] ),

with the q-expectation estimated by self-normalized importance sampling
from the base model (reward-learning view). The model descends its
original objective plus lam times the tilt term: explicit models ascend
E_q[grad_theta log p] (the distillation of q into p), implicit models
ascend the pathwise gradient of E_p[alpha f] (the reverse-KL surrogate,
whose gradient at the current parameters equals the reverse-KL gradient
because grad KL(p_theta || p_theta_t) vanishes at theta_t).

Baseline selectors: "fixed-constraint" freezes phi, "naive-eq5" replaces
the constraint update with ascent on E_q[f_phi] (fitting the constraint
to the model's own tilted samples), "gan-style" replaces q by the bare
model distribution in the constraint update, and "base-only" drops the
constraint entirely.

Runs are bit-reproducible: every stochastic step draws from a named
stream keyed by (seed, purpose, iteration), so a run resumed from a
checkpoint replays the remaining iterations exactly.
"""

import dataclasses
import hashlib
import io
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .constraints import ZeroConstraint
from .energy import (EnergyDistribution, exact_q, is_expectation,
                     self_normalized_weights)
from .models import is_explicit
from .params import ParamVector
from .rng import stream
from .spaces import enumerate_space

logger = logging.getLogger(__name__)

SELECTORS = ("full", "fixed-constraint", "naive-eq5", "gan-style", "base-only")

REPORT_COLUMNS = ("iteration", "loss_total", "loss_original", "kl_q_p",
                  "constraint_ll", "task_metric", "z_hat", "ess", "seconds")


class TrainDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int
    alpha: float = 1.0
    lam: float = 1.0
    step_theta: float = 0.1
    step_phi: float = 0.05
    n: int = 10_000
    selector: str = "full"
    seed: int = 0
    pr_batch: int = 32
    probe_n: int = 0           # draws per probe instance; 0 means use n
    probe_instances: int = 0   # fixed probe set size; 0 means use pr_batch
    momentum: float = 0.0
    checkpoint_every: int = 0
    checkpoint_dir: str = None

    def validate(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not (self.step_theta > 0 and self.step_phi > 0):
            raise ValueError("step sizes must be positive")
        if self.n < 100:
            raise ValueError("need n >= 100 samples per estimate")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.pr_batch < 1:
            raise ValueError("pr_batch must be positive")
        return self


@dataclass(frozen=True, eq=False)
class Instance:
    x: object
    side_info: object
    context: object


def _canonical_bytes(obj) -> bytes:
    if isinstance(obj, np.ndarray):
        return b"A" + str(obj.dtype).encode() + str(obj.shape).encode() + obj.tobytes()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        parts = [type(obj).__name__.encode()]
        for f in dataclasses.fields(obj):
            parts.append(_canonical_bytes(getattr(obj, f.name)))
        return b"D" + b"|".join(parts)
    if isinstance(obj, (tuple, list)):
        return b"L" + b"|".join(_canonical_bytes(v) for v in obj)
    return b"S" + repr(obj).encode()


@dataclass(eq=False)
class DemonstrationSet:
    """Samples from the data distribution with per-instance side information."""

    samples: object            # (n, ...) array or list
    side_infos: list
    contexts: object           # per-instance context, array or list
    split: np.ndarray          # "train" / "test" tags

    def __post_init__(self):
        n = len(self.samples)
        if n == 0:
            raise ValueError("demonstration set must be nonempty")
        if not (len(self.side_infos) == len(self.contexts) == len(self.split) == n):
            raise ValueError("samples, side infos, contexts, and split must align")
        if any(s is None for s in self.side_infos):
            raise ValueError("every demonstration carries side information")
        self.split = np.asarray(self.split)

    def __len__(self):
        return len(self.samples)

    def subset(self, tag: str) -> "DemonstrationSet":
        idx = np.flatnonzero(self.split == tag)
        if idx.size == 0:
            raise ValueError(f"no instances tagged {tag!r}")
        return DemonstrationSet(
            samples=self.samples[idx] if isinstance(self.samples, np.ndarray)
            else [self.samples[i] for i in idx],
            side_infos=[self.side_infos[i] for i in idx],
            contexts=self.contexts[idx] if isinstance(self.contexts, np.ndarray)
            else [self.contexts[i] for i in idx],
            split=self.split[idx])

    def instances(self, indices=None) -> list:
        if indices is None:
            indices = range(len(self))
        return [Instance(self.samples[i], self.side_infos[i], self.contexts[i])
                for i in indices]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(_canonical_bytes(np.asarray(self.samples, dtype=object)
                                       if isinstance(self.samples, list)
                                       else self.samples))
        for s in self.side_infos:
            digest.update(_canonical_bytes(s))
        digest.update(_canonical_bytes(np.asarray(self.contexts)))
        digest.update(_canonical_bytes(self.split))
        return digest.hexdigest()


@dataclass
class IterationRecord:
    iteration: int
    loss_total: float
    loss_original: float
    kl_q_p: float
    constraint_ll: float
    task_metric: float
    z_hat: float
    ess: float
    seconds: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    def append(self, record: IterationRecord):
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def _rows(self, include_timing: bool):
        cols = REPORT_COLUMNS if include_timing else REPORT_COLUMNS[:-1]
        yield ",".join(cols)
        for r in self.records:
            cells = [str(r.iteration)]
            cells += [repr(float(getattr(r, c))) for c in cols[1:]]
            yield ",".join(cells)

    def to_csv(self, path):
        with open(path, "w") as fh:
            for line in self._rows(include_timing=True):
                fh.write(line + "\n")

    def content_bytes(self) -> bytes:
        """Deterministic report content: every column except wall time."""
        buf = io.StringIO()
        for line in self._rows(include_timing=False):
            buf.write(line + "\n")
        return buf.getvalue().encode()


@dataclass
class TrainResult:
    report: TrainReport
    model: object
    constraint: object
    objective: object


class NllObjective:
    """Mean negative log-likelihood over the training demonstrations.

    Full batch: explicit desk-scale models evaluate the whole training
    set cheaply, which keeps the reported loss noise-free.
    """

    def loss_and_grad(self, model, train_set, instances, rng):
        xs = np.asarray(train_set.samples)
        contexts = _context_array(train_set)
        n = len(train_set)
        loss = -float(np.mean(model.log_prob_batch(xs, contexts)))
        grad = model.weighted_grad_log_prob(xs, np.full(n, -1.0 / n), contexts)
        return loss, grad

    def eval_loss(self, model, train_set, seed):
        xs = np.asarray(train_set.samples)
        return -float(np.mean(model.log_prob_batch(xs, _context_array(train_set))))

    def state_json(self):
        return None

    def load_state_json(self, text):
        pass


def _context_array(demo_set):
    contexts = demo_set.contexts
    if isinstance(contexts, np.ndarray) and contexts.dtype != object:
        return contexts
    return np.asarray(contexts)


def original_objective_grad(model, demos: DemonstrationSet, objective=None,
                            rng=None) -> ParamVector:
    """Gradient of the model's own objective over the demonstration set."""
    objective = objective or NllObjective()
    train_set = demos
    _, grad = objective.loss_and_grad(model, train_set, train_set.instances(),
                                      rng or stream(0, "objective"))
    return grad


def _proposal_batch(model, instances, n, rng):
    """One proposal pass covering every instance; slice i holds draws
    conditioned on instance i's context."""
    if all(inst.context is None for inst in instances):
        contexts = None
    else:
        stacked = np.asarray([inst.context for inst in instances])
        contexts = np.repeat(stacked, n, axis=0) if stacked.ndim > 1 \
            else np.repeat(stacked, n)
    draws = model.sample(n * len(instances), rng, context=contexts)
    return draws, contexts


def constraint_grad_maxent(model, constraint, alpha, instances, n, rng,
                           exact_space=None) -> ParamVector:
    """Ascent direction for the demo log-likelihood of the tilted model:
    alpha * (E_demos[grad_phi f] - E_q[grad_phi f]).

    The second expectation is the self-normalized IS estimate of Eq-type
    expectations (vector h = grad_phi f, weights exp(alpha f) over one
    batched proposal pass); pass exact_space to substitute exact
    enumeration.
    """
    if not instances:
        raise ValueError("need at least one demonstration instance")
    acc = np.zeros(constraint.params.size)
    if exact_space is not None:
        elements = enumerate_space(exact_space)
        for inst in instances:
            q = EnergyDistribution(model, constraint, alpha,
                                   inst.side_info, inst.context)
            table = exact_q(q, exact_space)
            e_q = table @ constraint.grad_params_batch(elements, inst.side_info)
            demo_term = constraint.grad_params(inst.x, inst.side_info).values
            acc += alpha * (demo_term - e_q)
        return constraint.params.with_values(acc / len(instances))
    draws, _ = _proposal_batch(model, instances, n, rng)
    for i, inst in enumerate(instances):
        part = draws[i * n:(i + 1) * n]
        q = EnergyDistribution(model, constraint, alpha, inst.side_info, inst.context)
        weights, _ = self_normalized_weights(q, part)
        e_q = weights @ np.asarray(constraint.grad_params_batch(part, inst.side_info))
        demo_term = constraint.grad_params(inst.x, inst.side_info).values
        acc += alpha * (demo_term - e_q)
    return constraint.params.with_values(acc / len(instances))


def constraint_grad_naive(model, constraint, alpha, instances, n, rng,
                          exact_space=None) -> ParamVector:
    # d/dphi E_q[f_phi] with q itself phi-dependent through the tilt:
    #   E_q[grad f] + alpha * ( E_q[f * grad f] - E_q[f] * E_q[grad f] )
    # i.e. the plain expectation plus the covariance term from the weights.
    if not instances:
        raise ValueError("need at least one instance")
    p_size = constraint.params.size
    acc = np.zeros(p_size)
    if exact_space is not None:
        elements = enumerate_space(exact_space)
        for inst in instances:
            q = EnergyDistribution(model, constraint, alpha,
                                   inst.side_info, inst.context)
            table = exact_q(q, exact_space)
            fv = np.asarray(constraint.evaluate_batch(elements, inst.side_info))
            g = np.asarray(constraint.grad_params_batch(elements, inst.side_info))
            e_g, e_fg, e_f = table @ g, table @ (fv[:, None] * g), table @ fv
            acc += e_g + alpha * (e_fg - e_f * e_g)
        return constraint.params.with_values(acc / len(instances))
    draws, _ = _proposal_batch(model, instances, n, rng)
    for i, inst in enumerate(instances):
        part = draws[i * n:(i + 1) * n]
        q = EnergyDistribution(model, constraint, alpha, inst.side_info, inst.context)
        weights, info = self_normalized_weights(q, part)
        fv = info["log_w"] / alpha
        g = np.asarray(constraint.grad_params_batch(part, inst.side_info))
        e_g = weights @ g
        e_fg = (weights * fv) @ g
        e_f = float(weights @ fv)
        acc += e_g + alpha * (e_fg - e_f * e_g)
    return constraint.params.with_values(acc / len(instances))


def constraint_grad_gan(model, constraint, alpha, instances, n, rng) -> ParamVector:
    """The tilted distribution replaced by the bare model: fake samples
    come from p unweighted, alpha * (E_demos[grad f] - E_p[grad f])."""
    if not instances:
        raise ValueError("need at least one instance")
    acc = np.zeros(constraint.params.size)
    draws, _ = _proposal_batch(model, instances, n, rng)
    for i, inst in enumerate(instances):
        part = draws[i * n:(i + 1) * n]
        demo_term = constraint.grad_params(inst.x, inst.side_info).values
        fake_term = np.asarray(
            constraint.grad_params_batch(part, inst.side_info)).mean(axis=0)
        acc += alpha * (demo_term - fake_term)
    return constraint.params.with_values(acc / len(instances))


def mstep_explicit(model, constraint, alpha, instances, n, rng,
                   exact_space=None, diag_out=None) -> ParamVector:
    """Ascent direction E_q[grad_theta log p] (distilling q into the model).

    Self-normalized weighted accumulation over one batched proposal pass,
    sharing the weight computation with is_expectation; exact_space
    substitutes the enumerated expectation for tests.
    """
    if not instances:
        raise ValueError("need at least one instance")
    if not is_explicit(model):
        raise TypeError("the forward-KL model update needs an explicit model")
    if exact_space is not None:
        elements = enumerate_space(exact_space)
        acc = np.zeros(model.params.size)
        for inst in instances:
            q = EnergyDistribution(model, constraint, alpha,
                                   inst.side_info, inst.context)
            table = exact_q(q, exact_space)
            acc += model.weighted_grad_log_prob(elements, table, inst.context).values
        return model.params.with_values(acc / len(instances))
    draws, contexts = _proposal_batch(model, instances, n, rng)
    big_weights = np.empty(n * len(instances))
    for i, inst in enumerate(instances):
        part = draws[i * n:(i + 1) * n]
        q = EnergyDistribution(model, constraint, alpha, inst.side_info, inst.context)
        weights, info = self_normalized_weights(q, part)
        big_weights[i * n:(i + 1) * n] = weights / len(instances)
        if diag_out is not None:
            e_tilt = float(weights @ info["log_w"])
            diag_out.append({"z_hat": info["z_hat"], "ess": info["ess"],
                             "kl_q_p": e_tilt - float(np.log(info["z_hat"]))})
    out = np.zeros(model.params.size)
    model.add_weighted_grad_log_prob(draws, big_weights, contexts, out)
    return ParamVector(out, model.params.layout)


def mstep_implicit(model, constraint, alpha, instances, n, rng,
                   diag_out=None) -> ParamVector:
    """Pathwise ascent direction for E_p[alpha f] on a pushforward model:
    mean over noise draws of alpha * (dg/dtheta)^T grad_x f(g(z))."""
    if not instances:
        raise ValueError("need at least one instance")
    if not hasattr(constraint, "grad_sample_batch"):
        raise TypeError("constraint has no sample gradient; cannot take the "
                        "pathwise update")
    children = rng.spawn(len(instances))
    acc = np.zeros(model.params.size)
    for inst, child in zip(instances, children):
        z = child.standard_normal((n, model.noise_dim))
        xs = model.push(z, inst.context)
        grads = constraint.grad_sample_batch(xs, inst.side_info)
        acc += model.vjp_params(z, inst.context, grads * (alpha / n)).values
        if diag_out is not None:
            log_w = alpha * np.asarray(constraint.evaluate_batch(xs, inst.side_info))
            shift = float(log_w.max())
            u = np.exp(log_w - shift)
            z_hat = float(np.exp(shift) * u.mean())
            e_tilt = float((u @ log_w) / u.sum())
            diag_out.append({"z_hat": z_hat,
                             "ess": float(u.sum() ** 2 / (u ** 2).sum()),
                             "kl_q_p": e_tilt - float(np.log(z_hat))})
    return model.params.with_values(acc / len(instances))


def score_ascent_grad(model, constraint, alpha, instances, n, rng) -> ParamVector:
    """Log-derivative ascent on E_p[alpha f] with a mean-f baseline.

    Used for the gan-style model update on explicit models, where the
    forward-KL step with q replaced by p is identically zero.
    """
    if not instances:
        raise ValueError("need at least one instance")
    draws, contexts = _proposal_batch(model, instances, n, rng)
    big_weights = np.empty(n * len(instances))
    for i, inst in enumerate(instances):
        part = draws[i * n:(i + 1) * n]
        fv = np.asarray(constraint.evaluate_batch(part, inst.side_info))
        big_weights[i * n:(i + 1) * n] = alpha * (fv - fv.mean()) / (
            n * len(instances))
    out = np.zeros(model.params.size)
    model.add_weighted_grad_log_prob(draws, big_weights, contexts, out)
    return ParamVector(out, model.params.layout)


def exact_constraint_log_likelihood(model, constraint, alpha, instances,
                                    space) -> float:
    """Exact E_demos[log q] with the per-instance partition functions
    computed by enumeration. The finite-difference target for the maxent
    constraint gradient."""
    elements = enumerate_space(space)
    total = 0.0
    for inst in instances:
        log_p = model.log_prob_batch(elements, inst.context)
        tilt = alpha * np.asarray(constraint.evaluate_batch(elements, inst.side_info))
        log_z = float(logsumexp(log_p + tilt))
        total += (model.log_prob(inst.x, inst.context)
                  + alpha * constraint.evaluate(inst.x, inst.side_info) - log_z)
    return total / len(instances)


def _axpy_update(params: ParamVector, step: float, velocity: np.ndarray,
                 momentum: float, grad: np.ndarray):
    velocity = momentum * velocity + grad
    return params.with_values(params.values + step * velocity), velocity


def _checkpoint(config, iteration, model, constraint, objective):
    os.makedirs(config.checkpoint_dir, exist_ok=True)
    base = os.path.join(config.checkpoint_dir, f"iter{iteration:05d}")
    model.params.save(base + "_theta.json")
    if constraint is not None:
        constraint.params.save(base + "_phi.json")
    state = objective.state_json()
    if state is not None:
        with open(base + "_aux.json", "w") as fh:
            fh.write(state)


def train(config: TrainConfig, model, constraint, demos: DemonstrationSet,
          objective=None, metric_fn=None, start_iteration: int = 0) -> TrainResult:
    """Run the alternating constraint/model loop and return the report.

    The selector decides which gradients fire; "base-only" never touches
    the constraint (which may then be None). Aborts with
    TrainDivergedError the moment any reported value goes non-finite.
    """
    config.validate()
    selector = config.selector
    if constraint is None:
        if selector != "base-only":
            raise ValueError(f"selector {selector!r} needs a constraint")
        constraint = ZeroConstraint()
    if objective is None:
        objective = NllObjective()
    train_set = demos.subset("train") if "train" in demos.split else demos
    try:
        test_set = demos.subset("test")
    except ValueError:
        test_set = train_set
    implicit = not is_explicit(model)
    explicit_update = mstep_implicit if implicit else mstep_explicit
    gan_update = mstep_implicit if implicit else score_ascent_grad
    vel_theta = np.zeros(model.params.size)
    vel_phi = np.zeros(constraint.params.size)
    report = TrainReport()
    seed = config.seed
    tilted = selector in ("full", "fixed-constraint", "naive-eq5")
    probe_instances = train_set.instances(
        range(min(config.probe_instances or config.pr_batch, len(train_set))))

    for t in range(start_iteration, config.iterations):
        tic = time.perf_counter()
        batch_rng = stream(seed, "batch", t)
        batch = min(config.pr_batch, len(train_set))
        idx = batch_rng.choice(len(train_set), size=batch, replace=False)
        instances = train_set.instances(idx)
        diag = []

        if selector == "full":
            g_phi = constraint_grad_maxent(model, constraint, config.alpha,
                                           instances, config.n, stream(seed, "phi", t))
        elif selector == "naive-eq5":
            g_phi = constraint_grad_naive(model, constraint, config.alpha,
                                          instances, config.n, stream(seed, "phi", t))
        elif selector == "gan-style":
            g_phi = constraint_grad_gan(model, constraint, config.alpha,
                                        instances, config.n, stream(seed, "phi", t))
        else:
            g_phi = None
        if g_phi is not None and g_phi.size:
            new_params, vel_phi = _axpy_update(
                constraint.params, config.step_phi, vel_phi,
                config.momentum, g_phi.values)
            constraint = constraint.with_params(new_params)

        _, g_orig = objective.loss_and_grad(model, train_set, instances,
                                            stream(seed, "objective", t))
        g_theta = g_orig.values.copy()
        if config.lam > 0 and selector != "base-only":
            update_op = gan_update if selector == "gan-style" else explicit_update
            if update_op is mstep_implicit:
                ascent = mstep_implicit(model, constraint, config.alpha, instances,
                                        config.n, stream(seed, "theta", t),
                                        diag_out=diag)
            elif update_op is mstep_explicit:
                ascent = mstep_explicit(model, constraint, config.alpha, instances,
                                        config.n, stream(seed, "theta", t),
                                        diag_out=diag)
            else:
                ascent = score_ascent_grad(model, constraint, config.alpha,
                                           instances, config.n, stream(seed, "theta", t))
            g_theta -= config.lam * ascent.values
        new_params, vel_theta = _axpy_update(
            model.params, -config.step_theta, vel_theta, config.momentum, g_theta)
        model = model.with_params(new_params)

        # end-of-iteration snapshot: probe streams are not keyed by t, so
        # successive losses share their random numbers and move smoothly
        loss_orig = objective.eval_loss(model, train_set, seed)
        ess = float(np.mean([d["ess"] for d in diag])) if diag else float(config.n)
        if tilted and config.lam > 0:
            z_hat, kl_q_p, constraint_ll, pr_term = _tilt_probe(
                model, constraint, config.alpha, probe_instances,
                config.probe_n or config.n, seed, implicit)
            loss_total = loss_orig + config.lam * pr_term
        else:
            z_hat, kl_q_p = 1.0, 0.0
            constraint_ll = _constraint_log_likelihood_probe(
                model, constraint, config.alpha, probe_instances, 1.0, implicit)
            loss_total = loss_orig
        metric = metric_fn(model, test_set) if metric_fn is not None else loss_orig
        record = IterationRecord(
            iteration=t, loss_total=float(loss_total), loss_original=float(loss_orig),
            kl_q_p=kl_q_p, constraint_ll=constraint_ll, task_metric=float(metric),
            z_hat=z_hat, ess=ess, seconds=time.perf_counter() - tic)
        _require_finite(record)
        report.append(record)
        if config.checkpoint_every and (t + 1) % config.checkpoint_every == 0:
            _checkpoint(config, t + 1, model, constraint, objective)

    return TrainResult(report=report, model=model, constraint=constraint,
                       objective=objective)


def _tilt_probe(model, constraint, alpha, probe_instances, n, seed, implicit):
    """Deterministically-seeded estimates of the tilt quantities on a
    fixed probe set: geometric-mean Z_hat, the KL(q||p) estimate, the demo
    log-likelihood probe, and the model's constraint training term (the
    loss the parameter update actually descends: -E_q[log p] for explicit
    models, -E_p[alpha f] for pushforwards). Streams are keyed by
    instance only, so consecutive iterations share their random numbers
    and the probes move smoothly with the parameters."""
    log_zs, kls, tilts, pr_terms = [], [], [], []
    for i, inst in enumerate(probe_instances):
        q = EnergyDistribution(model, constraint, alpha, inst.side_info, inst.context)
        draws, _ = _proposal_batch(model, [inst], n, stream(seed, "z-probe", i))
        weights, info = self_normalized_weights(q, draws)
        log_z = float(np.log(info["z_hat"]))
        e_tilt = float(weights @ info["log_w"])
        log_zs.append(log_z)
        kls.append(e_tilt - log_z)
        tilts.append(alpha * constraint.evaluate(inst.x, inst.side_info) - log_z)
        if implicit:
            pr_terms.append(-float(np.mean(info["log_w"])))
        else:
            pr_terms.append(-float(
                weights @ model.log_prob_batch(draws, inst.context)))
    z_hat = float(np.exp(np.mean(log_zs)))
    constraint_ll = float(np.mean(tilts))
    if not implicit:
        xs = np.asarray([inst.x for inst in probe_instances])
        contexts = np.asarray([inst.context for inst in probe_instances])
        constraint_ll += float(np.mean(model.log_prob_batch(xs, contexts)))
    return z_hat, float(np.mean(kls)), constraint_ll, float(np.mean(pr_terms))


def _constraint_log_likelihood_probe(model, constraint, alpha, instances,
                                     z_hat, implicit) -> float:
    """Per-iteration estimate of E_demos[log q] over the current batch.

    Implicit models have no base density; the probe then reports the
    density-free part alpha*f(x_d) - log Z_hat.
    """
    fv = float(np.mean([constraint.evaluate(inst.x, inst.side_info)
                        for inst in instances]))
    value = alpha * fv - float(np.log(z_hat))
    if not implicit:
        xs = np.asarray([inst.x for inst in instances])
        contexts = np.asarray([inst.context for inst in instances])
        value += float(np.mean(model.log_prob_batch(xs, contexts)))
    return value


def _require_finite(record: IterationRecord):
    for name in REPORT_COLUMNS:
        value = getattr(record, name)
        if not np.isfinite(value):
            raise TrainDivergedError(
                f"non-finite {name}={value!r} at iteration {record.iteration}")
