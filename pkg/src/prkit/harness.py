"""Config-driven experiment runner for the desk-scale tasks.

Miniaturizes the two applications (template infill, grid rearrangement)
plus the tabular MDP bridge, with selector grids reproducing the ablation
roles: base model, gan-style constraint, naively updated constraint,
fixed pre-trained constraint, and the full reward-learned constraint.

Every run writes metrics.csv (the training report) and summary.json
{task, selector, seed, final_metrics, wall_time} into its output
directory; sweeps add plot_data.csv with one loss column per variant.
"""

import copy
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import compute_metric, make_metric_fn
from .rng import stream
from .tasks import grid as grid_task
from .tasks import infill as infill_task
from .tasks import mdp_bridge
from .training import TrainConfig, TrainReport, TrainResult, train

TASKS = ("infill", "grid", "mdp-bridge")


class ConfigError(ValueError):
    pass


DEFAULT_DATA = {
    "infill": {
        "vocab": 8, "length": 6,
        "mask_policy": {"kind": "span", "span_len": 2, "num_spans": 1},
        "n_train": 5000, "n_test": 1000,
    },
    "grid": {
        "height": 12, "width": 12, "parts": 3, "noise": 0.05,
        "n_train": 400, "n_test": 120,
        "pretrain_n": 160, "pretrain_shift": -0.18, "pretrain_noise": 0.15,
        "adv_weight": 0.05, "use_l1": False, "noise_draws": 2,
    },
    "mdp-bridge": {
        "num_states": 6, "num_actions": 4, "num_demos": 4000,
    },
}

DEFAULT_TRAIN = {
    "infill": {"iterations": 200, "alpha": 2.0, "lam": 2.0, "step_theta": 0.3,
               "step_phi": 0.15, "n": 192, "pr_batch": 32, "probe_n": 1024},
    "grid": {"iterations": 200, "alpha": 3.0, "lam": 0.03, "step_theta": 80.0,
             "step_phi": 0.15, "n": 128, "pr_batch": 16, "probe_n": 128,
             "probe_instances": 8},
    "mdp-bridge": {"iterations": 400, "alpha": 1.0, "lam": 1.0,
                   "step_theta": 4.0, "step_phi": 4.0, "n": 1000, "pr_batch": 1},
}

DEFAULT_METRIC = {
    "infill": "perplexity",
    "grid": "grid-part-consistency",
    "mdp-bridge": "perplexity",
}


@dataclass
class ExperimentConfig:
    task: str
    train: TrainConfig
    data: dict
    out_dir: str
    metric: str = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.metric is None:
            self.metric = DEFAULT_METRIC[self.task]
        try:
            self.train.validate()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        missing = set(DEFAULT_DATA[self.task]) - set(self.data)
        if missing:
            raise ConfigError(f"data block missing keys: {sorted(missing)}")

    def to_dict(self) -> dict:
        doc = {"task": self.task, "train": asdict(self.train),
               "data": copy.deepcopy(self.data), "out_dir": self.out_dir,
               "metric": self.metric}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict) or "task" not in doc:
            raise ConfigError("config must be an object with a 'task' field")
        task = doc["task"]
        if task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
        data = {**DEFAULT_DATA[task], **doc.get("data", {})}
        train_kwargs = {**DEFAULT_TRAIN[task], **doc.get("train", {})}
        try:
            train_cfg = TrainConfig(**train_kwargs)
        except TypeError as err:
            raise ConfigError(f"bad train block: {err}") from err
        return cls(task=task, train=train_cfg, data=data,
                   out_dir=doc.get("out_dir", "runs"),
                   metric=doc.get("metric"))

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_dict(doc)


def default_config(task: str, seed: int = 0, out_dir: str = "runs",
                   selector: str = "full", **train_overrides) -> ExperimentConfig:
    doc = {"task": task, "out_dir": out_dir,
           "train": {"seed": seed, "selector": selector, **train_overrides}}
    return ExperimentConfig.from_dict(doc)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: TrainReport
    final_metrics: dict
    summary: dict
    out_dir: str
    model: object = None
    constraint: object = None
    extras: dict = field(default_factory=dict)


def _build_infill(config: ExperimentConfig):
    d = config.data
    seed = config.train.seed
    demos = infill_task.generate_infill_dataset(
        d["vocab"], d["length"], d["mask_policy"], d["n_train"], seed,
        n_test=d["n_test"])
    model = infill_task.build_model(d["vocab"], d["length"], d["mask_policy"],
                                    seed=seed)
    constraint = None
    if config.train.selector != "base-only":
        constraint = infill_task.build_constraint(d["vocab"], seed)
    return demos, model, constraint, None


def _build_grid(config: ExperimentConfig):
    d = config.data
    seed = config.train.seed
    demos = grid_task.generate_grid_dataset(
        d["height"], d["width"], d["parts"], d["noise"], d["n_train"], seed,
        n_test=d["n_test"])
    model = grid_task.build_model(d["height"], d["width"], d["parts"])
    constraint = None
    if config.train.selector != "base-only":
        constraint = grid_task.build_constraint(d["height"], d["width"],
                                                d["parts"], seed)
        pretrain = grid_task.generate_grid_dataset(
            d["height"], d["width"], d["parts"], d["pretrain_noise"],
            d["pretrain_n"], seed, intensity_shift=d["pretrain_shift"],
            stream_name="grid-pretrain")
        constraint = grid_task.pretrain_part_classifier(constraint, pretrain)
    objective = grid_task.GridObjective(
        d["height"], d["width"], adv_weight=d["adv_weight"],
        use_l1=d["use_l1"], noise_draws=d["noise_draws"])
    return demos, model, constraint, objective


def build_task(config: ExperimentConfig):
    if config.task == "infill":
        return _build_infill(config)
    if config.task == "grid":
        return _build_grid(config)
    raise ConfigError(f"build_task does not handle {config.task!r}")


def _write_outputs(config, report, final_metrics, wall_time, out_dir, extras):
    os.makedirs(out_dir, exist_ok=True)
    report.to_csv(os.path.join(out_dir, "metrics.csv"))
    summary = {
        "task": config.task,
        "selector": config.train.selector,
        "seed": config.train.seed,
        "final_metrics": final_metrics,
        "wall_time": wall_time,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    for name, doc in extras.items():
        with open(os.path.join(out_dir, f"{name}.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    return summary


def _run_mdp(config: ExperimentConfig) -> ExperimentResult:
    d = config.data
    instance = mdp_bridge.build_instance(
        d["num_states"], d["num_actions"], config.train.seed,
        num_demos=d["num_demos"], alpha=config.train.alpha)
    tic = time.perf_counter()
    report, fitted_q, tv = mdp_bridge.run_irl_training(
        instance, config.train.iterations, step_size=config.train.step_phi)
    wall = time.perf_counter() - tic
    final_metrics = {"perplexity": report.records[-1].task_metric,
                     "irl_tv": tv[-1]}
    extras = {"correspondence": mdp_bridge.make_correspondence_report(instance)}
    summary = _write_outputs(config, report, final_metrics, wall,
                             config.out_dir, extras)
    return ExperimentResult(config=config, report=report,
                            final_metrics=final_metrics, summary=summary,
                            out_dir=config.out_dir, extras=extras)


def run_experiment(config: ExperimentConfig,
                   start_iteration: int = 0, initial=None) -> ExperimentResult:
    """Train the selected variant, evaluate the test metric, write outputs."""
    if config.task == "mdp-bridge":
        return _run_mdp(config)
    demos, model, constraint, objective = build_task(config)
    if initial is not None:
        model, constraint, objective = initial
    metric_fn = make_metric_fn(config.metric)
    tic = time.perf_counter()
    result = train(config.train, model, constraint, demos,
                   objective=objective, metric_fn=metric_fn,
                   start_iteration=start_iteration)
    wall = time.perf_counter() - tic
    test = demos.subset("test")
    if config.task == "infill":
        final_metrics = {
            "perplexity": compute_metric("perplexity", result.model, test),
            "infill-exact-match": compute_metric("infill-exact-match",
                                                 result.model, test),
        }
    else:
        final_metrics = {
            "grid-part-consistency": compute_metric("grid-part-consistency",
                                                    result.model, test),
            "grid-ssim-lite": compute_metric("grid-ssim-lite", result.model, test),
        }
    summary = _write_outputs(config, result.report, final_metrics, wall,
                             config.out_dir, {})
    return ExperimentResult(config=config, report=result.report,
                            final_metrics=final_metrics, summary=summary,
                            out_dir=config.out_dir, model=result.model,
                            constraint=result.constraint)


def resume_experiment(config: ExperimentConfig,
                      checkpoint_iteration: int) -> ExperimentResult:
    """Rebuild the run deterministically and continue from a checkpoint.

    Parameters come from the checkpoint files written by a prior run with
    checkpoint_every set; the remaining iterations replay exactly.
    """
    if config.task == "mdp-bridge":
        raise ConfigError("mdp-bridge runs are single-shot; nothing to resume")
    demos, model, constraint, objective = build_task(config)
    base = os.path.join(config.train.checkpoint_dir,
                        f"iter{checkpoint_iteration:05d}")
    model = model.with_params(model.params.load(base + "_theta.json"))
    if constraint is not None and os.path.exists(base + "_phi.json"):
        constraint = constraint.with_params(
            constraint.params.load(base + "_phi.json"))
    if objective is not None and os.path.exists(base + "_aux.json"):
        with open(base + "_aux.json") as fh:
            objective.load_state_json(fh.read())
    return run_experiment(config, start_iteration=checkpoint_iteration,
                          initial=(model, constraint, objective))


def sweep(base_config: ExperimentConfig, selectors, seeds=None) -> dict:
    """Run a selector grid (optionally crossed with seeds) and aggregate.

    Writes each run under out_dir/<selector>-seed<k>/, a combined
    plot_data.csv (iteration, one loss_total column per variant), and
    sweep_summary.json with the final metric table.
    """
    seeds = [base_config.train.seed] if seeds is None else list(seeds)
    results = {}
    for selector in selectors:
        for seed in seeds:
            doc = base_config.to_dict()
            doc["train"]["selector"] = selector
            doc["train"]["seed"] = seed
            doc["out_dir"] = os.path.join(base_config.out_dir,
                                          f"{selector}-seed{seed}")
            results[(selector, seed)] = run_experiment(
                ExperimentConfig.from_dict(doc))
    _write_sweep_outputs(base_config, results)
    return results


def _write_sweep_outputs(base_config, results):
    os.makedirs(base_config.out_dir, exist_ok=True)
    columns, length = {}, 0
    for (selector, seed), res in results.items():
        columns[f"loss_total_{selector}_seed{seed}"] = res.report.column("loss_total")
        length = max(length, len(res.report.records))
    path = os.path.join(base_config.out_dir, "plot_data.csv")
    with open(path, "w") as fh:
        names = sorted(columns)
        fh.write(",".join(["iteration"] + names) + "\n")
        for i in range(length):
            row = [str(i)]
            for name in names:
                col = columns[name]
                row.append(repr(float(col[i])) if i < len(col) else "")
            fh.write(",".join(row) + "\n")
    table = {f"{sel}-seed{seed}": res.final_metrics
             for (sel, seed), res in results.items()}
    with open(os.path.join(base_config.out_dir, "sweep_summary.json"), "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)


def report_table(out_dir: str) -> list:
    """Collect summary.json files under a directory into comparison rows."""
    rows = []
    for root, _, files in sorted(os.walk(out_dir)):
        if "summary.json" in files:
            with open(os.path.join(root, "summary.json")) as fh:
                doc = json.load(fh)
            rows.append({"run": os.path.relpath(root, out_dir), **doc})
    return rows
