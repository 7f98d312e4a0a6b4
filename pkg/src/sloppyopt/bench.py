"""Sample-efficiency benchmark harness.

Every optimizer in a plan starts from the same ``theta0`` with the same
simulator-call budget on the training loss. Test losses are evaluated at
fixed call checkpoints on a separate problem object, so they never count
against the budget. Runs are written as

* ``trace_<label>_seed<s>.csv``: ``call_index, phase, train_loss``;
* ``checkpoints_<label>_seed<s>.csv``: ``call_index, test_loss``;
* ``summary.json``: per-run final train/test loss and calls-to-threshold.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .baselines import (
    DEConfig,
    differential_evolution,
    full_space_nelder_mead,
    full_space_powell,
    levenberg_marquardt_fd,
)
from .core import BoundsBox, OptimizationTrace, ResidualProblem, Tracker, loss_of
from .hierarchical import HierarchicalConfig, run
from .loss import Dataset
from .models import (
    DatasetProblem,
    PrescribedSpectrumQuadratic,
    default_inputs,
    default_truth,
    generate_synthetic_dataset,
    simulator_for,
)
from .solvers import InnerSolverOptions

log = logging.getLogger(__name__)

OPTIMIZER_KINDS = ("hierarchical", "powell", "nelder_mead", "de", "lm")


# -- train/test split -------------------------------------------------------------


def _bin_labels(inputs: np.ndarray, strata: Sequence[int]) -> np.ndarray:
    """Equal-width bins per condition axis (first ``len(strata)`` axes), flattened to one label."""
    labels = np.zeros(inputs.shape[0], dtype=int)
    for axis, nb in enumerate(strata[: inputs.shape[1]]):
        col = inputs[:, axis]
        lo, hi = col.min(), col.max()
        if hi > lo:
            idx = np.minimum((nb * (col - lo) / (hi - lo)).astype(int), nb - 1)
        else:
            idx = np.zeros(col.size, dtype=int)
        labels = labels * nb + idx
    return labels


def _bin_coords(label: int, strata: Sequence[int]) -> np.ndarray:
    out = []
    for nb in reversed(strata):
        out.append(label % nb)
        label //= nb
    return np.array(out[::-1], dtype=float)


def _merge_small(labels: np.ndarray, strata: Sequence[int]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    while len(groups) > 1:
        small = [g for g in sorted(groups) if len(groups[g]) < 2]
        if not small:
            break
        g = small[0]
        here = _bin_coords(g, strata)
        others = [o for o in sorted(groups) if o != g]
        target = min(others, key=lambda o: (np.sum((_bin_coords(o, strata) - here) ** 2), o))
        groups[target] = sorted(groups[target] + groups.pop(g))
    return groups


def split_indices(n_items: int, fraction: float = 0.8, seed=0, labels: np.ndarray | None = None,
                  strata: Sequence[int] = (1,)) -> tuple[np.ndarray, np.ndarray]:
    """Stratified random split of ``range(n_items)`` into sorted train/test index arrays.

    The train total is ``ceil(fraction * n_items)`` (rounding toward train).
    Test slots are shared across strata in proportion to their size (largest
    remainder), and every stratum with at least two members keeps one train item.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    if n_items < 2:
        raise ValueError("need at least two items to split")
    labels = np.zeros(n_items, dtype=int) if labels is None else np.asarray(labels)
    groups = _merge_small(labels, strata)
    keys = sorted(groups)
    n_test = n_items - math.ceil(fraction * n_items - 1e-9)
    quota = np.array([(1 - fraction) * len(groups[k]) for k in keys])
    cap = np.array([max(len(groups[k]) - 1, 0) for k in keys])
    take = np.minimum(np.floor(quota + 1e-9).astype(int), cap)
    order = sorted(range(len(keys)), key=lambda j: (-(quota[j] - np.floor(quota[j] + 1e-9)), j))
    while take.sum() < n_test:
        progressed = False
        for j in order:
            if take.sum() >= n_test:
                break
            if take[j] < cap[j]:
                take[j] += 1
                progressed = True
        if not progressed:
            break
    rng = np.random.default_rng(seed)
    test: list[int] = []
    for j, key in enumerate(keys):
        members = np.array(groups[key])
        test.extend(rng.permutation(members)[: take[j]].tolist())
    test_idx = np.array(sorted(test), dtype=int)
    train_idx = np.setdiff1d(np.arange(n_items), test_idx)
    return train_idx, test_idx


def split_dataset(dataset: Dataset, fraction: float = 0.8, seed=0,
                  strata: Sequence[int] | None = (3, 3)) -> tuple[Dataset, Dataset]:
    """Stratified train/test split over binned condition inputs.

    ``strata`` gives the bin count along each condition axis (default 3 x 3
    over the first two). ``None`` disables stratification. Bins with fewer
    than two members are merged into the nearest non-empty bin.
    """
    if strata is None:
        labels, strata_used = None, (1,)
    else:
        strata_used = tuple(int(s) for s in strata[: dataset.inputs.shape[1]])
        labels = _bin_labels(dataset.inputs, strata_used)
    train_idx, test_idx = split_indices(len(dataset), fraction, seed, labels, strata_used)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# -- plan ------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSpec:
    """``kind`` is one of :data:`OPTIMIZER_KINDS`; ``params`` are its keyword options."""

    kind: str
    params: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected one of {OPTIMIZER_KINDS}")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "hierarchical":
            strategy = self.params.get("strategy", "exact")
            if strategy == "stochastic":
                return f"hierarchical_stochastic_k{self.params.get('sketch_k')}"
            return f"hierarchical_{strategy}"
        return self.kind


@dataclass(frozen=True)
class BenchmarkPlan:
    problem_id: str
    optimizers: tuple[OptimizerSpec, ...]
    theta0: tuple[float, ...] | None = None
    budget: int = 1500
    seeds: tuple[int, ...] = (0,)
    split_fraction: float | None = 0.8
    problem_params: dict = field(default_factory=dict)
    noise_rel: float = 0.0
    data_seed: int = 0
    split_seed: int = 0
    strata: tuple[int, ...] | None = (3, 3)
    checkpoint_every: int = 25
    threshold_fraction: float = 0.1

    def __post_init__(self):
        if not self.optimizers:
            raise ValueError("a benchmark plan needs at least one optimizer")
        if self.budget < 1 or self.checkpoint_every < 1:
            raise ValueError("budget and checkpoint_every must be positive")
        names = [o.name for o in self.optimizers]
        if len(set(names)) != len(names):
            raise ValueError(f"optimizer labels must be unique, got {names}")
        if self.split_fraction is not None and not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie strictly between 0 and 1")


def build_problems(plan: BenchmarkPlan) -> tuple[ResidualProblem, ResidualProblem | None, np.ndarray]:
    """Training problem, test problem (or ``None``) and the shared starting point."""
    params = dict(plan.problem_params)
    if plan.problem_id == "quadratic":
        prob = PrescribedSpectrumQuadratic(**params)
        theta0 = np.full(prob.n, 0.5) if plan.theta0 is None else np.asarray(plan.theta0, float)
        return prob, None, theta0
    input_kw = {k: params.pop(k) for k in ("n_times", "n_pressure", "n_temperature") if k in params}
    sim = simulator_for(plan.problem_id, **params)
    inputs = default_inputs(plan.problem_id, **input_kw)
    truth = default_truth(plan.problem_id, sim=sim)
    data = generate_synthetic_dataset(sim, inputs, truth, plan.noise_rel, plan.data_seed)
    theta0 = np.full(sim.n, 0.5) if plan.theta0 is None else np.asarray(plan.theta0, float)
    if plan.split_fraction is None:
        return DatasetProblem(sim, data), None, theta0
    train, test = split_dataset(data, plan.split_fraction, plan.split_seed, plan.strata)
    return DatasetProblem(sim, train), DatasetProblem(sim, test), theta0


# -- running -----------------------------------------------------------------------


@dataclass
class RunRecord:
    optimizer: str
    seed: int
    trace: OptimizationTrace
    checkpoints: list[tuple[int, float]]
    theta_final: np.ndarray | None
    failed: bool = False
    error: str = ""
    converged: bool | None = None
    flags: list[str] = field(default_factory=list)


@dataclass
class BenchmarkResult:
    plan: BenchmarkPlan
    phi0: float
    runs: list[RunRecord]
    summary: dict


def run_optimizer(spec: OptimizerSpec, seed: int, tracker: Tracker, theta0: np.ndarray, budget: int):
    p = dict(spec.params)
    if spec.kind == "hierarchical":
        p.setdefault("seed", seed)
        cfg = HierarchicalConfig(**p)
        res = run(tracker.problem, theta0, cfg, tracker=tracker)
        return res.theta_final, res.converged, res.flags
    if spec.kind in ("powell", "nelder_mead"):
        opts = InnerSolverOptions(max_evals=budget, **p)
        fn = full_space_powell if spec.kind == "powell" else full_space_nelder_mead
        res = fn(tracker, theta0, budget, opts)
    elif spec.kind == "de":
        p.setdefault("seed", seed)
        if "mutation" in p:
            p["mutation"] = tuple(p["mutation"])
        res = differential_evolution(tracker, BoundsBox.unit(tracker.n), DEConfig(**p), theta0=theta0, budget=budget)
    else:
        res = levenberg_marquardt_fd(tracker, theta0, BoundsBox.unit(tracker.n), budget, **p)
    return res.x, None, res.flags


def run_single(spec: OptimizerSpec, seed: int, train: ResidualProblem, test: ResidualProblem | None,
               theta0: np.ndarray, budget: int, checkpoint_every: int = 25) -> RunRecord:
    """One (optimizer, seed) run; an exception is recorded as a failed run."""
    checkpoints: list[tuple[int, float]] = []

    def test_loss(theta):
        return loss_of(test.compute_residuals(np.abs(theta) if test.reflect else theta))

    def on_call(tr: Tracker):
        if test is not None and tr.calls % checkpoint_every == 0:
            checkpoints.append((tr.calls, test_loss(tr.best_theta)))

    tracker = Tracker(train, budget=budget, on_call=on_call)
    try:
        theta, converged, flags = run_optimizer(spec, seed, tracker, np.asarray(theta0, float), budget)
    except Exception as exc:  # a crashing optimizer must not sink the whole bundle
        log.warning("optimizer %s (seed %d) failed: %s", spec.name, seed, exc)
        return RunRecord(spec.name, seed, tracker.trace, checkpoints, tracker.best_theta,
                         failed=True, error=f"{type(exc).__name__}: {exc}")
    theta = tracker.best_theta if tracker.best_theta is not None else theta
    if test is not None and tracker.calls and (not checkpoints or checkpoints[-1][0] != tracker.calls):
        checkpoints.append((tracker.calls, test_loss(theta)))
    return RunRecord(spec.name, seed, tracker.trace, checkpoints, theta, converged=converged,
                     flags=list(flags))


def summarize_run(rec: RunRecord, threshold: float) -> dict:
    """Summary entry computed from the stored trace and checkpoints only."""
    losses = rec.trace.losses
    return {
        "optimizer": rec.optimizer,
        "seed": rec.seed,
        "failed": rec.failed,
        "error": rec.error,
        "calls": len(rec.trace.records),
        "final_train_loss": float(losses.min()) if losses.size else None,
        "final_test_loss": rec.checkpoints[-1][1] if rec.checkpoints else None,
        "calls_to_threshold": rec.trace.calls_to_threshold(threshold),
        "converged": rec.converged,
        "flags": rec.flags,
    }


def _median_calls(entries: list[dict]) -> float | None:
    vals = [e["calls_to_threshold"] for e in entries]
    if not vals:
        return None
    # runs that never reach the threshold count as infinitely slow
    med = float(np.median([np.inf if v is None else v for v in vals]))
    return None if not np.isfinite(med) else med


def run_benchmark(plan: BenchmarkPlan, out_dir=None) -> BenchmarkResult:
    train, test, theta0 = build_problems(plan)
    phi0 = loss_of(train.compute_residuals(np.abs(theta0) if train.reflect else theta0))
    threshold = plan.threshold_fraction * phi0
    runs = []
    for spec in plan.optimizers:
        for seed in plan.seeds:
            runs.append(run_single(spec, seed, train, test, theta0, plan.budget, plan.checkpoint_every))
    entries = [summarize_run(r, threshold) for r in runs]
    per_opt = {}
    for spec in plan.optimizers:
        mine = [e for e in entries if e["optimizer"] == spec.name]
        per_opt[spec.name] = {"median_calls_to_threshold": _median_calls(mine)}
    summary = {
        "problem_id": plan.problem_id,
        "budget": plan.budget,
        "phi0": phi0,
        "threshold": threshold,
        "theta0": [float(v) for v in theta0],
        "n_train_residuals": train.m,
        "n_test_residuals": None if test is None else test.m,
        "runs": entries,
        "optimizers": per_opt,
    }
    result = BenchmarkResult(plan, phi0, runs, summary)
    if out_dir is not None:
        write_bundle(result, out_dir)
    return result


# -- persistence -----------------------------------------------------------------------


def write_trace_csv(path, trace: OptimizationTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["call_index", "phase", "train_loss"])
        for rec in trace.records:
            w.writerow([rec.call_index, rec.phase, repr(float(rec.loss))])


def write_checkpoints_csv(path, checkpoints) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["call_index", "test_loss"])
        for call, loss in checkpoints:
            w.writerow([call, repr(float(loss))])


def read_trace_csv(path) -> OptimizationTrace:
    from .core import EvaluationRecord

    trace = OptimizationTrace()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace.records.append(EvaluationRecord(int(row["call_index"]), np.empty(0),
                                                  float(row["train_loss"]), row["phase"]))
    return trace


def plan_to_dict(plan: BenchmarkPlan) -> dict[str, Any]:
    d = asdict(plan)
    d["optimizers"] = [asdict(o) for o in plan.optimizers]
    return d


def write_bundle(result: BenchmarkResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in result.runs:
        stem = f"{rec.optimizer}_seed{rec.seed}"
        write_trace_csv(out / f"trace_{stem}.csv", rec.trace)
        write_checkpoints_csv(out / f"checkpoints_{stem}.csv", rec.checkpoints)
    doc = dict(result.summary)
    doc["plan"] = plan_to_dict(result.plan)
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    return out


def plan_from_dict(d: dict) -> BenchmarkPlan:
    """Strict constructor: unknown keys raise ``ValueError``."""
    allowed = set(BenchmarkPlan.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown benchmark plan keys: {sorted(unknown)}")
    d = dict(d)
    specs = []
    for o in d.get("optimizers", []):
        extra = set(o) - {"kind", "params", "label"}
        if extra:
            raise ValueError(f"unknown optimizer keys: {sorted(extra)}")
        specs.append(OptimizerSpec(o["kind"], dict(o.get("params", {})), o.get("label")))
    d["optimizers"] = tuple(specs)
    for key in ("seeds", "strata", "theta0"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return BenchmarkPlan(**d)
