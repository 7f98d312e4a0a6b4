"""Command-line front end.

Commands read one JSON config (strict: unknown keys are rejected); flags
override config values. Every file is written under the output directory.

Exit codes: 0 success (also for runs that did not converge), 2 config error,
3 model failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import bench
from .core import BoundsBox, Tracker, loss_of
from .hessian import fd_jacobian, gauss_newton_hessian
from .hierarchical import HierarchicalConfig, run
from .loss import DatasetError, load_dataset, save_dataset
from .models import (
    MODEL_IDS,
    DatasetProblem,
    PrescribedSpectrumQuadratic,
    default_inputs,
    default_truth,
    generate_synthetic_dataset,
    names_of,
    simulator_for,
)
from .subspace import eigendecompose
from .uncertainty import parameter_uncertainty, save_report

log = logging.getLogger("sloppyopt")

EXIT_OK, EXIT_CONFIG, EXIT_MODEL = 0, 2, 3
BASELINES = ("powell", "nelder_mead", "de", "lm")


class ConfigError(Exception):
    pass


class ModelFailure(Exception):
    pass


# -- config -------------------------------------------------------------------------


def _check_keys(section: str, d: Any, allowed: set[str]) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"'{section}' must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    return d


@dataclass
class RunConfig:
    model_id: str
    model_params: dict = field(default_factory=dict)
    dataset_path: Path | None = None
    generate: dict | None = None
    optimizer: str = "hierarchical"
    optimizer_params: dict = field(default_factory=dict)
    seed: int = 0
    budget: int | None = None
    output_dir: Path = Path("sloppyopt_out")
    theta0: list[float] | None = None
    theta: list[float] | None = None
    result_path: Path | None = None
    uncertainty: dict | None = None


TOP_KEYS = {"model", "dataset", "optimizer", "seed", "budget", "output_dir", "theta0", "theta",
            "result", "uncertainty"}
GENERATE_KEYS = {"noise_rel", "seed", "n_times", "n_pressure", "n_temperature", "theta_star"}


def parse_config(doc: Any, base_dir: Path = Path(".")) -> RunConfig:
    doc = _check_keys("config", doc, TOP_KEYS)
    if "model" not in doc:
        raise ConfigError("config needs a 'model' section")
    model = _check_keys("model", doc["model"], {"id", "params"})
    model_id = model.get("id")
    if model_id not in MODEL_IDS:
        raise ConfigError(f"model.id must be one of {MODEL_IDS}, got {model_id!r}")
    cfg = RunConfig(model_id, dict(model.get("params", {})))

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    if "dataset" in doc:
        ds = _check_keys("dataset", doc["dataset"], {"path", "generate"})
        if "path" in ds and "generate" in ds:
            raise ConfigError("dataset takes either 'path' or 'generate', not both")
        if "path" in ds:
            cfg.dataset_path = resolve(ds["path"])
        if "generate" in ds:
            cfg.generate = dict(_check_keys("dataset.generate", ds["generate"], GENERATE_KEYS))
    if "optimizer" in doc:
        opt = _check_keys("optimizer", doc["optimizer"], {"name", "params"})
        cfg.optimizer = opt.get("name", "hierarchical")
        if cfg.optimizer not in ("hierarchical",) + BASELINES:
            raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")
        cfg.optimizer_params = dict(opt.get("params", {}))
    for key in ("seed", "budget"):
        if key in doc and doc[key] is not None:
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise ConfigError(f"'{key}' must be an integer")
            setattr(cfg, key, doc[key])
    if "output_dir" in doc:
        cfg.output_dir = resolve(doc["output_dir"])
    for key in ("theta0", "theta"):
        if key in doc and doc[key] is not None:
            if not isinstance(doc[key], list):
                raise ConfigError(f"'{key}' must be a list of numbers")
            setattr(cfg, key, [float(v) for v in doc[key]])
    if doc.get("result") is not None:
        cfg.result_path = resolve(doc["result"])
    unc = doc.get("uncertainty")
    if unc is True:
        cfg.uncertainty = {}
    elif isinstance(unc, dict):
        cfg.uncertainty = dict(_check_keys("uncertainty", unc, {"fraction", "cutoff"}))
    elif unc not in (None, False):
        raise ConfigError("'uncertainty' must be true, false or an object")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, path.parent)


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    params = dict(cfg.optimizer_params)
    if getattr(args, "strategy", None):
        params["strategy"] = args.strategy
    if getattr(args, "k", None) is not None:
        params["sketch_k"] = args.k
    if getattr(args, "no_realign", False):
        params["realign"] = False
    cfg = replace(cfg, optimizer_params=params)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "budget", None) is not None:
        cfg = replace(cfg, budget=args.budget)
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=Path(args.out))
    return cfg


# -- problem assembly ------------------------------------------------------------------


def build_problem(cfg: RunConfig):
    """Return ``(problem, simulator_or_None)`` for a run config."""
    if cfg.model_id == "quadratic":
        try:
            return PrescribedSpectrumQuadratic(**cfg.model_params), None
        except TypeError as exc:
            raise ConfigError(f"bad model.params: {exc}") from exc
    try:
        sim = simulator_for(cfg.model_id, **cfg.model_params)
    except TypeError as exc:
        raise ConfigError(f"bad model.params: {exc}") from exc
    if cfg.dataset_path is not None:
        if not cfg.dataset_path.exists():
            raise ConfigError(f"dataset file not found: {cfg.dataset_path}")
        try:
            data = load_dataset(cfg.dataset_path)
        except DatasetError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        data = generate_data(cfg, sim)
    try:
        return DatasetProblem(sim, data), sim
    except DatasetError as exc:
        raise ConfigError(str(exc)) from exc


def generate_data(cfg: RunConfig, sim):
    gen = dict(cfg.generate or {})
    input_kw = {k: gen.pop(k) for k in ("n_times", "n_pressure", "n_temperature") if k in gen}
    inputs = default_inputs(cfg.model_id, **input_kw)
    truth = gen.pop("theta_star", None)
    truth = default_truth(cfg.model_id, sim=sim) if truth is None else np.asarray(truth, float)
    try:
        return generate_synthetic_dataset(sim, inputs, truth, float(gen.get("noise_rel", 0.0)),
                                          gen.get("seed", cfg.seed))
    except DatasetError as exc:
        raise ModelFailure(str(exc)) from exc


def _vector(values, n: int, what: str) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.shape != (n,):
        raise ConfigError(f"{what} has length {x.size}, the model has {n} parameters")
    return x


def start_point(cfg: RunConfig, problem) -> np.ndarray:
    if cfg.theta0 is not None:
        return _vector(cfg.theta0, problem.n, "theta0")
    return np.full(problem.n, 0.5)


def evaluation_point(cfg: RunConfig, problem) -> np.ndarray:
    """``theta`` from the config, else ``theta_final`` of a prior result, else the start point."""
    if cfg.theta is not None:
        return _vector(cfg.theta, problem.n, "theta")
    if cfg.result_path is not None:
        if not cfg.result_path.exists():
            raise ConfigError(f"result file not found: {cfg.result_path}")
        doc = json.loads(cfg.result_path.read_text())
        if "theta_final" not in doc:
            raise ConfigError(f"{cfg.result_path}: no 'theta_final' entry")
        return _vector(doc["theta_final"], problem.n, "theta_final")
    return start_point(cfg, problem)


# -- output helpers ----------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n")


def _outdir(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _uncertainty(cfg, problem, sim, theta, phi, out: Path, lambda_reg: float, h: float):
    opts = cfg.uncertainty or {}
    J = fd_jacobian(problem, theta, h)
    H = gauss_newton_hessian(J, lambda_reg)
    rep = parameter_uncertainty(H, phi, float(opts.get("fraction", 0.01)),
                                cutoff=float(opts.get("cutoff", 0.5)))
    default = sim.default_theta() if sim is not None else np.full(problem.n, 0.5)
    box = sim.bounds if sim is not None else None
    save_report(out / "uncertainty.json", rep, names_of(problem), default, theta, box)
    return rep


# -- commands ----------------------------------------------------------------------


def cmd_optimize(cfg: RunConfig) -> int:
    problem, sim = build_problem(cfg)
    theta0 = start_point(cfg, problem)
    out = _outdir(cfg)
    params = dict(cfg.optimizer_params)
    tracker = Tracker(problem, budget=cfg.budget)
    doc: dict[str, Any] = {"model": cfg.model_id, "optimizer": cfg.optimizer, "seed": cfg.seed,
                           "budget": cfg.budget, "theta0": theta0}
    if cfg.optimizer == "hierarchical":
        params.setdefault("seed", cfg.seed)
        if cfg.budget is not None:
            params.setdefault("max_calls", cfg.budget)
        try:
            hcfg = HierarchicalConfig(**params)
            hcfg.check_dimension(problem.n)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad optimizer.params: {exc}") from exc
        res = run(problem, theta0, hcfg, tracker=tracker)
        doc.update({
            "strategy": hcfg.strategy,
            "k": hcfg.sketch_k if hcfg.strategy == "stochastic" else problem.n,
            "realign": hcfg.realign,
            "theta_final": res.theta_final,
            "loss_final": res.loss_final,
            "converged": res.converged,
            "iterations": res.iterations,
            "calls": res.calls,
            "eigenspectrum": res.final_spectrum.eigenvalues,
            "k_s": res.partition.k_s,
            "k_l": res.partition.k_l,
            "misalignment_history": res.misalignment_history,
            "loss_history": res.loss_history,
            "flags": res.flags,
        })
        theta, phi = res.theta_final, res.loss_final
        lambda_reg, h = hcfg.lambda_reg, hcfg.fd_step
    else:
        spec = bench.OptimizerSpec(cfg.optimizer, params)
        budget = cfg.budget if cfg.budget is not None else 1500
        tracker.budget = budget
        try:
            theta, _, flags = bench.run_optimizer(spec, cfg.seed, tracker, theta0, budget)
        except TypeError as exc:
            raise ConfigError(f"bad optimizer.params: {exc}") from exc
        theta = tracker.best_theta
        phi = tracker.best_loss
        doc.update({"strategy": None, "k": None, "theta_final": theta, "loss_final": phi,
                    "converged": None, "calls": tracker.calls, "flags": flags})
        lambda_reg, h = HierarchicalConfig().lambda_reg, HierarchicalConfig().fd_step
    if not np.isfinite(phi):
        raise ModelFailure("the optimizer produced no finite loss")
    bench.write_trace_csv(out / "trace.csv", tracker.trace)
    write_json(out / "result.json", doc)
    if cfg.uncertainty is not None:
        _uncertainty(cfg, problem, sim, theta, phi, out, lambda_reg, h)
    print(f"loss {doc['loss_final']:.6g} after {doc['calls']} calls; results in {out}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig) -> int:
    problem, _ = build_problem(cfg)
    theta = evaluation_point(cfg, problem)
    out = _outdir(cfg)
    h = float(cfg.optimizer_params.get("fd_step", HierarchicalConfig().fd_step))
    J = fd_jacobian(problem, theta, h)
    lam = eigendecompose(gauss_newton_hessian(J, 0.0)).eigenvalues
    write_json(out / "spectrum.json", {"theta": theta, "eigenvalues": lam})
    with open(out / "spectrum.csv", "w") as fh:
        fh.write("index,eigenvalue\n")
        for i, v in enumerate(lam):
            fh.write(f"{i + 1},{float(v)!r}\n")
    print(f"{lam.size} eigenvalues written to {out}")
    return EXIT_OK


def cmd_uncertainty(cfg: RunConfig) -> int:
    problem, sim = build_problem(cfg)
    theta = evaluation_point(cfg, problem)
    out = _outdir(cfg)
    phi = loss_of(problem.evaluate(theta))
    hc = HierarchicalConfig()
    lambda_reg = float(cfg.optimizer_params.get("lambda_reg", hc.lambda_reg))
    h = float(cfg.optimizer_params.get("fd_step", hc.fd_step))
    rep = _uncertainty(cfg, problem, sim, theta, phi, out, lambda_reg, h)
    print(f"{sum(c == 'stiff' for c in rep.classification)} stiff of {rep.n} parameters; "
          f"report in {out / 'uncertainty.json'}")
    return EXIT_OK


def cmd_generate_data(cfg: RunConfig) -> int:
    if cfg.model_id == "quadratic":
        raise ConfigError("the quadratic model has no dataset")
    sim = simulator_for(cfg.model_id, **cfg.model_params)
    data = generate_data(cfg, sim)
    out = _outdir(cfg)
    save_dataset(data, out / "dataset.csv")
    print(f"{len(data)} conditions written to {out / 'dataset.csv'}")
    return EXIT_OK


def cmd_bench(path, args) -> int:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"benchmark plan not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("benchmark plan must be a JSON object")
    out = doc.pop("output_dir", "sloppyopt_bench")
    out = Path(args.out) if args.out else path.parent / out
    if args.budget is not None:
        doc["budget"] = args.budget
    if args.seed is not None:
        doc["seeds"] = [args.seed]
    try:
        plan = bench.plan_from_dict(doc)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad benchmark plan: {exc}") from exc
    res = bench.run_benchmark(plan, out)
    for name, info in res.summary["optimizers"].items():
        print(f"{name}: median calls to threshold = {info['median_calls_to_threshold']}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sloppyopt", description="Hierarchical stiff/sloppy optimization.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("optimize", "bench", "spectrum", "uncertainty", "generate-data"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config (benchmark plan for 'bench')")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--budget", type=int, help="simulator-call budget")
        if name == "optimize":
            sp.add_argument("--strategy", choices=("exact", "stochastic"))
            sp.add_argument("--k", type=int, help="sketch rank for the stochastic strategy")
            sp.add_argument("--no-realign", action="store_true", help="skip the sloppy re-alignment")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench":
            return cmd_bench(args.config, args)
        cfg = apply_overrides(load_config(args.config), args)
        handler = {
            "optimize": cmd_optimize,
            "spectrum": cmd_spectrum,
            "uncertainty": cmd_uncertainty,
            "generate-data": cmd_generate_data,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelFailure, DatasetError, FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
