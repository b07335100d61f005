"""Command-line surface: run one optimization, drive a benchmark grid,
validate configs, and pretty-print trace files.

Configs are YAML with nested sections (schema documented in the README).
Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .acquisition import AcquisitionSpec
from .benchmarks import simple_regret
from .gp import KernelParams, Partition
from .harness import (
    ExperimentSpec,
    MethodSpec,
    ObjectiveSpec,
    REGRET_COLUMNS,
    build_objective,
    run_experiment,
    run_random_search,
    write_csv,
)
from .loop import BoConfig, LearnSpec, run_add_mes, run_mes

SEED_ENV_VAR = "MAXENT_BO_SEED"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    """Configuration problem, tagged with the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _need(section: dict, field: str, path: str, types=None):
    if field not in section:
        raise ConfigError(f"{path}.{field}", "missing required field")
    value = section[field]
    if types is not None and not isinstance(value, types):
        raise ConfigError(f"{path}.{field}", f"expected {types}, got {type(value).__name__}")
    return value


def _positive(value, path: str, strict: bool = True):
    if strict and not value > 0:
        raise ConfigError(path, f"must be positive, got {value}")
    if not strict and value < 0:
        raise ConfigError(path, f"must be nonnegative, got {value}")
    return value


def _load_yaml(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(str(p), "config file does not exist")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise ConfigError(str(p), f"not valid YAML: {e}")
    if not isinstance(doc, dict):
        raise ConfigError(str(p), "top level must be a mapping")
    return doc


def _parse_objective(section: dict) -> ObjectiveSpec:
    kind = _need(section, "kind", "objective", str)
    known = ("eggholder", "shekel", "michalewicz", "synthetic-gp", "synthetic-additive")
    if kind not in known:
        raise ConfigError("objective.kind", f"must be one of {known}")
    spec = ObjectiveSpec(
        kind=kind,
        dim=int(section.get("dim", 2)),
        count=int(section.get("count", 1)),
        noise_std=float(section.get("noise_std", 0.0)),
        scale=float(section.get("scale", 5.0)),
        bandwidth=float(section.get("bandwidth", 0.0625)),
        n_features=int(section.get("feature_count", 2048)),
        groups=section.get("groups"),
    )
    _positive(spec.dim, "objective.dim")
    _positive(spec.count, "objective.count")
    _positive(spec.noise_std, "objective.noise_std", strict=False)
    _positive(spec.scale, "objective.scale")
    _positive(spec.bandwidth, "objective.bandwidth")
    if kind == "synthetic-additive" and not spec.groups:
        raise ConfigError("objective.groups", "required for synthetic-additive")
    return spec


def _parse_model(section: dict, dim: int) -> dict:
    scale = float(section.get("scale", 1.0))
    _positive(scale, "model.scale")
    bw = section.get("bandwidth", 0.1)
    if isinstance(bw, (int, float)):
        bandwidths = [float(bw)] * dim
    else:
        bandwidths = [float(v) for v in bw]
        if len(bandwidths) != dim:
            raise ConfigError("model.bandwidth", f"needs 1 or {dim} entries")
    for i, v in enumerate(bandwidths):
        if v <= 0:
            raise ConfigError("model.bandwidth", f"entry {i} must be positive, got {v}")
    noise_var = float(section.get("noise_var", 1e-6))
    _positive(noise_var, "model.noise_var", strict=False)
    refit = section.get("refit_every", 0)
    if refit is not None and int(refit) < 0:
        raise ConfigError("model.refit_every", "must be >= 0 (0 disables refits)")
    return {
        "scale": scale,
        "bandwidths": bandwidths,
        "noise_var": noise_var,
        "refit_every": int(refit) or None,
        "fit_budget": int(section.get("fit_budget", 240)),
    }


def _parse_acquisition(section: dict) -> dict:
    kind = _need(section, "kind", "acquisition", str)
    sampler = section.get("sampler", "gumbel")
    if sampler not in ("gumbel", "feature"):
        raise ConfigError("acquisition.sampler", "must be gumbel or feature")
    samples = int(section.get("samples", 100))
    _positive(samples, "acquisition.samples")
    params = dict(section.get("params", {}))
    spec = AcquisitionSpec(kind, params)
    try:
        spec.validate()
    except ValueError as e:
        raise ConfigError("acquisition", str(e))
    out = {
        "spec": spec,
        "sampler": sampler,
        "samples": samples,
        "n_features": int(section.get("feature_count", 500)),
        "clamp": bool(section.get("clamp", True)),
        "grid_size": int(section.get("grid_size", 0)) or None,
        "opt_budget": int(section.get("opt_budget", 0)) or None,
        "restarts": int(section.get("restarts", 10)),
    }
    _positive(out["n_features"], "acquisition.feature_count")
    _positive(out["restarts"], "acquisition.restarts")
    return out


def load_run_config(path: str | Path, seed_override: int | None = None) -> dict:
    """Parse and validate a single-run config; raises ConfigError."""
    doc = _load_yaml(path)
    objective = _parse_objective(_need(doc, "objective", "config", dict))
    loop_sec = _need(doc, "loop", "config", dict)
    iterations = int(_need(loop_sec, "iterations", "loop"))
    _positive(iterations, "loop.iterations")
    initial_design = int(loop_sec.get("initial_design", 1))
    if initial_design < 0:
        raise ConfigError("loop.initial_design", "must be nonnegative")

    seed = seed_override
    if seed is None:
        seed = loop_sec.get("seed")
    if seed is None:
        env = os.environ.get(SEED_ENV_VAR)
        seed = int(env) if env else 0
    seed = int(seed)

    model = _parse_model(_need(doc, "model", "config", dict), objective.dim)
    acqu = _parse_acquisition(_need(doc, "acquisition", "config", dict))

    additive = None
    if "additive" in doc:
        sec = doc["additive"]
        if sec.get("learn", False):
            additive = LearnSpec(
                n_candidates=int(sec.get("n_candidates", 10000)),
                max_group_size=int(sec.get("max_group_size", 2)),
            )
            if additive.n_candidates < 1:
                raise ConfigError("additive.n_candidates", "must be at least 1")
        else:
            groups = sec.get("groups")
            if not groups:
                raise ConfigError("additive.groups", "required unless learn: true")
            try:
                additive = Partition(tuple(tuple(int(i) for i in g) for g in groups))
            except ValueError as e:
                raise ConfigError("additive.groups", str(e))
    if acqu["spec"].kind in ("add_mes", "add_gp_ucb") and additive is None:
        raise ConfigError("additive", "section required for additive acquisitions")

    return {
        "objective": objective,
        "iterations": iterations,
        "initial_design": initial_design,
        "seed": seed,
        "model": model,
        "acquisition": acqu,
        "additive": additive,
    }


def load_bench_config(path: str | Path) -> ExperimentSpec:
    doc = _load_yaml(path)
    bench = _need(doc, "bench", "config", dict)
    iterations = int(_need(bench, "iterations", "bench"))
    _positive(iterations, "bench.iterations")
    repetitions = int(_need(bench, "repetitions", "bench"))
    _positive(repetitions, "bench.repetitions")
    model = bench.get("model", {})
    methods_sec = _need(bench, "methods", "bench", list)
    objectives_sec = _need(bench, "objectives", "bench", list)
    if not methods_sec:
        raise ConfigError("bench.methods", "at least one method required")
    if not objectives_sec:
        raise ConfigError("bench.objectives", "at least one objective required")

    methods = []
    for i, sec in enumerate(methods_sec):
        name = _need(sec, "name", f"bench.methods[{i}]", str)
        kind = _need(sec, "kind", f"bench.methods[{i}]", str)
        if kind != "random":
            spec = AcquisitionSpec(kind, dict(sec.get("params", {})))
            try:
                spec.validate()
            except ValueError as e:
                raise ConfigError(f"bench.methods[{i}]", str(e))
        samples = int(sec.get("samples", 100))
        _positive(samples, f"bench.methods[{i}].samples")
        methods.append(
            MethodSpec(
                name=name,
                kind=kind,
                sampler=sec.get("sampler", "gumbel"),
                samples=samples,
                n_features=int(sec.get("feature_count", 500)),
                clamp=bool(sec.get("clamp", True)),
                restarts=int(sec.get("restarts", 10)),
                acq_params=dict(sec.get("params", {})),
                learn_decomposition=bool(sec.get("learn_decomposition", False)),
                n_candidates=int(sec.get("n_candidates", 10000)),
                max_group_size=int(sec.get("max_group_size", 2)),
            )
        )
    objectives = []
    for i, sec in enumerate(objectives_sec):
        try:
            objectives.append(_parse_objective(sec))
        except ConfigError as e:
            raise ConfigError(f"bench.objectives[{i}].{e.field}", str(e))

    mdl = _parse_model(model, int(objectives_sec[0].get("dim", 2))) if model else None
    return ExperimentSpec(
        methods=methods,
        objectives=objectives,
        iterations=iterations,
        repetitions=repetitions,
        base_seed=int(bench.get("base_seed", 0)),
        initial_design=int(bench.get("initial_design", 1)),
        model_scale=mdl["scale"] if mdl else 5.0,
        model_bandwidth=mdl["bandwidths"][0] if mdl else 0.0625,
        model_noise_var=mdl["noise_var"] if mdl else 1e-4,
        refit_every=mdl["refit_every"] if mdl else None,
        fit_budget=mdl["fit_budget"] if mdl else 240,
        opt_budget=int(bench.get("opt_budget", 0)) or None,
        grid_size=int(bench.get("grid_size", 0)) or None,
    )


def cmd_run(args) -> int:
    try:
        cfg = load_run_config(args.config, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    objective, true_partition = build_objective(cfg["objective"], cfg["seed"])
    model = cfg["model"]
    acqu = cfg["acquisition"]
    params = KernelParams(model["scale"], model["bandwidths"], model["noise_var"])
    config = BoConfig(
        params=params,
        acquisition=acqu["spec"],
        iterations=cfg["iterations"],
        seed=cfg["seed"],
        n_max_samples=acqu["samples"],
        sampler=acqu["sampler"],
        n_features=acqu["n_features"],
        grid_size=acqu["grid_size"],
        refit_every=model["refit_every"],
        fit_budget=model["fit_budget"],
        initial_design=cfg["initial_design"],
        noise_std=cfg["objective"].noise_std,
        clamp=acqu["clamp"],
        opt_budget=acqu["opt_budget"],
        restarts=acqu["restarts"],
    )
    if acqu["spec"].kind in ("add_mes", "add_gp_ucb"):
        part_arg = cfg["additive"]
        trace = run_add_mes(objective, objective.domain, part_arg, config)
    else:
        trace = run_mes(objective, objective.domain, config)

    meta = {
        "method": acqu["spec"].kind,
        "objective": objective.name,
        "seed": cfg["seed"],
        "K": acqu["samples"],
        "sampler": acqu["sampler"],
    }
    trace_path = out_dir / f"trace_{acqu['spec'].kind}_{objective.name}_{cfg['seed']}.jsonl"
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(trace.to_jsonl_lines(meta)) + "\n")

    if objective.known_max is not None and trace.iterations:
        r = simple_regret(trace, objective)
        rows = [
            {
                "method": acqu["spec"].kind,
                "objective": objective.name,
                "seed": cfg["seed"],
                "t": i + 1,
                "r_t": float(r[i]),
                "R_t": "",
                "acq_seconds": trace.records[i].acq_seconds,
                "K": acqu["samples"],
                "sampler": acqu["sampler"],
            }
            for i in range(trace.iterations)
        ]
        write_csv(out_dir / "regret.csv", REGRET_COLUMNS, rows)

    if trace.error is not None:
        print(f"run aborted: {trace.error}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"ok: {trace.iterations} iterations -> {trace_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        spec = load_bench_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(
            spec, args.output, parallel=args.parallel, strict=args.strict
        )
    except RuntimeError as e:
        print(f"bench failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    n_fail = len(result.failures)
    print(f"ok: {len(result.rows)} rows, {n_fail} failed run(s) -> {args.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.config)
    try:
        doc = _load_yaml(path)
        if "bench" in doc:
            load_bench_config(path)
        else:
            load_run_config(path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def cmd_trace_dump(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        print(f"trace error: {path}: file does not exist", file=sys.stderr)
        return EXIT_CONFIG
    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            print(f"trace error: line {lineno}: {e}", file=sys.stderr)
            return EXIT_CONFIG
        kind = rec.get("type", "?")
        if kind == "meta":
            extras = {k: v for k, v in rec.items() if k != "type"}
            print(f"meta: {json.dumps(extras)}")
        elif kind == "init":
            print(f"init: x={rec.get('x')} y={rec.get('y'):.6g}")
        elif kind == "iter":
            x = ", ".join(f"{v:.6g}" for v in rec.get("x", []))
            msg = f"t={rec.get('t'):>4} x=[{x}] y={rec.get('y'):.6g}"
            if "acq_value" in rec:
                msg += f" alpha={rec['acq_value']:.6g}"
            if "acq_seconds" in rec:
                msg += f" ({rec['acq_seconds']:.4f}s)"
            print(msg)
        else:
            print(f"line {lineno}: unknown record type {kind!r}", file=sys.stderr)
            return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxent-bo",
        description="Max-value entropy search Bayesian optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single optimization from a config")
    p_run.add_argument("-c", "--config", required=True)
    p_run.add_argument("-o", "--output", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="run a benchmark grid from a config")
    p_bench.add_argument("-c", "--config", required=True)
    p_bench.add_argument("-o", "--output", required=True)
    p_bench.add_argument("--parallel", type=int, default=None)
    p_bench.add_argument("--strict", action="store_true")
    p_bench.set_defaults(func=cmd_bench)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("-c", "--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_dump = sub.add_parser("trace-dump", help="pretty-print a trace file")
    p_dump.add_argument("trace")
    p_dump.set_defaults(func=cmd_trace_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
