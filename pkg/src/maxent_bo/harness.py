"""Experiment orchestration: method x objective x repetition grids.

Workers rebuild objectives and configs from plain dictionaries so
repetitions can run in separate processes; seeds are derived from stable
SeedSequence paths, which makes results independent of worker count and
byte-identical across re-runs (timing columns excepted).
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionSpec
from .benchmarks import (
    Objective,
    inference_regret_curve,
    make_eggholder,
    make_michalewicz,
    make_shekel10,
    sample_synthetic_additive_objective,
    sample_synthetic_gp_objective,
    simple_regret,
)
from .gp import Domain, KernelParams, Partition
from .loop import BoConfig, BoTrace, IterationRecord, LearnSpec, run_add_mes, run_mes

REGRET_COLUMNS = [
    "method",
    "objective",
    "seed",
    "t",
    "r_t",
    "R_t",
    "acq_seconds",
    "K",
    "sampler",
]

SUMMARY_COLUMNS = [
    "method",
    "objective",
    "runs",
    "failed",
    "final_r_median",
    "final_r_q1",
    "final_r_q3",
    "final_R_median",
    "acq_seconds_mean",
    "acq_seconds_sd",
]


@dataclass
class MethodSpec:
    """One optimizer column of the comparison grid."""

    name: str
    kind: str  # mes|ucb|pi|ei|est|mes_marginal|add_mes|add_gp_ucb|random
    sampler: str = "gumbel"
    samples: int = 100
    n_features: int = 500
    clamp: bool = True
    restarts: int = 10
    acq_params: dict = field(default_factory=dict)
    learn_decomposition: bool = False
    n_candidates: int = 10000
    max_group_size: int = 2

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "sampler": self.sampler,
            "samples": self.samples,
            "n_features": self.n_features,
            "clamp": self.clamp,
            "restarts": self.restarts,
            "acq_params": dict(self.acq_params),
            "learn_decomposition": self.learn_decomposition,
            "n_candidates": self.n_candidates,
            "max_group_size": self.max_group_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        return cls(**d)


@dataclass
class ObjectiveSpec:
    """A family of objective instances (count > 1 draws several)."""

    kind: str  # eggholder|shekel|michalewicz|synthetic-gp|synthetic-additive
    dim: int = 2
    count: int = 1
    noise_std: float = 0.0
    scale: float = 5.0
    bandwidth: float = 0.0625
    n_features: int = 2048
    groups: list | None = None  # ground-truth groups for synthetic-additive

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "count": self.count,
            "noise_std": self.noise_std,
            "scale": self.scale,
            "bandwidth": self.bandwidth,
            "n_features": self.n_features,
            "groups": self.groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveSpec":
        return cls(**d)


@dataclass
class ExperimentSpec:
    methods: list
    objectives: list
    iterations: int = 60
    repetitions: int = 20
    base_seed: int = 0
    initial_design: int = 1
    model_scale: float = 5.0
    model_bandwidth: float = 0.0625
    model_noise_var: float = 1e-4
    refit_every: int | None = None
    fit_budget: int = 240
    opt_budget: int | None = None
    grid_size: int | None = None


def build_objective(spec: ObjectiveSpec, instance_seed: int) -> tuple[Objective, Partition | None]:
    """Materialize one objective instance; synthetic kinds use the seed."""
    if spec.kind == "eggholder":
        return make_eggholder(spec.noise_std), None
    if spec.kind == "shekel":
        return make_shekel10(spec.noise_std), None
    if spec.kind == "michalewicz":
        return make_michalewicz(spec.dim, noise_std=spec.noise_std), None
    if spec.kind == "synthetic-gp":
        params = KernelParams(spec.scale, [spec.bandwidth] * spec.dim, 0.0)
        obj = sample_synthetic_gp_objective(
            params, spec.dim, spec.n_features, instance_seed, noise_std=spec.noise_std
        )
        return obj, None
    if spec.kind == "synthetic-additive":
        if not spec.groups:
            raise ValueError("synthetic-additive requires ground-truth groups")
        part = Partition(tuple(tuple(g) for g in spec.groups))
        obj = sample_synthetic_additive_objective(
            part,
            spec.dim,
            spec.scale,
            spec.bandwidth,
            max(1000, spec.n_features // part.n_groups),
            instance_seed,
            noise_std=spec.noise_std,
        )
        return obj, part
    raise ValueError(f"unknown objective kind {spec.kind!r}")


def run_random_search(
    objective: Objective,
    iterations: int,
    seed: int,
    initial_design: int = 1,
    noise_std: float = 0.0,
) -> BoTrace:
    """Uniform random queries with the same trace schema as the model loops."""
    rng = np.random.default_rng(seed)
    dom = objective.domain
    init_xs, init_ys = [], []
    for _ in range(initial_design):
        x = rng.uniform(dom.lower, dom.upper)
        y = objective.value(x) + (noise_std * rng.standard_normal() if noise_std else 0.0)
        init_xs.append(x)
        init_ys.append(y)
    trace = BoTrace(
        np.array(init_xs) if init_xs else np.zeros((0, dom.dim)),
        np.array(init_ys),
    )
    best_x = None
    best_y = -math.inf
    for x, y in zip(init_xs, init_ys):
        if y > best_y:
            best_x, best_y = x, y
    for _ in range(iterations):
        tic = time.perf_counter()
        x = rng.uniform(dom.lower, dom.upper)
        dt = time.perf_counter() - tic
        y = objective.value(x) + (noise_std * rng.standard_normal() if noise_std else 0.0)
        if y > best_y:
            best_x, best_y = x, y
        trace.records.append(
            IterationRecord(x, float(y), 0.0, dt, None, np.asarray(best_x))
        )
    return trace


def _seed_for(base_seed: int, obj_idx: int, instance: int, rep: int) -> int:
    ss = np.random.SeedSequence([base_seed, obj_idx, instance, rep])
    return int(ss.generate_state(1)[0])


def _instance_seed(base_seed: int, obj_idx: int, instance: int) -> int:
    ss = np.random.SeedSequence([base_seed, 104729, obj_idx, instance])
    return int(ss.generate_state(1)[0])


def _build_config(method: MethodSpec, exp: dict, dim: int, seed: int, noise_std: float) -> BoConfig:
    params = KernelParams(
        exp["model_scale"], [exp["model_bandwidth"]] * dim, exp["model_noise_var"]
    )
    return BoConfig(
        params=params,
        acquisition=AcquisitionSpec(method.kind, dict(method.acq_params)),
        iterations=exp["iterations"],
        seed=seed,
        n_max_samples=method.samples,
        sampler=method.sampler,
        n_features=method.n_features,
        grid_size=exp["grid_size"],
        refit_every=exp["refit_every"],
        fit_budget=exp["fit_budget"],
        initial_design=exp["initial_design"],
        noise_std=noise_std,
        clamp=method.clamp,
        opt_budget=exp["opt_budget"],
        restarts=method.restarts,
        record_inference=True,
    )


def _run_task(task: dict) -> dict:
    """Worker entry: one (method, objective instance, repetition) run."""
    method = MethodSpec.from_dict(task["method"])
    ospec = ObjectiveSpec.from_dict(task["objective"])
    exp = task["experiment"]
    objective, true_partition = build_objective(ospec, task["instance_seed"])
    seed = task["seed"]
    rows: list[dict] = []
    meta = {
        "method": method.name,
        "objective": objective.name,
        "seed": seed,
        "K": method.samples,
        "sampler": method.sampler,
    }
    try:
        if method.kind == "random":
            trace = run_random_search(
                objective,
                exp["iterations"],
                seed,
                exp["initial_design"],
                ospec.noise_std,
            )
        elif method.kind in ("add_mes", "add_gp_ucb"):
            config = _build_config(method, exp, objective.dim, seed, ospec.noise_std)
            if method.learn_decomposition:
                part_arg = LearnSpec(method.n_candidates, method.max_group_size)
            else:
                if true_partition is None:
                    raise ValueError(
                        "additive methods need an additive objective or learning enabled"
                    )
                part_arg = true_partition
            trace = run_add_mes(objective, objective.domain, part_arg, config)
        else:
            config = _build_config(method, exp, objective.dim, seed, ospec.noise_std)
            trace = run_mes(objective, objective.domain, config)
    except Exception as e:  # recorded, not fatal to the experiment
        return {
            "rows": [],
            "trace_lines": [],
            "trace_name": None,
            "failed": True,
            "error": f"{type(e).__name__}: {e}",
            "meta": meta,
        }

    r = simple_regret(trace, objective)
    R = inference_regret_curve(trace, objective)
    for i, rec in enumerate(trace.records):
        rows.append(
            {
                "method": method.name,
                "objective": objective.name,
                "seed": seed,
                "t": i + 1,
                "r_t": float(r[i]),
                "R_t": float(R[i]) if np.isfinite(R[i]) else "",
                "acq_seconds": rec.acq_seconds,
                "K": method.samples,
                "sampler": method.sampler,
            }
        )
    trace_name = f"trace_{method.name}_{objective.name}_{seed}.jsonl"
    return {
        "rows": rows,
        "trace_lines": trace.to_jsonl_lines(meta),
        "trace_name": trace_name,
        "failed": trace.error is not None,
        "error": trace.error,
        "meta": meta,
    }


@dataclass
class ExperimentResult:
    rows: list
    summary: list
    failures: list


def _quartiles(values: list) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=float)
    return (
        float(np.percentile(arr, 25)),
        float(np.median(arr)),
        float(np.percentile(arr, 75)),
    )


def summarize(rows: list, failures: list) -> list:
    """Per (method, objective): final-iteration quartiles and timing moments."""
    groups: dict[tuple, dict] = {}
    for row in rows:
        key = (row["method"], row["objective"])
        grp = groups.setdefault(
            key, {"final_r": {}, "final_R": {}, "final_t": {}, "secs": []}
        )
        seed = row["seed"]
        t = row["t"]
        if t >= grp["final_t"].get(seed, 0):
            grp["final_t"][seed] = t
            grp["final_r"][seed] = row["r_t"]
            grp["final_R"][seed] = row["R_t"]
        grp["secs"].append(row["acq_seconds"])
    fail_counts: dict[tuple, int] = {}
    for f in failures:
        key = (f["method"], f["objective"])
        fail_counts[key] = fail_counts.get(key, 0) + 1
    out = []
    for key in sorted(set(groups) | set(fail_counts)):
        grp = groups.get(key)
        if grp is None:
            out.append(
                {
                    "method": key[0],
                    "objective": key[1],
                    "runs": 0,
                    "failed": fail_counts.get(key, 0),
                    "final_r_median": "",
                    "final_r_q1": "",
                    "final_r_q3": "",
                    "final_R_median": "",
                    "acq_seconds_mean": "",
                    "acq_seconds_sd": "",
                }
            )
            continue
        finals = list(grp["final_r"].values())
        q1, med, q3 = _quartiles(finals)
        r_finals = [v for v in grp["final_R"].values() if v != ""]
        secs = np.asarray(grp["secs"], dtype=float)
        out.append(
            {
                "method": key[0],
                "objective": key[1],
                "runs": len(finals),
                "failed": fail_counts.get(key, 0),
                "final_r_median": med,
                "final_r_q1": q1,
                "final_r_q3": q3,
                "final_R_median": float(np.median(r_finals)) if r_finals else "",
                "acq_seconds_mean": float(np.mean(secs)),
                "acq_seconds_sd": float(np.std(secs, ddof=1)) if secs.size > 1 else 0.0,
            }
        )
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def run_experiment(
    spec: ExperimentSpec,
    out_dir: str | Path,
    parallel: int | None = None,
    strict: bool = False,
    write_traces: bool = True,
) -> ExperimentResult:
    """Execute the grid, write regret.csv / summary.csv / trace files.

    Repetition seeds are shared across methods so comparisons are paired.
    Row order and regret values are independent of the worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exp = {
        "iterations": spec.iterations,
        "initial_design": spec.initial_design,
        "model_scale": spec.model_scale,
        "model_bandwidth": spec.model_bandwidth,
        "model_noise_var": spec.model_noise_var,
        "refit_every": spec.refit_every,
        "fit_budget": spec.fit_budget,
        "opt_budget": spec.opt_budget,
        "grid_size": spec.grid_size,
    }
    tasks = []
    for method in spec.methods:
        for oi, ospec in enumerate(spec.objectives):
            for inst in range(ospec.count):
                for rep in range(spec.repetitions):
                    tasks.append(
                        {
                            "method": method.to_dict(),
                            "objective": ospec.to_dict(),
                            "experiment": exp,
                            "instance_seed": _instance_seed(spec.base_seed, oi, inst),
                            "seed": _seed_for(spec.base_seed, oi, inst, rep),
                        }
                    )

    if parallel is not None and parallel <= 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_task, tasks))

    rows: list = []
    failures: list = []
    for res in results:
        rows.extend(res["rows"])
        if res["failed"]:
            failures.append(
                {
                    "method": res["meta"]["method"],
                    "objective": res["meta"]["objective"],
                    "seed": res["meta"]["seed"],
                    "error": res["error"],
                }
            )
        if write_traces and res["trace_name"]:
            with open(out_dir / res["trace_name"], "w", encoding="utf-8") as fh:
                fh.write("\n".join(res["trace_lines"]) + "\n")

    summary = summarize(rows, failures)
    write_csv(out_dir / "regret.csv", REGRET_COLUMNS, rows)
    write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, summary)
    if strict and failures:
        raise RuntimeError(f"{len(failures)} run(s) failed under --strict")
    return ExperimentResult(rows, summary, failures)
