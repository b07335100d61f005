"""Outer Bayesian-optimization loops, full-model and additive.

Each iteration rebuilds the posterior from scratch, draws max-value samples
through the configured sampler (or computes a baseline score), maximizes the
acquisition over the box, queries the objective, and appends the new
observation. Traces record everything needed to recompute regret offline.
All randomness flows through one generator seeded from the config, so a run
is a pure function of (objective, domain, config).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import acquisition as acq
from .gp import (
    AddGpPosterior,
    Domain,
    GpPosterior,
    KernelParams,
    ObservationSet,
    Partition,
    fit_add_posterior,
    fit_hyperparameters,
    fit_posterior,
    learn_decomposition,
    predict_add_batch,
    predict_batch,
    predict_component_batch,
)
from .maxvalue import (
    STD_FLOOR_FACTOR,
    MaxValueSamples,
    build_feature_map,
    build_grid_stats,
    default_grid_size,
    default_inversion_tol,
    feature_posterior,
    fit_gumbel,
    sample_max_features,
    sample_max_features_components,
    sample_max_gumbel,
)

Objective = Callable[[np.ndarray], float]

# Relative margin used when flooring sampled maxima above the incumbent.
CLAMP_MARGIN_FACTOR = 1e-3


@dataclass
class LearnSpec:
    """Ask the additive loop to learn its decomposition after the initial design."""

    n_candidates: int = 10000
    max_group_size: int = 2


@dataclass
class BoConfig:
    """Everything a single optimization run needs besides the objective.

    refit_every of None (or 0) keeps hyperparameters fixed; opt_budget and
    grid_size of None scale with dimension (2000*d probes, min(10000, 500*d)
    grid points).
    """

    params: KernelParams
    acquisition: acq.AcquisitionSpec
    iterations: int
    seed: int
    n_max_samples: int = 100
    sampler: str = "gumbel"
    n_features: int = 500
    grid_size: int | None = None
    refit_every: int | None = None
    fit_budget: int = 240
    initial_design: int = 1
    noise_std: float = 0.0
    clamp: bool = True
    opt_budget: int | None = None
    restarts: int = 10
    ascent_steps: int = 200
    record_inference: bool = True

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.n_max_samples < 1:
            raise ValueError("n_max_samples must be at least 1")
        if self.refit_every is not None and self.refit_every < 0:
            raise ValueError("refit_every must be None or nonnegative")
        if self.sampler not in ("gumbel", "feature"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.initial_design < 0:
            raise ValueError("initial_design must be nonnegative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        self.acquisition.validate()


@dataclass
class IterationRecord:
    x: np.ndarray
    y: float
    acq_value: float
    acq_seconds: float
    max_value_samples: list | None = None
    inferred_x: np.ndarray | None = None


@dataclass
class BoTrace:
    """Ordered record of one optimization run."""

    init_points: np.ndarray
    init_values: np.ndarray
    records: list = field(default_factory=list)
    final_params: KernelParams | None = None
    partition: Partition | None = None
    error: str | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def queried_points(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.init_points.shape[1]))
        return np.vstack([r.x for r in self.records])

    def observed_values(self) -> np.ndarray:
        return np.array([r.y for r in self.records])

    def cumulative_best(self, include_init: bool = True) -> np.ndarray:
        """Running best observed value over the loop iterations."""
        ys = self.observed_values()
        if include_init and self.init_values.size:
            best0 = float(np.max(self.init_values))
            return np.maximum.accumulate(np.concatenate([[best0], ys]))[1:]
        return np.maximum.accumulate(ys)

    def to_jsonl_lines(self, meta: dict | None = None) -> list[str]:
        lines = []
        head = {"type": "meta"}
        head.update(meta or {})
        head["iterations"] = self.iterations
        head["error"] = self.error
        if self.partition is not None:
            head["partition"] = [list(g) for g in self.partition.groups]
        lines.append(json.dumps(head))
        for x, y in zip(self.init_points, self.init_values):
            lines.append(json.dumps({"type": "init", "x": list(x), "y": float(y)}))
        for t, rec in enumerate(self.records, start=1):
            row = {
                "type": "iter",
                "t": t,
                "x": [float(v) for v in rec.x],
                "y": rec.y,
                "acq_value": rec.acq_value,
                "acq_seconds": rec.acq_seconds,
            }
            if rec.max_value_samples is not None:
                row["max_value_samples"] = [
                    [float(v) for v in s] for s in rec.max_value_samples
                ]
            if rec.inferred_x is not None:
                row["inferred_x"] = [float(v) for v in rec.inferred_x]
            lines.append(json.dumps(row))
        return lines


def model_adaptation_step(
    data: ObservationSet,
    current: KernelParams,
    t: int,
    refit_every: int | None,
    budget: int = 240,
) -> KernelParams:
    """Refit hyperparameters on schedule; otherwise return current unchanged."""
    if not refit_every or t % refit_every != 0:
        return current
    if data.size < 2:
        return current
    return fit_hyperparameters(data, current, budget=budget)


_INFERENCE_PROBES: dict[int, np.ndarray] = {}


def _inference_probe_unit(dim: int, n: int = 2048) -> np.ndarray:
    """Fixed unscrambled Halton set, shared by every run for a given dimension."""
    probes = _INFERENCE_PROBES.get(dim)
    if probes is None or probes.shape[0] < n:
        probes = qmc.Halton(d=dim, scramble=False).random(n)
        _INFERENCE_PROBES[dim] = probes
    return probes[:n]


def _inference_argmax(mean_fn, domain: Domain, extra: np.ndarray) -> np.ndarray:
    pts = domain.lower + _inference_probe_unit(domain.dim) * domain.widths
    if extra.size:
        pts = np.vstack([pts, extra])
    means = mean_fn(pts)
    return pts[int(np.argmax(means))].copy()


def _observe(
    objective: Objective, x: np.ndarray, noise_std: float, rng: np.random.Generator
) -> tuple[float, float]:
    """Evaluate the objective and corrupt with Gaussian noise; returns (y, f)."""
    f = float(objective(x))
    eps = noise_std * rng.standard_normal() if noise_std > 0 else 0.0
    return f + eps, f


def _std_floor(scale: float) -> float:
    return STD_FLOOR_FACTOR * math.sqrt(scale)


def _clamp_floor(best_y: float | None, means: np.ndarray) -> float | None:
    if best_y is None:
        return None
    spread = float(np.max(means) - np.min(means))
    return best_y + CLAMP_MARGIN_FACTOR * spread


def _draw_max_samples(
    post: GpPosterior,
    params: KernelParams,
    data: ObservationSet,
    domain: Domain,
    config: BoConfig,
    rng: np.random.Generator,
) -> MaxValueSamples:
    best_y = float(np.max(data.values)) if (config.clamp and data.size) else None
    if config.sampler == "gumbel":
        n_grid = config.grid_size or default_grid_size(domain.dim)
        stats = build_grid_stats(post, domain, n_grid, rng)
        gumbel = fit_gumbel(stats, default_inversion_tol(stats.stds))
        floor = _clamp_floor(best_y, stats.means)
        return sample_max_gumbel(gumbel, rng, config.n_max_samples, floor_at=floor)
    fmap = build_feature_map(params, config.n_features, rng)
    noise_var = max(params.noise_var, 1e-10 * params.scale)
    fp = feature_posterior(fmap, data, noise_var)
    floor = None
    if best_y is not None:
        probe_pts = domain.lower + rng.random((256, domain.dim)) * domain.widths
        means, _ = predict_batch(post, probe_pts)
        floor = _clamp_floor(best_y, means)
    return sample_max_features(
        fp,
        fmap,
        domain,
        rng,
        config.n_max_samples,
        restarts=config.restarts,
        steps=config.ascent_steps,
        floor_at=floor,
    )


def _mes_score_fn(post: GpPosterior, samples: MaxValueSamples, floor: float):
    vals = samples.values

    def alpha(X: np.ndarray) -> np.ndarray:
        mu, sd = predict_batch(post, X)
        sd = np.maximum(sd, floor)
        gam = (vals[None, :] - mu[:, None]) / sd[:, None]
        return acq.g(gam).mean(axis=1).astype(float)

    return alpha


def _baseline_score_fn(
    kind: str, post: GpPosterior, floor: float, target: float
):
    """Batch score for ucb/pi/ei/est; `target` carries beta/theta/incumbent/m."""

    def alpha(X: np.ndarray) -> np.ndarray:
        mu, sd = predict_batch(post, X)
        sd = np.maximum(sd, floor)
        if kind == "ucb":
            return mu + math.sqrt(target) * sd
        if kind == "pi":
            from scipy.special import ndtr

            return ndtr((mu - target) / sd)
        if kind == "ei":
            z = (mu - target) / sd
            from scipy.special import ndtr

            pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
            return np.maximum(sd * (z * ndtr(z) + pdf), 0.0)
        if kind == "est":
            return -(target - mu) / sd
        raise ValueError(f"unknown baseline kind {kind!r}")

    return alpha


def run_mes(objective: Objective, domain: Domain, config: BoConfig) -> BoTrace:
    """Full-model loop for the max-value method and its single-box baselines.

    Acquisition kinds handled here: mes, mes_marginal, ucb, pi, ei, est.
    Aborts with the trace so far if the objective returns a non-finite value.
    """
    config.validate()
    kind = config.acquisition.kind
    if kind in ("add_mes", "add_gp_ucb"):
        raise ValueError("additive acquisitions run through run_add_mes")
    rng = np.random.default_rng(config.seed)
    d = domain.dim
    data = ObservationSet.empty(d)

    init_xs, init_ys = [], []
    trace = BoTrace(np.zeros((0, d)), np.zeros(0))
    for _ in range(config.initial_design):
        x = rng.uniform(domain.lower, domain.upper)
        y, f = _observe(objective, x, config.noise_std, rng)
        if not math.isfinite(f):
            trace.init_points = np.array(init_xs) if init_xs else np.zeros((0, d))
            trace.init_values = np.array(init_ys)
            trace.error = "objective returned a non-finite value during initial design"
            trace.final_params = config.params
            return trace
        init_xs.append(x)
        init_ys.append(y)
        data = data.append(x, y)
    trace.init_points = np.array(init_xs) if init_xs else np.zeros((0, d))
    trace.init_values = np.array(init_ys)

    params = config.params
    floor = _std_floor(params.scale)
    opt_budget = config.opt_budget or 2000 * d

    for t in range(1, config.iterations + 1):
        if config.refit_every and data.size >= 2:
            params = model_adaptation_step(
                data, params, t, config.refit_every, config.fit_budget
            )
            floor = _std_floor(params.scale)
        tic = time.perf_counter()
        post = fit_posterior(data, params)
        samples_rec: list | None = None

        if kind == "mes":
            samples = _draw_max_samples(post, params, data, domain, config, rng)
            alpha = _mes_score_fn(post, samples, floor)
            samples_rec = [samples.values]
        elif kind == "mes_marginal":
            hyper_set = [
                p if isinstance(p, KernelParams) else KernelParams(**p)
                for p in config.acquisition.params["hyper_set"]
            ]
            posts, all_samples = [], []
            for eta in hyper_set:
                post_eta = fit_posterior(data, eta)
                s_eta = _draw_max_samples(post_eta, eta, data, domain, config, rng)
                posts.append(post_eta)
                all_samples.append(s_eta)
            floors = [_std_floor(eta.scale) for eta in hyper_set]

            def alpha(X, _posts=posts, _samples=all_samples, _floors=floors):
                total = np.zeros(np.atleast_2d(X).shape[0], dtype=np.longdouble)
                for post_eta, s_eta, fl in zip(_posts, _samples, _floors):
                    mu, sd = predict_batch(post_eta, X)
                    sd = np.maximum(sd, fl)
                    gam = (s_eta.values[None, :] - mu[:, None]) / sd[:, None]
                    total += acq.g(gam).sum(axis=1)
                return total.astype(float)

            samples_rec = [s.values for s in all_samples]
        elif kind == "ucb":
            p = config.acquisition.params
            beta = (
                float(p["beta"])
                if "beta" in p
                else acq.ucb_beta_schedule(t, opt_budget, p.get("delta", 0.1))
            )
            alpha = _baseline_score_fn("ucb", post, floor, beta)
        elif kind == "pi":
            incumbent = float(np.max(data.values)) if data.size else 0.0
            theta = incumbent + float(config.acquisition.params["target_margin"])
            alpha = _baseline_score_fn("pi", post, floor, theta)
        elif kind == "ei":
            incumbent = float(np.max(data.values)) if data.size else 0.0
            alpha = _baseline_score_fn("ei", post, floor, incumbent)
        elif kind == "est":
            n_grid = config.grid_size or default_grid_size(d)
            stats = build_grid_stats(post, domain, n_grid, rng)
            gumbel = fit_gumbel(stats, default_inversion_tol(stats.stds))
            alpha = _baseline_score_fn("est", post, floor, acq.est_target(gumbel))
        else:
            raise ValueError(f"unsupported acquisition kind {kind!r}")

        x, aval = acq.optimize_acquisition(alpha, domain, opt_budget, rng)
        acq_seconds = time.perf_counter() - tic

        y, f = _observe(objective, x, config.noise_std, rng)
        if not math.isfinite(f):
            trace.error = f"objective returned a non-finite value at iteration {t}"
            break
        data = data.append(x, y)

        inferred = None
        if config.record_inference:
            post_t = fit_posterior(data, params)
            inferred = _inference_argmax(
                lambda P: predict_batch(post_t, P)[0], domain, data.points
            )
        trace.records.append(
            IterationRecord(x, y, float(aval), acq_seconds, samples_rec, inferred)
        )

    trace.final_params = params
    return trace


def _component_gumbel_samples(
    post: AddGpPosterior,
    domain: Domain,
    config: BoConfig,
    rng: np.random.Generator,
    m: int,
) -> MaxValueSamples:
    grp = post.partition.groups[m]
    n_grid = config.grid_size or default_grid_size(len(grp))
    stats = build_grid_stats(post, domain, n_grid, rng, component=m)
    gumbel = fit_gumbel(stats, default_inversion_tol(stats.stds))
    floor = None
    if config.clamp:
        # Component values are unobserved (only sums are); floor at the best
        # component posterior mean instead of the best observed y.
        floor = _clamp_floor(float(np.max(stats.means)), stats.means)
    return sample_max_gumbel(
        gumbel, rng, config.n_max_samples, floor_at=floor, component=m
    )


def _component_score_fn(
    post: AddGpPosterior,
    m: int,
    domain: Domain,
    floor: float,
    samples: MaxValueSamples | None,
    beta: float | None,
):
    """Score over sub-vectors of group m, embedded at the box midpoint."""
    grp = list(post.partition.groups[m])
    mid = domain.midpoint

    def alpha(X_sub: np.ndarray) -> np.ndarray:
        X_sub = np.atleast_2d(X_sub)
        X = np.tile(mid, (X_sub.shape[0], 1))
        X[:, grp] = X_sub
        mu, sd = predict_component_batch(post, X, m)
        sd = np.maximum(sd, floor)
        if samples is not None:
            gam = (samples.values[None, :] - mu[:, None]) / sd[:, None]
            return acq.g(gam).sum(axis=1).astype(float)
        return mu + math.sqrt(beta) * sd

    return alpha


def run_add_mes(
    objective: Objective,
    domain: Domain,
    partition_or_learn: Partition | LearnSpec,
    config: BoConfig,
) -> BoTrace:
    """Additive loop: per-component max sampling and sub-box maximization.

    Acquisition kinds handled here: add_mes, add_gp_ucb. The decomposition is
    either supplied or learned once right after the initial design and then
    kept fixed. Hyperparameters stay fixed for additive runs.
    """
    config.validate()
    kind = config.acquisition.kind
    if kind not in ("add_mes", "add_gp_ucb"):
        raise ValueError("run_add_mes handles add_mes and add_gp_ucb only")
    if isinstance(partition_or_learn, LearnSpec) and config.initial_design < 2:
        raise ValueError("decomposition learning needs at least two initial points")
    rng = np.random.default_rng(config.seed)
    d = domain.dim
    data = ObservationSet.empty(d)

    init_xs, init_ys = [], []
    trace = BoTrace(np.zeros((0, d)), np.zeros(0))
    for _ in range(config.initial_design):
        x = rng.uniform(domain.lower, domain.upper)
        y, f = _observe(objective, x, config.noise_std, rng)
        if not math.isfinite(f):
            trace.init_points = np.array(init_xs) if init_xs else np.zeros((0, d))
            trace.init_values = np.array(init_ys)
            trace.error = "objective returned a non-finite value during initial design"
            trace.final_params = config.params
            return trace
        init_xs.append(x)
        init_ys.append(y)
        data = data.append(x, y)
    trace.init_points = np.array(init_xs) if init_xs else np.zeros((0, d))
    trace.init_values = np.array(init_ys)

    if isinstance(partition_or_learn, LearnSpec):
        partition, comp_params = learn_decomposition(
            data,
            config.params,
            n_candidates=partition_or_learn.n_candidates,
            max_group_size=partition_or_learn.max_group_size,
            rng=rng,
        )
    else:
        partition = partition_or_learn
        if not partition.covers(d):
            raise ValueError("partition does not cover the domain dimensions")
        comp_params = tuple(config.params.restrict(g) for g in partition.groups)
    trace.partition = partition
    noise_var = config.params.noise_var
    M = partition.n_groups

    for t in range(1, config.iterations + 1):
        tic = time.perf_counter()
        post = fit_add_posterior(data, partition, comp_params, noise_var)

        alphas = []
        samples_rec: list | None = [] if kind == "add_mes" else None
        if kind == "add_mes" and config.sampler == "feature":
            per_group = max(1, config.n_features // M)
            maps = [
                build_feature_map(
                    comp_params[m], per_group, rng,
                    dims=partition.groups[m], total_dim=d,
                )
                for m in range(M)
            ]
            fp = feature_posterior(maps, data, max(noise_var, 1e-10))
            comp_samples = sample_max_features_components(
                fp, maps, partition, domain, rng, config.n_max_samples,
                restarts=config.restarts, steps=config.ascent_steps,
            )
        for m in range(M):
            floor = _std_floor(comp_params[m].scale)
            if kind == "add_mes":
                if config.sampler == "gumbel":
                    samples_m = _component_gumbel_samples(post, domain, config, rng, m)
                else:
                    samples_m = comp_samples[m]
                samples_rec.append(samples_m.values)
                alphas.append(
                    _component_score_fn(post, m, domain, floor, samples_m, None)
                )
            else:
                beta = len(partition.groups[m]) * math.log(2.0 * t) / 5.0
                alphas.append(_component_score_fn(post, m, domain, floor, None, beta))

        budgets = [
            config.opt_budget or 2000 * len(grp) for grp in partition.groups
        ]
        x, vals = acq.optimize_acquisition_per_component(
            alphas, partition, domain, budgets, rng
        )
        acq_seconds = time.perf_counter() - tic

        y, f = _observe(objective, x, config.noise_std, rng)
        if not math.isfinite(f):
            trace.error = f"objective returned a non-finite value at iteration {t}"
            break
        data = data.append(x, y)

        inferred = None
        if config.record_inference:
            post_t = fit_add_posterior(data, partition, comp_params, noise_var)
            inferred = _inference_argmax(
                lambda P: predict_add_batch(post_t, P)[0], domain, data.points
            )
        trace.records.append(
            IterationRecord(
                x, y, float(np.sum(vals)), acq_seconds, samples_rec, inferred
            )
        )

    trace.final_params = config.params
    return trace
