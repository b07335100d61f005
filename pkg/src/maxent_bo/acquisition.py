"""Acquisition functions and their box-constrained optimizer.

The max-value information score reduces to a scalar kernel
g(u) = u*pdf(u)/(2*cdf(u)) - log cdf(u) applied to the standardized gap
between a sampled maximum and the posterior at x. g is strictly positive
and strictly decreasing; with a single sample, maximizing it is identical
to minimizing the gap, which ties the method to classic baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import qmc

from .gp import Domain, Partition, PointPrediction
from .maxvalue import EULER_GAMMA, GumbelParams, MaxValueSamples

__all__ = [
    "AcquisitionSpec",
    "PointPrediction",
    "g",
    "mes_alpha",
    "mes_alpha_marginal",
    "ucb_alpha",
    "pi_alpha",
    "ei_alpha",
    "est_alpha",
    "add_mes_alpha",
    "add_gp_ucb_alpha",
    "ucb_beta_schedule",
    "est_target",
    "optimize_acquisition",
    "optimize_acquisition_discrete",
    "optimize_acquisition_per_component",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Above this point the score underflows float64 (~1e-310 by u=38.5), so the
# tail is evaluated with extended precision from its asymptotic series to
# keep strict positivity and monotonicity out to u = 40 and beyond.
_TAIL_SWITCH = 26.0

_MIN_STD = 1e-300


def g(u):
    """Scalar max-value information score; accepts scalars or arrays.

    Stable across [-40, 40]: the left tail works through the log normal CDF
    (where -log cdf(u) ~ u^2/2 dominates), the right tail through the
    asymptotic form u*pdf(u)/2 -> 0+ in extended precision.
    """
    u_arr = np.asarray(u, dtype=float)
    scalar = u_arr.ndim == 0
    u_flat = np.atleast_1d(u_arr)
    out = np.zeros(u_flat.shape, dtype=np.longdouble)

    main = u_flat <= _TAIL_SWITCH
    if np.any(main):
        um = u_flat[main]
        log_cdf = log_ndtr(um)
        log_pdf = -0.5 * um * um - _LOG_SQRT_2PI
        ratio = np.exp(log_pdf - log_cdf)
        out[main] = 0.5 * um * ratio - log_cdf

    tail = ~main
    if np.any(tail):
        ut = u_flat[tail].astype(np.longdouble)
        h = np.exp(-0.5 * ut * ut) / np.sqrt(np.longdouble(2.0) * np.pi)
        inv2 = 1.0 / (ut * ut)
        # Mills series for the upper-tail mass q = 1 - cdf(u).
        series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2))
        q = h / ut * series
        out[tail] = 0.5 * ut * h / (1.0 - q) + (q + 0.5 * q * q)

    if scalar:
        return out[0]
    return out


def _gaps(pred: PointPrediction, values: np.ndarray) -> np.ndarray:
    std = max(pred.std, _MIN_STD)
    return (np.asarray(values, dtype=float) - pred.mean) / std


def mes_alpha(pred: PointPrediction, ys: MaxValueSamples) -> float:
    """Monte Carlo max-value information gain: mean of g over the samples."""
    return float(np.mean(g(_gaps(pred, ys.values))))


def mes_alpha_marginal(
    preds: Sequence[PointPrediction], ys: Sequence[MaxValueSamples]
) -> float:
    """Hyperparameter-marginalized score: double sum of g over the set and samples.

    Matches the marginal form exactly, which carries no 1/K prefactor; with a
    single hyperparameter setting this is K times the plain score.
    """
    if len(preds) == 0 or len(preds) != len(ys):
        raise ValueError("one prediction is required per hyperparameter setting")
    total = np.longdouble(0.0)
    for pred, samples in zip(preds, ys):
        total += np.sum(g(_gaps(pred, samples.values)))
    return float(total)


def ucb_alpha(pred: PointPrediction, beta: float) -> float:
    """Upper confidence bound mean + sqrt(beta) * std."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return pred.mean + math.sqrt(beta) * pred.std


def pi_alpha(pred: PointPrediction, theta: float) -> float:
    """Probability that the value at x exceeds the target level theta."""
    std = max(pred.std, _MIN_STD)
    return float(ndtr((pred.mean - theta) / std))


def ei_alpha(pred: PointPrediction, incumbent: float) -> float:
    """Expected improvement over the incumbent, closed Gaussian form."""
    if pred.std <= _MIN_STD:
        return max(pred.mean - incumbent, 0.0)
    z = (pred.mean - incumbent) / pred.std
    val = pred.std * (z * ndtr(z) + math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi))
    return max(float(val), 0.0)


def est_alpha(pred: PointPrediction, m: float) -> float:
    """Negated standardized gap to the max estimate m (shared argmax interface)."""
    std = max(pred.std, _MIN_STD)
    return -(m - pred.mean) / std


def add_mes_alpha(
    pred: PointPrediction, ys: MaxValueSamples, component: int | None = None
) -> float:
    """Per-component max-value score: sum of g over the component's samples."""
    if component is not None and ys.component != component:
        raise ValueError(
            f"samples tagged for component {ys.component}, expected {component}"
        )
    return float(np.sum(g(_gaps(pred, ys.values))))


def add_gp_ucb_alpha(pred: PointPrediction, group: Sequence[int], t: int) -> float:
    """Additive-UCB component score with beta_t = |group| log(2t) / 5."""
    if t < 1:
        raise ValueError("iteration index must be at least 1")
    beta = len(group) * math.log(2.0 * t) / 5.0
    return pred.mean + math.sqrt(beta) * pred.std


def ucb_beta_schedule(t: int, n_candidates: int, delta: float = 0.1) -> float:
    """Confidence schedule 2 log(n t^2 pi^2 / (6 delta)) over a discrete probe set."""
    if t < 1:
        raise ValueError("iteration index must be at least 1")
    return 2.0 * math.log(n_candidates * t * t * math.pi**2 / (6.0 * delta))


def est_target(gumbel: GumbelParams) -> float:
    """Max estimate for the gap-minimizing baseline: the fitted Gumbel mean."""
    return gumbel.a + EULER_GAMMA * gumbel.b


_KINDS = (
    "mes",
    "add_mes",
    "ucb",
    "pi",
    "ei",
    "est",
    "add_gp_ucb",
    "mes_marginal",
)


@dataclass
class AcquisitionSpec:
    """Which acquisition to run and its kind-specific parameters.

    params keys by kind:
      ucb          beta (float >= 0) or beta_rule == "schedule" [+ delta]
      pi           target_margin (float >= 0), added to the incumbent
      mes_marginal hyper_set: list of KernelParams
      others       none required
    """

    kind: str
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        p = self.params
        if self.kind == "ucb":
            if "beta" in p:
                if float(p["beta"]) < 0:
                    raise ValueError("ucb beta must be nonnegative")
            elif p.get("beta_rule") != "schedule":
                raise ValueError("ucb requires beta or beta_rule: schedule")
        elif self.kind == "pi":
            if "target_margin" not in p:
                raise ValueError("pi requires target_margin")
            if float(p["target_margin"]) < 0:
                raise ValueError("pi target_margin must be nonnegative")
        elif self.kind == "mes_marginal":
            hs = p.get("hyper_set")
            if not hs:
                raise ValueError("mes_marginal requires a nonempty hyper_set")


ScoreFn = Callable[[np.ndarray], np.ndarray]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_refine(
    alpha: ScoreFn,
    x: np.ndarray,
    fx: float,
    domain: Domain,
    iters_per_coord: int,
    rounds: int,
) -> tuple[np.ndarray, float]:
    """Coordinate-wise golden-section ascent in a shrinking local window."""
    x = x.copy()
    widths = domain.widths
    for rnd in range(rounds):
        window = widths / (4.0 * (rnd + 1))
        for i in range(domain.dim):
            lo = max(domain.lower[i], x[i] - window[i])
            hi = min(domain.upper[i], x[i] + window[i])
            if hi <= lo:
                continue
            a, b = lo, hi
            c = b - _GOLDEN * (b - a)
            d = a + _GOLDEN * (b - a)

            def coord_val(v: float) -> float:
                cand = x.copy()
                cand[i] = v
                return float(alpha(cand[None, :])[0])

            fc, fd = coord_val(c), coord_val(d)
            for _ in range(iters_per_coord):
                if fc >= fd:
                    b, d, fd = d, c, fc
                    c = b - _GOLDEN * (b - a)
                    fc = coord_val(c)
                else:
                    a, c, fc = c, d, fd
                    d = a + _GOLDEN * (b - a)
                    fd = coord_val(d)
            v, fv = (c, fc) if fc >= fd else (d, fd)
            if fv > fx:
                x[i] = v
                fx = fv
    return x, fx


def optimize_acquisition(
    alpha: ScoreFn,
    domain: Domain,
    budget: int,
    rng: np.random.Generator,
    refine_top: int = 5,
    refine_iters: int = 16,
    refine_rounds: int = 2,
) -> tuple[np.ndarray, float]:
    """Maximize a batch score function over the box.

    A low-discrepancy probe set of `budget` points is scored, then the best
    few probes are polished by coordinate-wise golden-section ascent. The
    returned value never falls below any probe. alpha takes an (n, d) array
    and returns an (n,) array of scores.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    sampler = qmc.Halton(d=domain.dim, scramble=True, seed=rng)
    P = domain.lower + sampler.random(budget) * domain.widths
    vals = np.asarray(alpha(P), dtype=float)
    order = np.argsort(vals)[::-1]
    best_x = P[order[0]].copy()
    best_v = float(vals[order[0]])
    for idx in order[: min(refine_top, budget)]:
        x, fv = _golden_refine(
            alpha, P[idx], float(vals[idx]), domain, refine_iters, refine_rounds
        )
        if fv > best_v:
            best_x, best_v = x, fv
    return best_x, best_v


def optimize_acquisition_discrete(
    alpha: ScoreFn, points: np.ndarray
) -> tuple[np.ndarray, float, int]:
    """Exact argmax over an explicit candidate set."""
    points = np.atleast_2d(points)
    vals = np.asarray(alpha(points), dtype=float)
    i = int(np.argmax(vals))
    return points[i].copy(), float(vals[i]), i


def optimize_acquisition_per_component(
    alphas: Sequence[ScoreFn],
    partition: Partition,
    domain: Domain,
    budget: int | Sequence[int],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimize each component score over its sub-box and concatenate.

    alphas[m] scores sub-vectors on the dimensions of group m. Returns the
    assembled full-dimensional point and the per-component best scores.
    """
    if not partition.covers(domain.dim):
        raise ValueError("partition does not cover the domain dimensions")
    if len(alphas) != partition.n_groups:
        raise ValueError("one score function required per group")
    budgets = (
        [int(budget)] * partition.n_groups
        if np.isscalar(budget)
        else [int(b) for b in budget]
    )
    if len(budgets) != partition.n_groups:
        raise ValueError("one budget required per group")
    x = np.empty(domain.dim)
    values = np.empty(partition.n_groups)
    for m, (grp, alpha_m) in enumerate(zip(partition.groups, alphas)):
        sub = domain.subbox(grp)
        xm, vm = optimize_acquisition(alpha_m, sub, budgets[m], rng)
        x[list(grp)] = xm
        values[m] = vm
    return x, values
