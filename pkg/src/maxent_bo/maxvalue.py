"""Sampling the posterior maximum value of a GP objective.

Two strategies: (1) approximate the CDF of the max over a dense grid of
representative points, treating marginals as independent, then fit a Gumbel
by quartile matching and sample through its quantile function; (2) draw an
explicit posterior function through a random trigonometric feature map and
maximize it over the box. Both come in full-model and per-component
(additive-GP) variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import qmc

from .exceptions import NumericalError
from .gp import (
    AddGpPosterior,
    Domain,
    GpPosterior,
    KernelParams,
    ObservationSet,
    _jittered_cholesky,
    predict_batch,
    predict_component_batch,
)

EULER_GAMMA = 0.5772156649015329

# Relative floor applied to grid standard deviations (near-interpolated
# points otherwise divide by zero in the standardized gap).
STD_FLOOR_FACTOR = 1e-9

MAX_BRACKET_DOUBLINGS = 60


def default_grid_size(dim: int) -> int:
    return min(10000, 500 * dim)


def default_inversion_tol(stds: np.ndarray) -> float:
    return 1e-6 * float(np.max(stds))


@dataclass(frozen=True, eq=False)
class GridStats:
    """Posterior mean/std at a finite representative point set."""

    grid: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if not (self.grid.shape[0] == self.means.size == self.stds.size):
            raise ValueError("grid rows, means, and stds must align")
        if not np.all(self.stds > 0):
            raise ValueError("stds must be strictly positive after flooring")


@dataclass(frozen=True)
class GumbelParams:
    """Location/scale of the Gumbel CDF exp(-exp(-(z - a) / b))."""

    a: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("gumbel scale b must be positive")

    @property
    def mean(self) -> float:
        return self.a + EULER_GAMMA * self.b

    def cdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.exp(-np.exp(-(z - self.a) / self.b))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Random trigonometric features approximating the SE kernel.

    Feature i evaluates sqrt(scale) * sqrt(2/D) * cos(omega_i . x + c_i) with
    omega_i drawn from the kernel spectral density (Gaussian, per-dim std
    1/bandwidth) and c_i uniform on [0, 2pi). For a component map, omega is
    zero outside the active dimensions.
    """

    omegas: np.ndarray
    phases: np.ndarray
    scale: float

    def __post_init__(self):
        if self.omegas.ndim != 2 or self.omegas.shape[0] != self.phases.size:
            raise ValueError("omegas must be (D, d) with one phase per feature")
        if self.phases.size < 1:
            raise ValueError("at least one feature is required")
        if np.any(self.phases < 0) or np.any(self.phases >= 2 * np.pi):
            raise ValueError("phases must lie in [0, 2pi)")

    @property
    def n_features(self) -> int:
        return self.phases.size

    @property
    def amplitude(self) -> float:
        return math.sqrt(2.0 * self.scale / self.n_features)

    def features(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.amplitude * np.cos(X @ self.omegas.T + self.phases)


@dataclass(frozen=True, eq=False)
class FeaturePosterior:
    """Gaussian posterior over feature weights: N(nu, sigma)."""

    nu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray

    @property
    def n_features(self) -> int:
        return self.nu.size


@dataclass(frozen=True, eq=False)
class MaxValueSamples:
    """Sampled maxima of the objective, tagged with their provenance."""

    values: np.ndarray
    source: str
    component: int | None = None

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if v.size < 1:
            raise ValueError("at least one sample is required")
        if self.source not in ("gumbel", "feature"):
            raise ValueError(f"unknown sample source {self.source!r}")

    @property
    def count(self) -> int:
        return self.values.size


def _halton_points(domain: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    sampler = qmc.Halton(d=domain.dim, scramble=True, seed=rng)
    return domain.lower + sampler.random(n) * domain.widths


def build_grid_stats(
    post: GpPosterior | AddGpPosterior,
    domain: Domain,
    n_grid: int,
    rng: np.random.Generator,
    component: int | None = None,
    std_floor: float | None = None,
) -> GridStats:
    """Low-discrepancy grid over the box with posterior means/stds.

    For an additive posterior, component selects the group; only the active
    dimensions vary (the rest sit at the box midpoint, which the component
    posterior ignores).
    """
    if n_grid < 2:
        raise ValueError("grid needs at least two points")
    if isinstance(post, AddGpPosterior):
        if component is None:
            raise ValueError("component index required for an additive posterior")
        dims = list(post.partition.groups[component])
        sub = domain.subbox(dims)
        pts = _halton_points(sub, n_grid, rng)
        grid = np.tile(domain.midpoint, (n_grid, 1))
        grid[:, dims] = pts
        means, stds = predict_component_batch(post, grid, component)
        scale = post.component_params[component].scale
    else:
        grid = _halton_points(domain, n_grid, rng)
        means, stds = predict_batch(post, grid)
        scale = post.params.scale
    floor = STD_FLOOR_FACTOR * math.sqrt(scale) if std_floor is None else std_floor
    return GridStats(grid, means, np.maximum(stds, floor))


def log_cdf_max(stats: GridStats, z) -> float | np.ndarray:
    """log Pr[max over the grid < z] under independent Gaussian marginals.

    Sum of stable log normal CDFs; monotone nondecreasing in z and tending
    to 0 as z grows. Very negative z gives a large negative (finite or -inf)
    value.
    """
    z_arr = np.asarray(z, dtype=float)
    gam = (z_arr[..., None] - stats.means) / stats.stds
    out = np.sum(log_ndtr(gam), axis=-1)
    if np.isscalar(z) or z_arr.ndim == 0:
        return float(out)
    return out


def invert_cdf_max(stats: GridStats, r: float, tol: float) -> float:
    """Solve log_cdf_max(z) = log r by bracketed bisection.

    The initial bracket spans [max mean - 5 max std, max mean + 5 max std]
    and is doubled outward until it straddles the target; exceeding the
    doubling cap raises NumericalError.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie strictly between 0 and 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    target = math.log(r)
    mu_hi = float(np.max(stats.means))
    sd_hi = float(np.max(stats.stds))
    lo = mu_hi - 5.0 * sd_hi
    hi = mu_hi + 5.0 * sd_hi

    width = hi - lo
    doublings = 0
    while log_cdf_max(stats, lo) > target:
        lo -= width
        width *= 2.0
        doublings += 1
        if doublings > MAX_BRACKET_DOUBLINGS:
            raise NumericalError("bracket expansion failed on the lower side")
    width = hi - lo
    doublings = 0
    while log_cdf_max(stats, hi) < target:
        hi += width
        width *= 2.0
        doublings += 1
        if doublings > MAX_BRACKET_DOUBLINGS:
            raise NumericalError("bracket expansion failed on the upper side")

    mid = 0.5 * (lo + hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        fm = log_cdf_max(stats, mid)
        if abs(fm - target) <= tol:
            return mid
        if mid <= lo or mid >= hi:  # bracket at float resolution
            return mid
        if fm < target:
            lo = mid
        else:
            hi = mid
    return mid


def fit_gumbel(stats: GridStats, tol: float) -> GumbelParams:
    """Quartile-match a Gumbel to the independent-max CDF (r1=0.25, r2=0.75)."""
    y1 = invert_cdf_max(stats, 0.25, tol)
    y2 = invert_cdf_max(stats, 0.75, tol)
    if y2 <= y1:
        raise NumericalError("degenerate max-value CDF: quartiles do not separate")
    c1 = -math.log(-math.log(0.25))
    c2 = -math.log(-math.log(0.75))
    b = (y2 - y1) / (c2 - c1)
    a = y1 - b * c1
    return GumbelParams(a, b)


def sample_max_gumbel(
    params: GumbelParams,
    rng: np.random.Generator,
    count: int,
    floor_at: float | None = None,
    component: int | None = None,
) -> MaxValueSamples:
    """Draw maxima through the Gumbel quantile function a - b log(-log r)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    r = rng.random(count)
    tiny = np.finfo(float).tiny
    r = np.clip(r, tiny, 1.0 - 1e-16)
    vals = params.a - params.b * np.log(-np.log(r))
    if floor_at is not None:
        vals = np.maximum(vals, floor_at)
    return MaxValueSamples(vals, "gumbel", component)


def build_feature_map(
    params: KernelParams,
    n_features: int,
    rng: np.random.Generator,
    dims: Sequence[int] | None = None,
    total_dim: int | None = None,
) -> FeatureMap:
    """Draw spectral frequencies and phases for the SE kernel.

    With dims given, params must be the restricted kernel of that group and
    total_dim the full input dimension; the returned frequencies are zero on
    inactive coordinates so features ignore them.
    """
    if n_features < 1:
        raise ValueError("n_features must be at least 1")
    if dims is None:
        d = params.dim if total_dim is None else total_dim
        if d != params.dim:
            raise ValueError("total_dim must equal the kernel dimension")
        omegas = rng.standard_normal((n_features, d)) / params.bandwidths
    else:
        dims = list(dims)
        if len(dims) != params.dim:
            raise ValueError("restricted params must match the group size")
        if total_dim is None:
            raise ValueError("total_dim is required together with dims")
        omegas = np.zeros((n_features, total_dim))
        omegas[:, dims] = rng.standard_normal((n_features, len(dims))) / params.bandwidths
    phases = rng.uniform(0.0, 2.0 * np.pi, n_features)
    return FeatureMap(omegas, phases, params.scale)


def feature_posterior(
    fmap: FeatureMap | Sequence[FeatureMap],
    data: ObservationSet,
    noise_var: float,
) -> FeaturePosterior:
    """Gaussian weight posterior nu, sigma of the feature-space linear model.

    sigma = (Z Z^T / noise_var + I)^-1 and nu = sigma Z y / noise_var with
    Z the (D, t) feature matrix. A sequence of maps is concatenated, which
    is how the additive variant shares one joint weight posterior.
    """
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    maps = [fmap] if isinstance(fmap, FeatureMap) else list(fmap)
    D = sum(m.n_features for m in maps)
    if data.size == 0:
        eye = np.eye(D)
        return FeaturePosterior(np.zeros(D), eye, eye.copy())
    Z = np.vstack([m.features(data.points).T for m in maps])
    A = Z @ Z.T / noise_var + np.eye(D)
    La = _jittered_cholesky(A, 1.0)
    from scipy.linalg import cho_solve

    sigma = cho_solve((La, True), np.eye(D))
    sigma = 0.5 * (sigma + sigma.T)
    nu = sigma @ (Z @ data.values) / noise_var
    chol = _jittered_cholesky(sigma, 1.0)
    return FeaturePosterior(nu, sigma, chol)


def sample_posterior_function(
    fp: FeaturePosterior, rng: np.random.Generator
) -> np.ndarray:
    """One weight vector drawn from N(nu, sigma)."""
    return fp.nu + fp.chol @ rng.standard_normal(fp.n_features)


def _maximize_cosine_sums(
    coeffs: np.ndarray,
    omegas: np.ndarray,
    phases: np.ndarray,
    domain: Domain,
    rng: np.random.Generator,
    restarts: int,
    steps: int,
    n_probes: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Maximize k functions f_j(x) = sum_i coeffs[j,i] cos(omega_i.x + c_i).

    Probe screening seeds `restarts` projected-gradient ascents per function,
    all ascents batched together. Returns (best values (k,), best points
    (k, d)); each value dominates every probe of its own function.
    """
    coeffs = np.atleast_2d(coeffs)
    k = coeffs.shape[0]
    d = domain.dim
    n_probes = max(256, 64 * restarts) if n_probes is None else n_probes

    P = rng.uniform(domain.lower, domain.upper, size=(n_probes, d))
    phase_mat = np.cos(P @ omegas.T + phases)  # (n_probes, D)
    probe_vals = phase_mat @ coeffs.T  # (n_probes, k)

    # Top `restarts` probes per function, flattened into one batch.
    order = np.argsort(probe_vals, axis=0)[::-1][:restarts]  # (restarts, k)
    X = P[order.T.ravel()].copy()  # (k*restarts, d)
    C = np.repeat(coeffs, restarts, axis=0)  # aligned coefficient rows
    best_probe_vals = probe_vals.max(axis=0)
    best_probe_pts = P[np.argmax(probe_vals, axis=0)]

    def value(Xb: np.ndarray) -> np.ndarray:
        return np.einsum("sf,sf->s", np.cos(Xb @ omegas.T + phases), C)

    fX = value(X)
    widths = domain.widths
    eta = np.full(X.shape[0], 0.25)
    min_eta = 1e-10
    for _ in range(steps):
        inner = X @ omegas.T + phases
        G = -(np.sin(inner) * C) @ omegas  # (S, d)
        norm = np.max(np.abs(G) / widths, axis=1)
        norm = np.where(norm > 0, norm, 1.0)
        cand = X + (eta / norm)[:, None] * G
        np.clip(cand, domain.lower, domain.upper, out=cand)
        fc = value(cand)
        better = fc > fX
        X[better] = cand[better]
        fX[better] = fc[better]
        eta = np.where(better, np.minimum(eta * 1.3, 1.0), eta * 0.5)
        if np.all(eta < min_eta):
            break

    fX = fX.reshape(k, restarts)
    Xr = X.reshape(k, restarts, d)
    idx = np.argmax(fX, axis=1)
    best_vals = fX[np.arange(k), idx]
    best_pts = Xr[np.arange(k), idx]
    worse = best_vals < best_probe_vals
    best_vals = np.where(worse, best_probe_vals, best_vals)
    best_pts[worse] = best_probe_pts[worse]
    return best_vals, best_pts


def sample_max_features(
    fp: FeaturePosterior,
    fmap: FeatureMap,
    domain: Domain,
    rng: np.random.Generator,
    count: int,
    restarts: int = 10,
    steps: int = 200,
    floor_at: float | None = None,
    component: int | None = None,
) -> MaxValueSamples:
    """Maximize `count` posterior function draws over the box.

    Each draw a ~ N(nu, sigma) defines f(x) = a . phi(x); the analytic
    gradient drives a batched multi-start ascent with box projection.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    draws = np.stack([sample_posterior_function(fp, rng) for _ in range(count)])
    coeffs = draws * fmap.amplitude
    vals, _ = _maximize_cosine_sums(
        coeffs, fmap.omegas, fmap.phases, domain, rng, restarts, steps
    )
    if floor_at is not None:
        vals = np.maximum(vals, floor_at)
    return MaxValueSamples(vals, "feature", component)


def sample_max_features_components(
    fp: FeaturePosterior,
    maps: Sequence[FeatureMap],
    partition,
    domain: Domain,
    rng: np.random.Generator,
    count: int,
    restarts: int = 10,
    steps: int = 200,
) -> list[MaxValueSamples]:
    """Per-component maxima from joint posterior draws.

    Weights are drawn once per sample from the joint posterior over all
    feature blocks; each component's block function is then maximized over
    its own sub-box.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    offsets = np.cumsum([0] + [m.n_features for m in maps])
    if offsets[-1] != fp.n_features:
        raise ValueError("feature maps do not match the posterior dimension")
    draws = np.stack([sample_posterior_function(fp, rng) for _ in range(count)])
    out = []
    for m, fmap in enumerate(maps):
        dims = list(partition.groups[m])
        block = slice(offsets[m], offsets[m + 1])
        coeffs = draws[:, block] * fmap.amplitude
        sub = domain.subbox(dims)
        vals, _ = _maximize_cosine_sums(
            coeffs,
            fmap.omegas[:, dims],
            fmap.phases,
            sub,
            rng,
            restarts,
            steps,
        )
        out.append(MaxValueSamples(vals, "feature", m))
    return out
