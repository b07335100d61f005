"""Gaussian-process regression with a squared-exponential ARD kernel.

Covers plain GP posteriors, additive-GP component posteriors over disjoint
dimension groups, marginal-likelihood hyperparameter fitting, and the random
search over additive decompositions. All posteriors cache a Cholesky factor
of (K + noise_var*I); prediction is a pure read on the cached factor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import NumericalError

# Diagonal regularization applied before factorization, relative to the
# kernel amplitude. The second value is the one-shot retry on failure.
JITTER_FACTORS = (1e-10, 1e-6)


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Squared-exponential ARD kernel hyperparameters plus observation noise.

    scale       kernel amplitude (signal variance, output units squared)
    bandwidths  per-dimension length scales, shape (d,), input units
    noise_var   observation noise variance (>= 0)
    """

    scale: float
    bandwidths: np.ndarray
    noise_var: float

    def __post_init__(self):
        bw = np.atleast_1d(np.asarray(self.bandwidths, dtype=float)).copy()
        bw.setflags(write=False)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "noise_var", float(self.noise_var))
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if bw.ndim != 1 or bw.size == 0 or not np.all(bw > 0):
            raise ValueError("bandwidths must be a nonempty vector of positive reals")
        if self.noise_var < 0:
            raise ValueError(f"noise_var must be nonnegative, got {self.noise_var}")

    @property
    def dim(self) -> int:
        return self.bandwidths.size

    def restrict(self, dims: Sequence[int]) -> "KernelParams":
        """Parameters of the same kernel restricted to a dimension subset."""
        return KernelParams(self.scale, self.bandwidths[list(dims)], self.noise_var)


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned box search space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("lower and upper must be 1-d vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("domain requires lower[i] < upper[i] for all i")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def subbox(self, dims: Sequence[int]) -> "Domain":
        idx = list(dims)
        return Domain(self.lower[idx], self.upper[idx])

    def contains(self, X: np.ndarray, atol: float = 1e-12) -> bool:
        X = np.atleast_2d(X)
        return bool(
            np.all(X >= self.lower - atol) and np.all(X <= self.upper + atol)
        )


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Queried inputs and their (possibly noisy) observed values."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float).copy()
        v = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        if P.ndim != 2:
            raise ValueError("points must be a (t, d) matrix")
        if P.shape[0] != v.size:
            raise ValueError("points row count must equal number of values")
        P.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "values", v)

    @classmethod
    def empty(cls, dim: int) -> "ObservationSet":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, x: np.ndarray, y: float) -> "ObservationSet":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return ObservationSet(
            np.vstack([self.points, x]), np.append(self.values, float(y))
        )


@dataclass(frozen=True)
class PointPrediction:
    """Posterior mean and standard deviation at a single input."""

    mean: float
    std: float


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint dimension groups of an additive decomposition.

    Groups are canonicalized (sorted within and across groups) so that two
    partitions over the same grouping compare equal.
    """

    groups: tuple

    def __post_init__(self):
        canon = tuple(sorted(tuple(sorted(int(i) for i in g)) for g in self.groups))
        object.__setattr__(self, "groups", canon)
        seen: set[int] = set()
        for grp in canon:
            if len(grp) == 0:
                raise ValueError("every group must be nonempty")
            for i in grp:
                if i < 0:
                    raise ValueError("dimension indices must be nonnegative")
                if i in seen:
                    raise ValueError(f"dimension {i} appears in more than one group")
                seen.add(i)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def dims_covered(self) -> int:
        return sum(len(g) for g in self.groups)

    def covers(self, dim: int) -> bool:
        flat = sorted(i for g in self.groups for i in g)
        return flat == list(range(dim))

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and self.groups == other.groups

    def __hash__(self) -> int:
        return hash(self.groups)


def se_kernel(x: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """Squared-exponential kernel value scale * exp(-0.5 * sum(((x-x2)/bw)^2))."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != x2.size or x.size != params.dim:
        raise ValueError(
            f"dimension mismatch: x has {x.size}, x2 has {x2.size}, "
            f"kernel expects {params.dim}"
        )
    z = (x - x2) / params.bandwidths
    return params.scale * math.exp(-0.5 * float(z @ z))


def se_kernel_matrix(X: np.ndarray, X2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix of the SE kernel, shape (n, m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != params.dim or X2.shape[1] != params.dim:
        raise ValueError("dimension mismatch between inputs and bandwidths")
    A = X / params.bandwidths
    B = X2 / params.bandwidths
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.clip(sq, 0.0, None, out=sq)
    return params.scale * np.exp(-0.5 * sq)


def _failing_pivot(K: np.ndarray) -> int:
    """1-based index of the first leading minor that is not positive definite."""
    for k in range(1, K.shape[0] + 1):
        try:
            np.linalg.cholesky(K[:k, :k])
        except np.linalg.LinAlgError:
            return k
    return K.shape[0]


def _jittered_cholesky(K: np.ndarray, scale: float) -> np.ndarray:
    """Lower Cholesky factor of K with relative diagonal jitter, one retry."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    eye = np.eye(n)
    last = K
    for factor in JITTER_FACTORS:
        last = K + (factor * scale) * eye
        try:
            return np.linalg.cholesky(last)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        "matrix not positive definite after jitter", pivot=_failing_pivot(last)
    )


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """Cached factorized GP posterior over an observation set.

    chol is the lower Cholesky factor of K + noise_var*I (with jitter);
    alpha solves (K + noise_var*I) alpha = y.
    """

    params: KernelParams
    data: ObservationSet
    chol: np.ndarray
    alpha: np.ndarray


def fit_posterior(data: ObservationSet, params: KernelParams) -> GpPosterior:
    """Factorize the regularized kernel matrix once for O(t)/O(t^2) predictions."""
    if data.size > 0 and data.dim != params.dim:
        raise ValueError("observation dimension does not match kernel bandwidths")
    if data.size == 0:
        return GpPosterior(params, data, np.zeros((0, 0)), np.zeros(0))
    K = se_kernel_matrix(data.points, data.points, params)
    K[np.diag_indices_from(K)] += params.noise_var
    L = _jittered_cholesky(K, params.scale)
    alpha = solve_triangular(
        L.T, solve_triangular(L, data.values, lower=True), lower=False
    )
    return GpPosterior(params, data, L, alpha)


def predict_batch(post: GpPosterior, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and standard deviations at the rows of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if post.data.size == 0:
        n = X.shape[0]
        return np.zeros(n), np.full(n, math.sqrt(post.params.scale))
    Kx = se_kernel_matrix(post.data.points, X, post.params)
    means = Kx.T @ post.alpha
    V = solve_triangular(post.chol, Kx, lower=True)
    var = post.params.scale - np.sum(V * V, axis=0)
    np.clip(var, 0.0, None, out=var)
    return means, np.sqrt(var)


def predict(post: GpPosterior, x: np.ndarray) -> PointPrediction:
    means, stds = predict_batch(post, np.asarray(x, dtype=float).reshape(1, -1))
    return PointPrediction(float(means[0]), float(stds[0]))


@dataclass(frozen=True, eq=False)
class AddGpPosterior:
    """Additive-GP posterior: summed-kernel factorization shared by components.

    component_params[m] holds the kernel of group m restricted to its own
    dimensions; noise_var is shared across components.
    """

    partition: Partition
    component_params: tuple
    noise_var: float
    data: ObservationSet
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def total_scale(self) -> float:
        return sum(p.scale for p in self.component_params)


def fit_add_posterior(
    data: ObservationSet,
    partition: Partition,
    component_params: Sequence[KernelParams],
    noise_var: float,
) -> AddGpPosterior:
    if not partition.covers(data.dim):
        raise ValueError("partition does not cover the observation dimensions")
    if len(component_params) != partition.n_groups:
        raise ValueError("one KernelParams required per partition group")
    for grp, p in zip(partition.groups, component_params):
        if p.dim != len(grp):
            raise ValueError("component bandwidths must match group size")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    comp = tuple(component_params)
    if data.size == 0:
        return AddGpPosterior(
            partition, comp, float(noise_var), data, np.zeros((0, 0)), np.zeros(0)
        )
    K = np.zeros((data.size, data.size))
    for grp, p in zip(partition.groups, comp):
        sub = data.points[:, list(grp)]
        K += se_kernel_matrix(sub, sub, p)
    K[np.diag_indices_from(K)] += noise_var
    total_scale = sum(p.scale for p in comp)
    L = _jittered_cholesky(K, total_scale)
    alpha = solve_triangular(
        L.T, solve_triangular(L, data.values, lower=True), lower=False
    )
    return AddGpPosterior(partition, comp, float(noise_var), data, L, alpha)


def predict_component_batch(
    post: AddGpPosterior, X: np.ndarray, m: int
) -> tuple[np.ndarray, np.ndarray]:
    """Component-m posterior means/stds; cross-covariances against the summed factor."""
    if not 0 <= m < post.partition.n_groups:
        raise ValueError(f"group index {m} out of range")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grp = list(post.partition.groups[m])
    p = post.component_params[m]
    if post.data.size == 0:
        n = X.shape[0]
        return np.zeros(n), np.full(n, math.sqrt(p.scale))
    Kx = se_kernel_matrix(post.data.points[:, grp], X[:, grp], p)
    means = Kx.T @ post.alpha
    V = solve_triangular(post.chol, Kx, lower=True)
    var = p.scale - np.sum(V * V, axis=0)
    np.clip(var, 0.0, None, out=var)
    return means, np.sqrt(var)


def predict_component(post: AddGpPosterior, x: np.ndarray, m: int) -> PointPrediction:
    means, stds = predict_component_batch(
        post, np.asarray(x, dtype=float).reshape(1, -1), m
    )
    return PointPrediction(float(means[0]), float(stds[0]))


def predict_add_batch(post: AddGpPosterior, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-model means/stds under the summed kernel."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if post.data.size == 0:
        n = X.shape[0]
        return np.zeros(n), np.full(n, math.sqrt(post.total_scale))
    Kx = np.zeros((post.data.size, X.shape[0]))
    for grp, p in zip(post.partition.groups, post.component_params):
        Kx += se_kernel_matrix(post.data.points[:, list(grp)], X[:, list(grp)], p)
    means = Kx.T @ post.alpha
    V = solve_triangular(post.chol, Kx, lower=True)
    var = post.total_scale - np.sum(V * V, axis=0)
    np.clip(var, 0.0, None, out=var)
    return means, np.sqrt(var)


def _lml_from_factorization(L: np.ndarray, alpha: np.ndarray, y: np.ndarray) -> float:
    t = y.size
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * t * math.log(2 * math.pi)
    )


def log_marginal_likelihood(data: ObservationSet, params: KernelParams) -> float:
    """log p(y | X, params) through the cached Cholesky factorization."""
    if data.size < 1:
        raise ValueError("log marginal likelihood requires at least one observation")
    post = fit_posterior(data, params)
    return _lml_from_factorization(post.chol, post.alpha, data.values)


def add_log_marginal_likelihood(
    data: ObservationSet,
    partition: Partition,
    component_params: Sequence[KernelParams],
    noise_var: float,
) -> float:
    """Marginal likelihood under a summed additive kernel."""
    if data.size < 1:
        raise ValueError("log marginal likelihood requires at least one observation")
    post = fit_add_posterior(data, partition, component_params, noise_var)
    return _lml_from_factorization(post.chol, post.alpha, data.values)


def _params_from_log(theta: np.ndarray, dim: int) -> KernelParams:
    vals = np.exp(theta)
    return KernelParams(vals[0], vals[1 : 1 + dim], vals[1 + dim])


def fit_hyperparameters(
    data: ObservationSet,
    init: KernelParams,
    budget: int = 240,
    n_starts: int = 8,
) -> KernelParams:
    """Maximize the marginal likelihood by multi-start coordinate descent.

    Optimization runs in log-parameter space so positivity is preserved.
    Deterministic given init and budget; never returns parameters with a
    lower likelihood than init. If every evaluation fails numerically the
    init is returned with a warning.
    """
    if data.size < 2:
        raise ValueError("hyperparameter fitting requires at least two observations")
    if budget < 1:
        raise ValueError("budget must be at least one evaluation")
    d = data.dim
    noise0 = max(init.noise_var, 1e-12 * init.scale)
    theta0 = np.log(np.concatenate([[init.scale], init.bandwidths, [noise0]]))

    state = {"evals": 0, "ok": 0}

    def score(theta: np.ndarray) -> float:
        state["evals"] += 1
        try:
            val = log_marginal_likelihood(data, _params_from_log(theta, d))
        except (NumericalError, FloatingPointError, OverflowError):
            return -np.inf
        if not np.isfinite(val):
            return -np.inf
        state["ok"] += 1
        return val

    base_val = score(theta0)
    best_theta, best_val = theta0, base_val

    # Fixed internal seed keeps the start perturbations deterministic.
    start_rng = np.random.default_rng(0)
    starts = [theta0] + [
        theta0 + start_rng.uniform(-1.5, 1.5, size=theta0.size)
        for _ in range(max(0, n_starts - 1))
    ]
    per_start = max(4, budget // max(1, len(starts)))

    for s in starts:
        if state["evals"] >= budget:
            break
        theta = s.copy()
        val = score(theta) if not np.array_equal(s, theta0) else base_val
        step = 0.5
        allowance = min(per_start, budget - state["evals"])
        used = 0
        while step > 1e-3 and used < allowance:
            improved = False
            for i in range(theta.size):
                for delta in (step, -step):
                    if used >= allowance:
                        break
                    cand = theta.copy()
                    cand[i] += delta
                    cval = score(cand)
                    used += 1
                    if cval > val:
                        theta, val = cand, cval
                        improved = True
                        break
            if not improved:
                step *= 0.5
        if val > best_val:
            best_theta, best_val = theta, val

    if state["ok"] == 0:
        warnings.warn(
            "all marginal-likelihood evaluations failed; returning init unchanged",
            RuntimeWarning,
        )
        return init
    if not np.isfinite(base_val) or best_val > base_val:
        return _params_from_log(best_theta, d)
    return init


def _random_partition(dim: int, max_group_size: int, rng: np.random.Generator) -> Partition:
    perm = rng.permutation(dim)
    groups = [
        tuple(int(i) for i in perm[k : k + max_group_size])
        for k in range(0, dim, max_group_size)
    ]
    return Partition(tuple(groups))


def learn_decomposition(
    data: ObservationSet,
    base_params: KernelParams,
    n_candidates: int = 10000,
    max_group_size: int = 2,
    rng: np.random.Generator | None = None,
) -> tuple[Partition, tuple]:
    """Pick the best-likelihood partition among random decompositions.

    Candidates are drawn by shuffling the dimensions and chunking them into
    groups of max_group_size (trailing group smaller when the dimension is
    not divisible). Each candidate is scored by the marginal likelihood of
    the summed kernel built from base_params restricted to each group; the
    argmax candidate is returned together with its per-group parameters.
    Deterministic given the generator state.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be at least 1")
    if max_group_size < 1:
        raise ValueError("max_group_size must be at least 1")
    if data.size < 2:
        raise ValueError("decomposition search requires at least two observations")
    if base_params.dim != data.dim:
        raise ValueError("base_params dimension must match the data")
    rng = np.random.default_rng() if rng is None else rng

    d = data.dim
    if d == 1:
        part = Partition(((0,),))
        return part, (base_params.restrict((0,)),)

    # Group kernel matrices are shared across candidates; cache them.
    gram_cache: dict[tuple, np.ndarray] = {}

    def group_gram(grp: tuple) -> np.ndarray:
        G = gram_cache.get(grp)
        if G is None:
            sub = data.points[:, list(grp)]
            G = se_kernel_matrix(sub, sub, base_params.restrict(grp))
            gram_cache[grp] = G
        return G

    seen: set[tuple] = set()
    best: tuple[float, Partition] | None = None
    eye_noise = base_params.noise_var * np.eye(data.size)
    for _ in range(n_candidates):
        part = _random_partition(d, max_group_size, rng)
        if part.groups in seen:
            continue
        seen.add(part.groups)
        K = sum(group_gram(g) for g in part.groups) + eye_noise
        total_scale = base_params.scale * part.n_groups
        try:
            L = _jittered_cholesky(K, total_scale)
        except NumericalError:
            continue
        alpha = solve_triangular(
            L.T, solve_triangular(L, data.values, lower=True), lower=False
        )
        lml = _lml_from_factorization(L, alpha, data.values)
        if best is None or lml > best[0]:
            best = (lml, part)
    if best is None:
        raise NumericalError("every candidate decomposition failed to factorize")
    part = best[1]
    return part, tuple(base_params.restrict(g) for g in part.groups)
