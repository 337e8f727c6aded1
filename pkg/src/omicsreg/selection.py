"""Feature selection: variance filtering, correlation pruning, and
Lasso-based ranking inside repeated cross-validation.

The Lasso solves ``(1/2n)*||y - X b||^2 + lambda*||b||_1`` by cyclic
coordinate descent with soft-thresholding on a precomputed Gram matrix.
``lasso_k_nonzero`` tunes lambda by bisection until the fit has exactly
``k`` nonzero coefficients. ``select_features`` runs that fit on every
(repeat, fold) training split and ranks features either by mean
absolute coefficient (``X_abs``) or by selection frequency (``X_cnt``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .features import FeatureMatrix, FeatureName

__all__ = [
    "CRITERIA",
    "FoldPlan",
    "LassoFit",
    "SelectionResult",
    "IterationRecord",
    "standardize_columns",
    "variance_filter",
    "correlation_prune",
    "lasso_fit",
    "lasso_objective",
    "lasso_kkt_residual",
    "lasso_k_nonzero",
    "select_features",
]

CRITERIA = ("X_abs", "X_cnt")

DEFAULT_N_NONZERO = 20
DEFAULT_N_TOP = 15

_CD_TOL = 1e-7
_CD_MAX_SWEEPS = 10_000
_BISECT_MAX_ITER = 60
_BISECT_REL_TOL = 1e-6


# ---------------------------------------------------------------------------
# Cross-validation fold plan


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic partition of samples into folds, repeated.

    A pure function of ``(n_samples, seed)``: per repeat the samples are
    permuted and split into ``n_folds`` contiguous slices whose sizes
    differ by at most one (larger folds first).

    With ``groups`` (one label per sample, e.g. patient ids) whole
    groups are dealt to folds instead, keeping same-group samples in the
    same fold; fold sizes then balance only approximately.
    """

    n_samples: int
    seed: int
    n_folds: int = 5
    n_repeats: int = 10
    groups: tuple | None = None
    assignments: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError(f"n_folds must be >= 2, got {self.n_folds}")
        if self.n_repeats < 1:
            raise ValueError(f"n_repeats must be >= 1, got {self.n_repeats}")
        if self.n_samples < self.n_folds:
            raise ValueError(
                f"need at least {self.n_folds} samples, got {self.n_samples}"
            )
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))
            if len(self.groups) != self.n_samples:
                raise ValueError(
                    f"groups has {len(self.groups)} labels for {self.n_samples} samples"
                )
            repeats = self._grouped_assignments()
        else:
            repeats = self._plain_assignments()
        object.__setattr__(self, "assignments", tuple(repeats))

    def _plain_assignments(self):
        rng = np.random.default_rng(self.seed)
        base, extra = divmod(self.n_samples, self.n_folds)
        sizes = [base + 1] * extra + [base] * (self.n_folds - extra)
        repeats = []
        for _ in range(self.n_repeats):
            perm = rng.permutation(self.n_samples)
            folds, start = [], 0
            for size in sizes:
                fold = np.sort(perm[start : start + size])
                fold.setflags(write=False)
                folds.append(fold)
                start += size
            repeats.append(tuple(folds))
        return repeats

    def _grouped_assignments(self):
        labels = list(dict.fromkeys(self.groups))  # first-appearance order
        if len(labels) < self.n_folds:
            raise ValueError(
                f"grouped folds need at least {self.n_folds} distinct groups, "
                f"got {len(labels)}"
            )
        members = {g: [] for g in labels}
        for idx, g in enumerate(self.groups):
            members[g].append(idx)
        rng = np.random.default_rng(self.seed)
        repeats = []
        for _ in range(self.n_repeats):
            order = rng.permutation(len(labels))
            fold_members = [[] for _ in range(self.n_folds)]
            for gi in order:
                # smallest fold by sample count, lowest index on ties
                target = min(range(self.n_folds), key=lambda f: (len(fold_members[f]), f))
                fold_members[target].extend(members[labels[gi]])
            folds = []
            for idx_list in fold_members:
                fold = np.sort(np.asarray(idx_list, dtype=np.int64))
                fold.setflags(write=False)
                folds.append(fold)
            repeats.append(tuple(folds))
        return repeats

    @property
    def n_cells(self) -> int:
        return self.n_repeats * self.n_folds

    def fold_sizes(self) -> tuple[int, ...]:
        return tuple(len(f) for f in self.assignments[0])

    def iter_cells(self):
        """Yield ``(repeat, fold, test_idx, train_idx)`` in fixed order."""
        everything = np.arange(self.n_samples)
        for r, folds in enumerate(self.assignments):
            for f, test_idx in enumerate(folds):
                train_idx = np.setdiff1d(everything, test_idx, assume_unique=True)
                yield r, f, test_idx, train_idx


# ---------------------------------------------------------------------------
# Column screening


def _values(X) -> np.ndarray:
    arr = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite values")
    return arr


def variance_filter(X, threshold: float = 0.001) -> np.ndarray:
    """Indices of columns whose min-max-normalized population variance
    is at least ``threshold``."""
    V = _values(X)
    lo = V.min(axis=0)
    span = V.max(axis=0) - lo
    var = np.zeros(V.shape[1])
    ok = span > 0
    if ok.any():
        normalized = (V[:, ok] - lo[ok]) / span[ok]
        var[ok] = normalized.var(axis=0)
    return np.flatnonzero(var >= threshold)


def correlation_prune(X, threshold: float = 0.95) -> np.ndarray:
    """Left-to-right scan dropping any column whose absolute Pearson
    correlation with an already-retained column exceeds ``threshold``.

    Zero-variance columns correlate 0 with everything (retained, with a
    warning); they should have been removed by the variance filter.
    """
    V = _values(X)
    n, p = V.shape
    sd = V.std(axis=0)
    zero_var = np.flatnonzero(sd == 0)
    if zero_var.size:
        warnings.warn(
            f"{zero_var.size} zero-variance column(s) reached correlation_prune "
            f"(first indices {zero_var[:5].tolist()}); treated as correlation 0",
            stacklevel=2,
        )
    safe_sd = np.where(sd > 0, sd, 1.0)
    Z = (V - V.mean(axis=0)) / safe_sd
    Z[:, sd == 0] = 0.0
    kept: list[int] = []
    buf = np.empty((p, n))
    for j in range(p):
        if kept:
            r = buf[: len(kept)] @ Z[:, j] / n
            if np.abs(r).max() > threshold:
                continue
        buf[len(kept)] = Z[:, j]
        kept.append(j)
    return np.asarray(kept, dtype=np.int64)


def standardize_columns(X: np.ndarray):
    """Center and scale columns to zero mean, unit population sd
    (zero-variance columns are left centered, scale 1)."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mean) / sd, mean, sd


# ---------------------------------------------------------------------------
# Lasso by cyclic coordinate descent


@njit(cache=True)
def _cd_full_sweep(Q, q, lam, beta, g):  # pragma: no cover
    p = beta.shape[0]
    delta_max = 0.0
    for j in range(p):
        d = Q[j, j]
        if d <= 0.0:
            continue
        rho = g[j] + d * beta[j]
        if rho > lam:
            new = (rho - lam) / d
        elif rho < -lam:
            new = (rho + lam) / d
        else:
            new = 0.0
        diff = new - beta[j]
        if diff != 0.0:
            g -= Q[:, j] * diff
            beta[j] = new
            ad = abs(diff)
            if ad > delta_max:
                delta_max = ad
    return delta_max


@njit(cache=True)
def _cd_active_sweep(Q, q, lam, beta, g):  # pragma: no cover
    p = beta.shape[0]
    delta_max = 0.0
    for j in range(p):
        if beta[j] == 0.0:
            continue
        d = Q[j, j]
        if d <= 0.0:
            continue
        rho = g[j] + d * beta[j]
        if rho > lam:
            new = (rho - lam) / d
        elif rho < -lam:
            new = (rho + lam) / d
        else:
            new = 0.0
        diff = new - beta[j]
        if diff != 0.0:
            g -= Q[:, j] * diff
            beta[j] = new
            ad = abs(diff)
            if ad > delta_max:
                delta_max = ad
    return delta_max


@njit(cache=True)
def _cd_solve(Q, q, lam, beta, max_sweeps, tol):  # pragma: no cover
    g = q - Q @ beta
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _cd_full_sweep(Q, q, lam, beta, g)
        sweeps += 1
        if delta < tol:
            break
        while sweeps < max_sweeps:
            delta = _cd_active_sweep(Q, q, lam, beta, g)
            sweeps += 1
            if delta < tol:
                break
    return sweeps


def lasso_objective(X, y, beta, lam: float) -> float:
    r = y - X @ beta
    n = y.shape[0]
    return float(0.5 * (r @ r) / n + lam * np.abs(beta).sum())


def lasso_kkt_residual(X, y, beta, lam: float) -> float:
    """Largest violation of the subgradient stationarity conditions."""
    n = y.shape[0]
    g = X.T @ (y - X @ beta) / n
    zero = beta == 0
    res = 0.0
    if zero.any():
        res = max(res, float(np.maximum(np.abs(g[zero]) - lam, 0.0).max()))
    if (~zero).any():
        res = max(res, float(np.abs(g[~zero] - lam * np.sign(beta[~zero])).max()))
    return res


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    intercept: float
    lambda_: float
    n_nonzero: int
    n_sweeps: int
    truncated: bool = False
    objective_trace: tuple[float, ...] | None = None


class _LassoProblem:
    """Caches the Gram products so repeated fits along a lambda path are
    cheap; coefficients warm-start between fits."""

    def __init__(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"incompatible shapes X{X.shape}, y{y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("lasso inputs must be finite")
        self.X = X
        self.y = y
        self.n, self.p = X.shape
        self.Q = np.ascontiguousarray(X.T @ X / self.n)
        self.q = np.ascontiguousarray(X.T @ y / self.n)
        self.lam_max = float(np.abs(self.q).max()) if self.p else 0.0

    def solve(self, lam, beta0=None, max_sweeps=_CD_MAX_SWEEPS, tol=_CD_TOL):
        beta = np.zeros(self.p) if beta0 is None else beta0.copy()
        sweeps = _cd_solve(self.Q, self.q, float(lam), beta, max_sweeps, tol)
        return beta, int(sweeps)

    def solve_traced(self, lam, max_sweeps=_CD_MAX_SWEEPS, tol=_CD_TOL):
        # plain cyclic sweeps, recording the objective after each one
        beta = np.zeros(self.p)
        g = self.q - self.Q @ beta
        trace = [lasso_objective(self.X, self.y, beta, lam)]
        sweeps = 0
        for _ in range(max_sweeps):
            delta = _cd_full_sweep(self.Q, self.q, float(lam), beta, g)
            sweeps += 1
            trace.append(lasso_objective(self.X, self.y, beta, lam))
            if delta < tol:
                break
        return beta, sweeps, trace

    def make_fit(self, beta, lam, sweeps, truncated=False, trace=None) -> LassoFit:
        intercept = float(self.y.mean() - self.X.mean(axis=0) @ beta)
        coef = beta.copy()
        coef.setflags(write=False)
        return LassoFit(
            coefficients=coef,
            intercept=intercept,
            lambda_=float(lam),
            n_nonzero=int(np.count_nonzero(beta)),
            n_sweeps=sweeps,
            truncated=truncated,
            objective_trace=tuple(trace) if trace is not None else None,
        )


def lasso_fit(X, y, lambda_: float, *, record_objective: bool = False) -> LassoFit:
    """Cyclic coordinate descent with soft-thresholding.

    Expects column-standardized ``X`` and centered ``y`` (not enforced;
    the optimizer itself is general). Converges when the largest
    coefficient change in a sweep drops below 1e-7, capped at 1e4
    sweeps. With ``record_objective`` the per-sweep objective values are
    kept (plain cyclic sweeps, no active-set shortcut).
    """
    if lambda_ < 0:
        raise ValueError(f"lambda must be >= 0, got {lambda_}")
    prob = _LassoProblem(X, y)
    if record_objective:
        beta, sweeps, trace = prob.solve_traced(lambda_)
        return prob.make_fit(beta, lambda_, sweeps, trace=trace)
    beta, sweeps = prob.solve(lambda_)
    return prob.make_fit(beta, lambda_, sweeps)


def _truncate_to_k(beta: np.ndarray, k: int) -> np.ndarray:
    nz = np.flatnonzero(beta)
    order = sorted(nz, key=lambda j: (-abs(beta[j]), j))
    out = np.zeros_like(beta)
    for j in order[:k]:
        out[j] = beta[j]
    return out


def lasso_k_nonzero(X, y, k: int) -> LassoFit:
    """Bisection on lambda until the fit has exactly ``k`` nonzeros.

    If the nonzero count jumps past ``k`` between adjacent lambdas, the
    densest bracketing fit (>= k nonzeros) is truncated to its ``k``
    largest-magnitude coefficients and flagged ``truncated``.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    prob = _LassoProblem(X, y)
    if k > prob.p:
        raise ValueError(f"k={k} exceeds the {prob.p} available columns")
    lam_hi = prob.lam_max
    if lam_hi == 0.0:
        raise ValueError("all columns are orthogonal to y (lambda_max is 0)")

    # walk down from lambda_max until at least k coefficients are active
    lam_lo = lam_hi / 2
    beta_lo, sweeps = prob.solve(lam_lo)
    total_sweeps = sweeps
    while np.count_nonzero(beta_lo) < k:
        if lam_lo < lam_hi * 1e-12:
            raise ValueError(
                f"cannot activate {k} coefficients even at lambda ~ 0 "
                f"(reached {np.count_nonzero(beta_lo)})"
            )
        lam_hi = lam_lo
        lam_lo /= 2
        beta_lo, sweeps = prob.solve(lam_lo, beta_lo)
        total_sweeps += sweeps
    if np.count_nonzero(beta_lo) == k:
        return prob.make_fit(beta_lo, lam_lo, total_sweeps)

    for _ in range(_BISECT_MAX_ITER):
        if (lam_hi - lam_lo) / lam_hi < _BISECT_REL_TOL:
            break
        mid = 0.5 * (lam_hi + lam_lo)
        beta_mid, sweeps = prob.solve(mid, beta_lo)
        total_sweeps += sweeps
        nnz = np.count_nonzero(beta_mid)
        if nnz == k:
            return prob.make_fit(beta_mid, mid, total_sweeps)
        if nnz > k:
            lam_lo, beta_lo = mid, beta_mid
        else:
            lam_hi = mid

    truncated = _truncate_to_k(beta_lo, k)
    return prob.make_fit(truncated, lam_lo, total_sweeps, truncated=True)


# ---------------------------------------------------------------------------
# Criterion-based ranking across repeated CV


@dataclass(frozen=True)
class IterationRecord:
    repeat: int
    fold: int
    retained: tuple  # ((FeatureName | int, abs_coef), ...)


@dataclass(frozen=True)
class SelectionResult:
    criterion: str
    ranked: tuple  # ((FeatureName | int, score), ...)
    iterations: tuple[IterationRecord, ...]

    def ranked_names(self):
        return tuple(name for name, _ in self.ranked)

    def to_json_dict(self) -> dict:
        def name_str(n):
            return n.label if isinstance(n, FeatureName) else str(n)

        return {
            "criterion": self.criterion,
            "ranked": [
                {"name": name_str(n), "score": float(s)} for n, s in self.ranked
            ],
            "iterations": [
                {
                    "repeat": rec.repeat,
                    "fold": rec.fold,
                    "retained": [
                        {"name": name_str(n), "abs_coef": float(c)}
                        for n, c in rec.retained
                    ],
                }
                for rec in self.iterations
            ],
        }


def rank_feature_indices(
    X: np.ndarray,
    y: np.ndarray,
    criterion: str,
    plan: FoldPlan,
    n_nonzero: int = DEFAULT_N_NONZERO,
    n_top: int = DEFAULT_N_TOP,
):
    """Index-level core of :func:`select_features`.

    Returns ``(ranked, iterations)`` where ``ranked`` is a list of
    ``(column_index, score)`` sorted best-first and ``iterations`` holds
    the per-cell retained ``(column_index, abs_coef)`` pairs.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    X = _values(X)
    y = np.asarray(y, dtype=np.float64)
    p = X.shape[1]
    if p < n_nonzero:
        raise ValueError(
            f"selection needs at least {n_nonzero} surviving columns, have {p}"
        )
    if plan.n_samples != X.shape[0]:
        raise ValueError(
            f"plan covers {plan.n_samples} samples but X has {X.shape[0]} rows"
        )

    abs_sums = np.zeros(p)
    counts = np.zeros(p, dtype=np.int64)
    iterations = []
    for repeat, fold, _test, train in plan.iter_cells():
        Xs, _, _ = standardize_columns(X[train])
        yc = y[train] - y[train].mean()
        fit = lasso_k_nonzero(Xs, yc, n_nonzero)
        beta = fit.coefficients
        nz = np.flatnonzero(beta)
        top = sorted(nz, key=lambda j: (-abs(beta[j]), j))[:n_top]
        retained = tuple((int(j), float(abs(beta[j]))) for j in top)
        iterations.append((repeat, fold, retained))
        for j, coef in retained:
            abs_sums[j] += coef
            counts[j] += 1

    n_cells = plan.n_cells
    if criterion == "X_abs":
        scores = abs_sums / n_cells
        seen = np.flatnonzero(scores > 0)
        order = sorted(seen, key=lambda j: (-scores[j], j))
    else:
        scores = counts.astype(np.float64)
        seen = np.flatnonzero(counts > 0)
        order = sorted(seen, key=lambda j: (-counts[j], -abs_sums[j], j))
    ranked = [(int(j), float(scores[j])) for j in order[:n_top]]
    return ranked, iterations


def select_features(
    X,
    y,
    criterion: str,
    plan: FoldPlan,
    names: Sequence[FeatureName] | None = None,
    n_nonzero: int = DEFAULT_N_NONZERO,
    n_top: int = DEFAULT_N_TOP,
) -> SelectionResult:
    """Rank features by repeated-CV Lasso under ``X_abs`` or ``X_cnt``.

    For every (repeat, fold) cell the training rows are standardized, a
    ``k = n_nonzero`` Lasso is fit, and the ``n_top`` largest-magnitude
    coefficients are recorded. ``X_abs`` scores sum recorded magnitudes
    over all cells divided by the cell count (absences contribute 0);
    ``X_cnt`` counts retention, with ties broken by the X_abs score and
    then catalogue order.
    """
    if isinstance(X, FeatureMatrix):
        if names is None:
            names = X.names
        X = X.values
    ranked_idx, iter_idx = rank_feature_indices(X, y, criterion, plan, n_nonzero, n_top)

    def resolve(j):
        return names[j] if names is not None else j

    ranked = tuple((resolve(j), s) for j, s in ranked_idx)
    iterations = tuple(
        IterationRecord(r, f, tuple((resolve(j), c) for j, c in retained))
        for r, f, retained in iter_idx
    )
    return SelectionResult(criterion=criterion, ranked=ranked, iterations=iterations)
