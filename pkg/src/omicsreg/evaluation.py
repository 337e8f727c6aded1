"""Evaluation metrics, repeated-CV model assessment, and the
supporting statistical analyses (correlations, VIF, effect sizes).

``r_squared`` is the usual coefficient of determination. ``rrmse`` is
implemented exactly as the source formula prints it: the mean squared
error divided by the *unaveraged* sum of squared predictions, under a
square root; a ``denominator`` flag exposes the conventional
mean-normalized alternative.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .regression import GridSpec, grid_search, svr_predict, svr_train
from .selection import (
    DEFAULT_N_NONZERO,
    DEFAULT_N_TOP,
    FoldPlan,
    rank_feature_indices,
)

__all__ = [
    "r_squared",
    "rrmse",
    "pearson_r",
    "feature_label_correlations",
    "vif",
    "cohens_d",
    "effect_size_bucket",
    "EffectSizeRow",
    "effect_size_table",
    "pairwise_correlation_heatmap",
    "confidence_interval",
    "format_ci",
    "format_mean_sd",
    "MetricSample",
    "PredictionRecord",
    "EvaluationReport",
    "repeated_cv_evaluate",
    "sweep_evaluate",
]

VIF_CAP = 1e12
_Z95 = 1.96


def _pair(y, y_hat, min_len):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} vs {y_hat.shape[0]}")
    if y.shape[0] < min_len:
        raise ValueError(f"need at least {min_len} values, got {y.shape[0]}")
    return y, y_hat


def r_squared(y, y_hat) -> float:
    """1 - sum((y - y_hat)^2) / sum((y - mean(y))^2)."""
    y, y_hat = _pair(y, y_hat, 2)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst <= 0:
        raise ValueError("r_squared undefined: y is constant")
    return 1.0 - float(((y - y_hat) ** 2).sum()) / sst


def rrmse(y, y_hat, denominator: str = "sum") -> float:
    """sqrt( mean((y - y_hat)^2) / sum(y_hat^2) ), as printed.

    ``denominator='mean'`` divides by mean(y_hat^2) instead (the
    conventional, dimensionless-per-sample variant).
    """
    if denominator not in ("sum", "mean"):
        raise ValueError(f"denominator must be 'sum' or 'mean', got {denominator!r}")
    y, y_hat = _pair(y, y_hat, 1)
    denom = float((y_hat**2).sum())
    if denominator == "mean":
        denom /= y.shape[0]
    if denom <= 0:
        raise ValueError("rrmse undefined: predictions are all zero")
    return math.sqrt(float(((y - y_hat) ** 2).mean()) / denom)


def pearson_r(a, b) -> float:
    a, b = _pair(a, b, 2)
    da, db = a - a.mean(), b - b.mean()
    na, nb = float(da @ da), float(db @ db)
    if na <= 0 or nb <= 0:
        raise ValueError("pearson_r undefined for constant input")
    return float(np.clip((da @ db) / math.sqrt(na * nb), -1.0, 1.0))


def feature_label_correlations(X_sel, y):
    """Per-feature Pearson correlation to the label, plus the mean and
    sd of the absolute correlations."""
    X = np.asarray(X_sel, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X_sel must be 2D with at least one column")
    r = np.array([pearson_r(X[:, j], y) for j in range(X.shape[1])])
    abs_r = np.abs(r)
    sd = float(abs_r.std(ddof=1)) if len(abs_r) > 1 else 0.0
    return r, float(abs_r.mean()), sd


def vif(X_sel) -> np.ndarray:
    """Variance inflation factor per feature: 1 / (1 - R^2_j) from the
    least-squares regression (with intercept) of feature j on the rest.
    Perfect collinearity is reported as a capped 1e12 sentinel."""
    X = np.asarray(X_sel, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("vif needs at least 2 features")
    n, p = X.shape
    if n <= p:
        raise ValueError(f"vif needs n_samples > n_features, got {n} <= {p}")
    out = np.empty(p)
    for j in range(p):
        target = X[:, j]
        design = np.column_stack([np.delete(X, j, axis=1), np.ones(n)])
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        sst = float(((target - target.mean()) ** 2).sum())
        if sst <= 0:
            warnings.warn(f"feature {j} is constant; VIF set to 1", stacklevel=2)
            out[j] = 1.0
            continue
        r2 = 1.0 - float((resid**2).sum()) / sst
        if r2 >= 1.0 - 1e-12:
            warnings.warn(
                f"feature {j} is perfectly collinear with the others; "
                f"VIF capped at {VIF_CAP:g}",
                stacklevel=2,
            )
            out[j] = VIF_CAP
        else:
            out[j] = 1.0 / (1.0 - r2)
    return out


def cohens_d(group_a, group_b) -> float:
    """(mean_a - mean_b) / pooled sample sd."""
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"both groups need >= 2 samples, got {len(a)} and {len(b)}")
    na, nb = len(a), len(b)
    pooled_var = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    if pooled_var <= 0:
        raise ValueError("cohens_d undefined: pooled sd is zero")
    return float((a.mean() - b.mean()) / math.sqrt(pooled_var))


EFFECT_SIZE_BUCKETS = ("<0.2", "0.2-0.5", "0.5-0.8", ">=0.8")


def effect_size_bucket(d: float) -> str:
    """Magnitude bucket with edges at 0.2 (small), 0.5 (medium),
    0.8 (large)."""
    a = abs(d)
    if a < 0.2:
        return "<0.2"
    if a < 0.5:
        return "0.2-0.5"
    if a < 0.8:
        return "0.5-0.8"
    return ">=0.8"


@dataclass(frozen=True)
class EffectSizeRow:
    name: object
    cohens_d: float
    bucket: str
    n_below: int
    n_above: int


def effect_size_table(X_sel, y, threshold: float, names=None):
    """Cohen's d per feature between the groups y < threshold and
    y >= threshold, plus the mean absolute d."""
    X = np.asarray(X_sel, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    below = y < threshold
    n_below, n_above = int(below.sum()), int((~below).sum())
    if n_below < 2 or n_above < 2:
        raise ValueError(
            f"degenerate split at threshold {threshold}: "
            f"{n_below} below vs {n_above} above"
        )
    rows = []
    for j in range(X.shape[1]):
        name = names[j] if names is not None else j
        d = cohens_d(X[below, j], X[~below, j])
        rows.append(
            EffectSizeRow(name, d, effect_size_bucket(d), n_below, n_above)
        )
    mean_abs = float(np.mean([abs(r.cohens_d) for r in rows]))
    return rows, mean_abs


def pairwise_correlation_heatmap(X_sel):
    """Symmetric correlation matrix with unit diagonal plus the mean
    and sd of absolute strictly-upper-triangle entries."""
    X = np.asarray(X_sel, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("heatmap needs at least 2 features")
    p = X.shape[1]
    m = np.eye(p)
    for i in range(p):
        for j in range(i + 1, p):
            m[i, j] = m[j, i] = pearson_r(X[:, i], X[:, j])
    upper = np.abs(m[np.triu_indices(p, k=1)])
    sd = float(upper.std(ddof=1)) if len(upper) > 1 else 0.0
    return m, float(upper.mean()), sd


# ---------------------------------------------------------------------------
# Aggregation helpers


def confidence_interval(values) -> tuple[float, float, float]:
    """Normal-approximation 95% CI: mean +/- 1.96 * sd / sqrt(n)."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    half = _Z95 * float(v.std(ddof=1)) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return mean, mean - half, mean + half


def format_ci(value: float, lo: float, hi: float) -> str:
    """Render like ``0.743 (0.710-0.775)``."""
    return f"{value:.3f} ({lo:.3f}-{hi:.3f})"


def format_mean_sd(mean: float, sd: float) -> str:
    """Render like ``0.150 ± 0.125``."""
    return f"{mean:.3f} ± {sd:.3f}"


@dataclass(frozen=True)
class MetricSample:
    repeat: int
    fold: int
    r2: float
    rrmse: float
    n_test: int

    def __post_init__(self):
        if self.r2 > 1.0 + 1e-12:
            raise ValueError(f"r2 cannot exceed 1, got {self.r2}")
        if self.rrmse < 0:
            raise ValueError(f"rrmse cannot be negative, got {self.rrmse}")
        if self.n_test < 1:
            raise ValueError("n_test must be >= 1")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    actual: float
    predicted: float
    repeat: int
    fold: int


@dataclass(frozen=True)
class EvaluationReport:
    scenario: str
    criterion: str
    kernel: str
    n_features: int
    samples: tuple[MetricSample, ...]
    mean_r2: float
    mean_rrmse: float
    ci95_r2: tuple[float, float]
    ci95_rrmse: tuple[float, float]
    predictions: tuple[PredictionRecord, ...] = field(repr=False)

    def __post_init__(self):
        if not (self.ci95_r2[0] <= self.mean_r2 <= self.ci95_r2[1]):
            raise ValueError("r2 CI does not bracket the mean")
        if not (self.ci95_rrmse[0] <= self.mean_rrmse <= self.ci95_rrmse[1]):
            raise ValueError("rrmse CI does not bracket the mean")

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "criterion": self.criterion,
            "kernel": self.kernel,
            "n_features": self.n_features,
            "mean_r2": self.mean_r2,
            "ci95_r2": list(self.ci95_r2),
            "mean_rrmse": self.mean_rrmse,
            "ci95_rrmse": list(self.ci95_rrmse),
            "r2_formatted": format_ci(self.mean_r2, *self.ci95_r2),
            "rrmse_formatted": format_ci(self.mean_rrmse, *self.ci95_rrmse),
            "samples": [
                {
                    "repeat": s.repeat,
                    "fold": s.fold,
                    "r2": s.r2,
                    "rrmse": s.rrmse,
                    "n_test": s.n_test,
                }
                for s in self.samples
            ],
            "predictions": [
                {
                    "sample_id": p.sample_id,
                    "actual": p.actual,
                    "predicted": p.predicted,
                    "repeat": p.repeat,
                    "fold": p.fold,
                }
                for p in self.predictions
            ],
        }


# ---------------------------------------------------------------------------
# Repeated cross-validation evaluation


def _cell_seeds(seed: int, repeat: int, fold: int) -> tuple[int, int]:
    ss = np.random.SeedSequence([abs(int(seed)), repeat, fold])
    sel, grid = ss.generate_state(2)
    return int(sel), int(grid)


def _ratio_guard(n_features_max: int, n_samples: int):
    limit = n_samples // 4
    if n_features_max > limit:
        warnings.warn(
            f"requesting {n_features_max} features with {n_samples} samples "
            f"exceeds the commonly recommended 1:4 feature-to-sample ratio "
            f"(limit {limit})",
            stacklevel=3,
        )


def sweep_evaluate(
    X,
    y,
    criterion: str,
    kernel: str,
    n_features_list,
    plan: FoldPlan,
    grid: GridSpec | None = None,
    sample_ids=None,
    scenario: str = "",
    rrmse_denominator: str = "sum",
    n_nonzero: int = DEFAULT_N_NONZERO,
    n_top: int = DEFAULT_N_TOP,
) -> list[EvaluationReport]:
    """Evaluate several feature counts sharing per-cell selection work.

    For every (repeat, fold) cell: rank features on the training rows
    only (nested fold plan derived from the outer seed), then per
    requested count truncate the ranking, grid-search hyperparameters
    by inner CV, train on the training rows, and score the held-out
    fold. Returns one report per feature count.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_features_list = [int(k) for k in n_features_list]
    if not n_features_list:
        raise ValueError("n_features_list is empty")
    bad = [k for k in n_features_list if k < 1 or k > n_top]
    if bad:
        raise ValueError(f"n_features must lie in 1..{n_top}, got {bad}")
    if sample_ids is None:
        sample_ids = [str(i) for i in range(X.shape[0])]
    _ratio_guard(max(n_features_list), X.shape[0])

    metrics: dict[int, list[MetricSample]] = {k: [] for k in n_features_list}
    predictions: dict[int, list[PredictionRecord]] = {k: [] for k in n_features_list}
    for repeat, fold, test, train in plan.iter_cells():
        sel_seed, grid_seed = _cell_seeds(plan.seed, repeat, fold)
        nested = FoldPlan(
            len(train),
            seed=sel_seed,
            n_folds=plan.n_folds,
            n_repeats=plan.n_repeats,
            groups=None if plan.groups is None else tuple(plan.groups[i] for i in train),
        )
        try:
            ranked, _ = rank_feature_indices(
                X[train], y[train], criterion, nested, n_nonzero, n_top
            )
        except ValueError as exc:
            raise NumericalError(
                f"feature selection failed in repeat {repeat} fold {fold}: {exc}"
            ) from exc
        order = [j for j, _ in ranked]
        for k in n_features_list:
            if len(order) < k:
                raise NumericalError(
                    f"repeat {repeat} fold {fold}: only {len(order)} features "
                    f"ranked, cannot evaluate n_features={k}"
                )
            sel = order[:k]
            try:
                hp = grid_search(X[train][:, sel], y[train], kernel, grid, seed=grid_seed)
                model = svr_train(X[train][:, sel], y[train], hp)
                pred = svr_predict(model, X[test][:, sel])
                sample = MetricSample(
                    repeat=repeat,
                    fold=fold,
                    r2=r_squared(y[test], pred),
                    rrmse=rrmse(y[test], pred, rrmse_denominator),
                    n_test=len(test),
                )
            except ValueError as exc:
                raise NumericalError(
                    f"repeat {repeat} fold {fold} (n_features={k}): {exc}"
                ) from exc
            metrics[k].append(sample)
            predictions[k].extend(
                PredictionRecord(sample_ids[t], float(y[t]), float(p), repeat, fold)
                for t, p in zip(test, pred)
            )

    reports = []
    for k in n_features_list:
        samples = metrics[k]
        mean_r2, r2_lo, r2_hi = confidence_interval([s.r2 for s in samples])
        mean_rr, rr_lo, rr_hi = confidence_interval([s.rrmse for s in samples])
        reports.append(
            EvaluationReport(
                scenario=scenario,
                criterion=criterion,
                kernel=kernel,
                n_features=k,
                samples=tuple(samples),
                mean_r2=mean_r2,
                mean_rrmse=mean_rr,
                ci95_r2=(r2_lo, r2_hi),
                ci95_rrmse=(rr_lo, rr_hi),
                predictions=tuple(predictions[k]),
            )
        )
    return reports


def repeated_cv_evaluate(
    X,
    y,
    criterion: str,
    kernel: str,
    n_features: int,
    plan: FoldPlan,
    grid: GridSpec | None = None,
    sample_ids=None,
    scenario: str = "",
    rrmse_denominator: str = "sum",
    n_nonzero: int = DEFAULT_N_NONZERO,
    n_top: int = DEFAULT_N_TOP,
) -> EvaluationReport:
    """Single-feature-count form of :func:`sweep_evaluate`."""
    return sweep_evaluate(
        X,
        y,
        criterion,
        kernel,
        [n_features],
        plan,
        grid,
        sample_ids,
        scenario,
        rrmse_denominator,
        n_nonzero,
        n_top,
    )[0]
