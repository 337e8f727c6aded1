"""Epsilon-insensitive support vector regression in the dual.

The trainer solves

    max  -0.5*(a - a*)' K (a - a*) - eps*sum(a + a*) + y'(a - a*)
    s.t. sum(a - a*) = 0,  0 <= a, a* <= C

with a two-coefficient working-set method (maximal violating pair).
Each step moves the most-violating pair along the equality-preserving
direction, clipped to the box, until the KKT violation m - M drops
below tolerance. The bias is averaged over free support vectors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
import numpy as np
from numba import njit

__all__ = [
    "KERNEL_KINDS",
    "KernelSpec",
    "SVRHyperparams",
    "SVRModel",
    "GridSpec",
    "kernel_eval",
    "gram_matrix",
    "svr_train",
    "svr_predict",
    "default_grid",
    "grid_points",
    "grid_search",
]

KERNEL_KINDS = ("linear", "rbf", "polynomial", "sigmoid")

_SMO_TOL = 1e-3
_SMO_MAX_ITER = 100_000


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind plus exactly the parameters that kind uses:
    gamma for rbf/polynomial/sigmoid, degree for polynomial, coef0 for
    polynomial/sigmoid."""

    kind: str
    gamma: float | None = None
    degree: int | None = None
    coef0: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        needs_gamma = self.kind in ("rbf", "polynomial", "sigmoid")
        needs_degree = self.kind == "polynomial"
        needs_coef0 = self.kind in ("polynomial", "sigmoid")
        if needs_gamma:
            if self.gamma is None or not self.gamma > 0:
                raise ValueError(f"{self.kind} kernel needs gamma > 0, got {self.gamma}")
        elif self.gamma is not None:
            raise ValueError(f"{self.kind} kernel takes no gamma")
        if needs_degree:
            if self.degree is None or self.degree < 1:
                raise ValueError(f"polynomial kernel needs degree >= 1, got {self.degree}")
        elif self.degree is not None:
            raise ValueError(f"{self.kind} kernel takes no degree")
        if needs_coef0:
            if self.coef0 is None:
                raise ValueError(f"{self.kind} kernel needs coef0")
        elif self.coef0 is not None:
            raise ValueError(f"{self.kind} kernel takes no coef0")


@dataclass(frozen=True)
class SVRHyperparams:
    C: float
    epsilon: float
    kernel: KernelSpec

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


def kernel_eval(spec: KernelSpec, u, v) -> float:
    """Kernel value for a single vector pair."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(gram_matrix(spec, u[None, :], v[None, :])[0, 0])


def gram_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == "linear":
        return A @ B.T
    if spec.kind == "rbf":
        sq = (
            (A * A).sum(axis=1)[:, None]
            + (B * B).sum(axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-spec.gamma * np.clip(sq, 0.0, None))
    if spec.kind == "polynomial":
        return (spec.gamma * (A @ B.T) + spec.coef0) ** spec.degree
    if spec.kind == "sigmoid":
        return np.tanh(spec.gamma * (A @ B.T) + spec.coef0)
    raise ValueError(f"unknown kernel kind {spec.kind!r}")  # pragma: no cover


@njit(cache=True)
def _smo_solve(K, y, C, eps, tol, max_iter, alpha, alpha_star, F):  # pragma: no cover
    n = y.shape[0]
    it = 0
    gap = np.inf
    while it < max_iter:
        # maximal violating pair over the 2n stacked variables.
        # candidate values are -y_t*grad_t: alpha side -F-eps, star side -F+eps
        m_val = -np.inf
        m_idx = -1
        m_star = False
        big_val = np.inf
        big_idx = -1
        big_star = False
        for i in range(n):
            va = -F[i] - eps
            vs = -F[i] + eps
            if alpha[i] < C and va > m_val:
                m_val = va
                m_idx = i
                m_star = False
            if alpha_star[i] > 0.0 and vs > m_val:
                m_val = vs
                m_idx = i
                m_star = True
            if alpha[i] > 0.0 and va < big_val:
                big_val = va
                big_idx = i
                big_star = False
            if alpha_star[i] < C and vs < big_val:
                big_val = vs
                big_idx = i
                big_star = True
        gap = m_val - big_val
        if gap < tol or m_idx < 0 or big_idx < 0:
            break
        a, b = m_idx, big_idx
        eta = K[a, a] + K[b, b] - 2.0 * K[a, b]
        if eta <= 1e-12:
            eta = 1e-12
        t = gap / eta
        room_u = (C - alpha[a]) if not m_star else alpha_star[a]
        room_v = alpha[b] if not big_star else (C - alpha_star[b])
        if t > room_u:
            t = room_u
        if t > room_v:
            t = room_v
        if t <= 0.0:
            break
        if not m_star:
            alpha[a] += t
            if alpha[a] > C:
                alpha[a] = C
        else:
            alpha_star[a] -= t
            if alpha_star[a] < 0.0:
                alpha_star[a] = 0.0
        if not big_star:
            alpha[b] -= t
            if alpha[b] < 0.0:
                alpha[b] = 0.0
        else:
            alpha_star[b] += t
            if alpha_star[b] > C:
                alpha_star[b] = C
        # beta_a += t, beta_b -= t
        for i in range(n):
            F[i] += t * (K[i, a] - K[i, b])
        it += 1
    return it, gap


@dataclass(frozen=True)
class SVRDiagnostics:
    iterations: int
    kkt_gap: float
    dual_objective: float
    primal_objective: float
    alpha: np.ndarray
    alpha_star: np.ndarray

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective


@dataclass(frozen=True)
class SVRModel:
    """Trained model: scaled support vectors, dual coefficients
    (alpha - alpha*), bias, hyperparameters, and the feature scaler fit
    on the training inputs."""

    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    hyperparams: SVRHyperparams
    scaler_mean: np.ndarray
    scaler_sd: np.ndarray
    diagnostics: SVRDiagnostics | None = field(default=None, compare=False, repr=False)

    @property
    def n_support(self) -> int:
        return len(self.dual_coefs)

    def to_json_dict(self) -> dict:
        hp = self.hyperparams
        k = hp.kernel
        return {
            "hyperparams": {
                "C": hp.C,
                "epsilon": hp.epsilon,
                "kernel": {
                    "kind": k.kind,
                    "gamma": k.gamma,
                    "degree": k.degree,
                    "coef0": k.coef0,
                },
            },
            "scaler": {
                "mean": self.scaler_mean.tolist(),
                "sd": self.scaler_sd.tolist(),
            },
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
            "bias": self.bias,
        }

    @classmethod
    def from_json_dict(cls, blob: dict) -> "SVRModel":
        hp = blob["hyperparams"]
        kernel = KernelSpec(
            hp["kernel"]["kind"],
            gamma=hp["kernel"]["gamma"],
            degree=hp["kernel"]["degree"],
            coef0=hp["kernel"]["coef0"],
        )
        d = len(blob["scaler"]["mean"])
        sv = np.asarray(blob["support_vectors"], dtype=np.float64).reshape(-1, d)
        return cls(
            support_vectors=sv,
            dual_coefs=np.asarray(blob["dual_coefs"], dtype=np.float64),
            bias=float(blob["bias"]),
            hyperparams=SVRHyperparams(hp["C"], hp["epsilon"], kernel),
            scaler_mean=np.asarray(blob["scaler"]["mean"], dtype=np.float64),
            scaler_sd=np.asarray(blob["scaler"]["sd"], dtype=np.float64),
        )


def _bias_and_objectives(K, y, hp, alpha, alpha_star, F):
    beta = alpha - alpha_star
    free_a = (alpha > 0) & (alpha < hp.C)
    free_s = (alpha_star > 0) & (alpha_star < hp.C)
    candidates = np.concatenate(
        [(-F - hp.epsilon)[free_a], (-F + hp.epsilon)[free_s]]
    )
    if candidates.size:
        bias = float(candidates.mean())
    else:
        up_vals = np.concatenate(
            [(-F - hp.epsilon)[alpha < hp.C], (-F + hp.epsilon)[alpha_star > 0]]
        )
        lo_vals = np.concatenate(
            [(-F - hp.epsilon)[alpha > 0], (-F + hp.epsilon)[alpha_star < hp.C]]
        )
        hi = up_vals.max() if up_vals.size else 0.0
        lo = lo_vals.min() if lo_vals.size else 0.0
        bias = float(0.5 * (hi + lo))

    quad = float(beta @ K @ beta)
    dual_obj = (
        -0.5 * quad
        - hp.epsilon * float(alpha.sum() + alpha_star.sum())
        + float(y @ beta)
    )
    residual = np.abs(y - (K @ beta + bias)) - hp.epsilon
    primal_obj = 0.5 * quad + hp.C * float(np.clip(residual, 0.0, None).sum())
    return beta, bias, dual_obj, primal_obj


def svr_train(
    X,
    y,
    hp: SVRHyperparams,
    tol: float = _SMO_TOL,
    max_iter: int = _SMO_MAX_ITER,
    gap_tol: float = 1e-3,
) -> SVRModel:
    """Train an epsilon-SVR model on raw (unscaled) features.

    Features are standardized internally and the scaler is stored on
    the model, so prediction is self-contained. The working-set loop
    exits once the maximal KKT violation drops below ``tol``; the
    tolerance is then tightened (warm-started) while the duality gap
    still exceeds ``gap_tol * (1 + |dual objective|)``, all within the
    shared ``max_iter`` step budget.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes X{X.shape}, y{y.shape}")
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("svr_train inputs must be finite")

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = (X - mean) / sd

    K = np.ascontiguousarray(gram_matrix(hp.kernel, Xs, Xs))
    n = len(y)
    alpha = np.zeros(n)
    alpha_star = np.zeros(n)
    F = -y.copy()  # F_i = (K beta)_i - y_i with beta = 0
    iters = 0
    cur_tol = float(tol)
    while True:
        step_iters, gap = _smo_solve(
            K, y, float(hp.C), float(hp.epsilon), cur_tol,
            int(max_iter) - iters, alpha, alpha_star, F,
        )
        iters += step_iters
        beta, bias, dual_obj, primal_obj = _bias_and_objectives(
            K, y, hp, alpha, alpha_star, F
        )
        if (
            primal_obj - dual_obj <= gap_tol * (1.0 + abs(dual_obj))
            or iters >= max_iter
            or cur_tol <= 1e-12
        ):
            break
        cur_tol *= 0.1

    sv = beta != 0.0
    return SVRModel(
        support_vectors=Xs[sv],
        dual_coefs=beta[sv],
        bias=bias,
        hyperparams=hp,
        scaler_mean=mean,
        scaler_sd=sd,
        diagnostics=SVRDiagnostics(
            iterations=iters,
            kkt_gap=float(gap),
            dual_objective=dual_obj,
            primal_objective=primal_obj,
            alpha=alpha,
            alpha_star=alpha_star,
        ),
    )


def svr_predict(model: SVRModel, X) -> np.ndarray:
    """Predict ``sum_i dual_coef_i * K(sv_i, scale(x)) + bias``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.scaler_mean.shape[0]:
        raise ValueError(
            f"feature dimension {X.shape[1]} does not match training "
            f"dimension {model.scaler_mean.shape[0]}"
        )
    Xs = (X - model.scaler_mean) / model.scaler_sd
    if model.n_support:
        k = gram_matrix(model.hyperparams.kernel, Xs, model.support_vectors)
        out = k @ model.dual_coefs + model.bias
    else:
        out = np.full(X.shape[0], model.bias)
    if not np.all(np.isfinite(out)):
        raise ValueError("prediction overflowed to a non-finite value")
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Grid search with inner k-fold cross-validation


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per tuned hyperparameter for one kernel kind."""

    C: tuple[float, ...]
    epsilon: tuple[float, ...]
    gamma: tuple[float, ...] | None = None
    degree: tuple[int, ...] | None = None
    coef0: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("C", "epsilon", "gamma", "degree", "coef0"):
            val = getattr(self, name)
            if val is not None:
                if len(val) == 0:
                    raise ValueError(f"grid for {name} must be nonempty")
                object.__setattr__(self, name, tuple(val))


def default_grid(kind: str, n_features: int) -> GridSpec:
    """Conventional spans; gamma includes the 1/n_features heuristic."""
    gammas = []
    for g in (0.01, 0.1, 1.0 / max(n_features, 1), 1.0):
        if g not in gammas:
            gammas.append(g)
    common = {"C": (0.1, 1.0, 10.0, 100.0), "epsilon": (0.001, 0.01, 0.1)}
    if kind == "linear":
        return GridSpec(**common)
    if kind == "rbf":
        return GridSpec(**common, gamma=tuple(gammas))
    if kind == "polynomial":
        return GridSpec(**common, gamma=tuple(gammas), degree=(2, 3), coef0=(0.0, 1.0))
    if kind == "sigmoid":
        return GridSpec(**common, gamma=tuple(gammas), coef0=(0.0, 1.0))
    raise ValueError(f"unknown kernel kind {kind!r}")


def grid_points(kind: str, grid: GridSpec) -> tuple[SVRHyperparams, ...]:
    """Enumerate hyperparameter combinations in deterministic order
    (C, then epsilon, then gamma, degree, coef0)."""
    gammas = grid.gamma if kind != "linear" else (None,)
    degrees = grid.degree if kind == "polynomial" else (None,)
    coef0s = grid.coef0 if kind in ("polynomial", "sigmoid") else (None,)
    if kind != "linear" and grid.gamma is None:
        raise ValueError(f"{kind} kernel grid needs gamma candidates")
    if kind == "polynomial" and grid.degree is None:
        raise ValueError("polynomial kernel grid needs degree candidates")
    if kind in ("polynomial", "sigmoid") and grid.coef0 is None:
        raise ValueError(f"{kind} kernel grid needs coef0 candidates")
    points = []
    for C, eps, gamma, degree, coef0 in itertools.product(
        grid.C, grid.epsilon, gammas, degrees, coef0s
    ):
        kernel = KernelSpec(kind, gamma=gamma, degree=degree, coef0=coef0)
        points.append(SVRHyperparams(C, eps, kernel))
    return tuple(points)


def _kfold_indices(n: int, k: int, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    base, extra = divmod(n, k)
    sizes = [base + 1] * extra + [base] * (k - extra)
    folds, start = [], 0
    for size in sizes:
        folds.append(np.sort(perm[start : start + size]))
        start += size
    return folds


def _fold_r2(y, y_hat) -> float:
    sst = float(((y - y.mean()) ** 2).sum())
    if sst <= 0:
        raise ValueError("constant targets in validation fold")
    ssr = float(((y - y_hat) ** 2).sum())
    return 1.0 - ssr / sst


def grid_search(
    X,
    y,
    kind: str,
    grid: GridSpec | None = None,
    seed: int = 0,
    n_folds: int = 5,
    tol: float = _SMO_TOL,
    max_iter: int = _SMO_MAX_ITER,
) -> SVRHyperparams:
    """Pick the grid point maximizing inner-CV mean R-squared.

    Every grid point is scored by ``n_folds``-fold cross-validation on
    the provided rows only; a training failure marks the point -inf.
    Ties break toward smaller C, then smaller gamma, then grid order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if grid is None:
        grid = default_grid(kind, X.shape[1])
    points = grid_points(kind, grid)
    n = X.shape[0]
    folds = _kfold_indices(n, min(n_folds, n), seed)
    everything = np.arange(n)

    scored = []
    for idx, hp in enumerate(points):
        scores = []
        try:
            for fold in folds:
                train = np.setdiff1d(everything, fold, assume_unique=True)
                model = svr_train(X[train], y[train], hp, tol=tol, max_iter=max_iter)
                scores.append(_fold_r2(y[fold], svr_predict(model, X[fold])))
            score = float(np.mean(scores))
        except (ValueError, FloatingPointError):
            score = -math.inf
        gamma_key = hp.kernel.gamma if hp.kernel.gamma is not None else 0.0
        scored.append((-score, hp.C, gamma_key, idx, hp))
    scored.sort(key=lambda item: item[:4])
    return scored[0][4]
