"""Independent reference solvers used only to verify the package's
optimizers. Deliberately simple and slow: proximal gradient for the
lasso, projected gradient ascent for the SVR dual."""

import numpy as np


def soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def ista_lasso(X, y, lam, max_iter=200_000, tol=1e-12):
    """Proximal-gradient minimizer of (1/2n)||y - Xb||^2 + lam*||b||_1."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    lips = np.linalg.eigvalsh(X.T @ X / n).max()
    if lips <= 0:
        return np.zeros(X.shape[1])
    step = 1.0 / lips
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        grad = X.T @ (X @ beta - y) / n
        new = soft(beta - step * grad, step * lam)
        if np.abs(new - beta).max() < tol:
            beta = new
            break
        beta = new
    return beta


def lasso_objective(X, y, beta, lam):
    r = y - X @ beta
    return 0.5 * float(r @ r) / len(y) + lam * float(np.abs(beta).sum())


def _project_box_hyperplane(z, signs, box):
    """Exact Euclidean projection onto {0 <= t <= box, signs @ t = 0}.

    The projection is clip(z - nu*signs, 0, box) for the multiplier nu
    solving h(nu) = signs @ clip(...) = 0; h is piecewise linear and
    nonincreasing, so the root sits between adjacent kink points and
    follows from linear interpolation.
    """

    def h(nu):
        return np.clip(z - np.multiply.outer(nu, signs), 0.0, box) @ signs

    # clip(z_t - nu*s_t) kinks where the argument hits 0 or box
    kinks = np.unique(np.concatenate([signs * z, signs * (z - box)]))
    vals = h(kinks)
    if vals[0] <= 0:
        nu = kinks[0]
    elif vals[-1] >= 0:
        nu = kinks[-1]
    else:
        i = int(np.searchsorted(-vals, 0.0, side="left")) - 1
        lo, hi = kinks[i], kinks[i + 1]
        vlo, vhi = vals[i], vals[i + 1]
        nu = lo if vlo == vhi else lo + (hi - lo) * vlo / (vlo - vhi)
    return np.clip(z - nu * signs, 0.0, box)


def svr_dual_objective(K, y, alpha, alpha_star, eps):
    beta = alpha - alpha_star
    return (
        -0.5 * float(beta @ K @ beta)
        - eps * float(alpha.sum() + alpha_star.sum())
        + float(y @ beta)
    )


def qp_svr_oracle(K, y, C, eps, max_iter=200_000, tol=1e-8):
    """Projected gradient ascent (Nesterov momentum, restart on
    nonmonotone steps) on the epsilon-SVR dual, run until the iterate
    change drops below ``tol``.

    Maximizes -0.5*b'Kb - eps*sum(a+a*) + y'b over 0 <= a, a* <= C with
    sum(a - a*) = 0, where b = a - a*. Returns (alpha, alpha_star).
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    signs = np.concatenate([np.ones(n), -np.ones(n)])
    lips = 2.0 * max(np.abs(np.linalg.eigvalsh(K)).max(), 1e-12)
    step = 1.0 / lips

    def objective(theta):
        return svr_dual_objective(K, y, theta[:n], theta[n:], eps)

    def ascent_step(theta):
        beta = theta[:n] - theta[n:]
        kb = K @ beta
        grad = np.concatenate([-kb - eps + y, kb - eps - y])
        return _project_box_hyperplane(theta + step * grad, signs, C)

    theta = np.zeros(2 * n)
    momentum = theta
    t_k = 1.0
    obj = objective(theta)
    for _ in range(max_iter):
        cand = ascent_step(momentum)
        cand_obj = objective(cand)
        if cand_obj < obj:  # momentum overshoot: plain step restart
            cand = ascent_step(theta)
            cand_obj = objective(cand)
            t_k = 1.0
        delta = np.abs(cand - theta).max()
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        momentum = cand + ((t_k - 1.0) / t_next) * (cand - theta)
        theta, obj, t_k = cand, cand_obj, t_next
        if delta < tol:
            break
    return theta[:n], theta[n:]
