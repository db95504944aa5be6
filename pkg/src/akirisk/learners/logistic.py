"""Penalised linear learners: L1 logistic (proximal Newton + coordinate descent),
ridge logistic for the clinical baseline, and the lasso used in error analysis."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._cd import solve_subproblem, solve_subproblem_gram


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class LinearFit:
    coef: np.ndarray
    intercept: float
    converged: bool = True
    n_iter: int = 0
    kkt_residual: float = 0.0
    info: dict = field(default_factory=dict)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def class_multipliers(y: np.ndarray, mode: str = "none") -> np.ndarray:
    """Per-row class weight; 'balanced' gives N / (2 * N_y)."""
    y = np.asarray(y)
    if mode == "none":
        return np.ones(len(y))
    if mode != "balanced":
        raise ValueError(f"unknown class weighting {mode!r}")
    n = len(y)
    out = np.empty(n)
    for cls in (0, 1):
        mask = y == cls
        if mask.any():
            out[mask] = n / (2.0 * mask.sum())
    return out


def logistic_loss_grad(X, y, w, coef, intercept):
    """Weighted log loss and its gradient wrt (coef, intercept)."""
    eta = X @ coef + intercept
    loss = float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))
    resid = w * (sigmoid(eta) - y)
    return loss, X.T @ resid, float(resid.sum())


def kkt_residual(X, y, w, coef, intercept, lam) -> float:
    """Largest violation of the L1 optimality conditions."""
    _, grad, grad_b = logistic_loss_grad(X, y, w, coef, intercept)
    lam = np.broadcast_to(lam, coef.shape)
    viol = np.where(coef == 0, np.maximum(np.abs(grad) - lam, 0.0),
                    np.abs(grad + lam * np.sign(coef)))
    return float(max(viol.max(initial=0.0), abs(grad_b)))


def _newton_step(X, g, h, beta, b, lam, tol, max_sweeps):
    """Solve the penalised quadratic model; covariance form when n >= p."""
    n, p = X.shape
    if n < p:
        d, db, _, _ = solve_subproblem(X, g, h, beta, lam, tol, max_sweeps, True)
        return d, db
    Xa = np.empty((n, p + 1))
    Xa[:, :p] = X
    Xa[:, p] = 1.0
    Q = Xa.T @ (Xa * h[:, None])
    c = Xa.T @ g
    da, _, _ = solve_subproblem_gram(Q, c, np.append(beta, b), np.append(lam, 0.0), tol, max_sweeps)
    return da[:p], float(da[p])


def fit_l1_logistic(X, y, sample_weight=None, C: float = 2e-3, class_weighting: str = "none",
                    tol: float = 1e-6, max_sweeps: int = 1000, penalty_factor=None,
                    warm_start: LinearFit | None = None, max_newton: int = 100) -> LinearFit:
    """Minimise sum_i w_i*cls(y_i)*logloss_i + (1/C)*||beta||_1, intercept unpenalised.

    Proximal Newton: each outer step solves the penalised quadratic model by
    coordinate descent (at most ``max_sweeps`` sweeps), then backtracks on the
    true objective. Stops once the largest coefficient change of an accepted
    step is below ``tol``, or after ``max_newton`` steps.
    """
    X = np.asfortranarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    w = w * class_multipliers(y.astype(int), class_weighting)
    lam = np.full(p, 1.0 / C)
    if penalty_factor is not None:
        lam = lam * np.asarray(penalty_factor, dtype=float)

    if warm_start is not None:
        beta = warm_start.coef.astype(float).copy()
        b = float(warm_start.intercept)
    else:
        beta = np.zeros(p)
        prev = np.clip(np.sum(w * y) / np.sum(w), 1e-12, 1 - 1e-12)
        b = float(np.log(prev / (1 - prev)))

    def objective(beta, b):
        eta = X @ beta + b
        return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)) + np.sum(lam * np.abs(beta)))

    f = objective(beta, b)
    converged = False
    it = 0
    while it < max_newton:
        it += 1
        eta = X @ beta + b
        prob = sigmoid(eta)
        g = w * (prob - y)
        h = np.maximum(w * prob * (1.0 - prob), 1e-12 * w)
        d, db = _newton_step(X, g, h, beta, b, lam, tol * 0.1, max_sweeps)
        # descent bound for the Armijo-type test
        delta = float(g @ (X @ d) + g.sum() * db
                      + np.sum(lam * (np.abs(beta + d) - np.abs(beta))))
        step = 1.0
        while True:
            nb, nbb = beta + step * d, b + step * db
            fn = objective(nb, nbb)
            if fn <= f + 1e-4 * step * delta or step < 1e-10:
                break
            step *= 0.5
        change = step * max(np.abs(d).max(initial=0.0), abs(db))
        beta, b, f = nb, nbb, fn
        if change < tol:
            converged = True
            break

    kkt = kkt_residual(X, y, w, beta, b, lam)
    if not converged:
        warnings.warn(f"L1 logistic regression did not converge in {max_newton} Newton steps "
                      f"(KKT residual {kkt:.3g})", ConvergenceWarning, stacklevel=2)
    return LinearFit(beta, b, converged, it, kkt, {"objective": f})


def fit_ridge_logistic(X, y, sample_weight=None, C: float = 1000.0,
                       class_weighting: str = "none", tol: float = 1e-10,
                       max_iter: int = 100) -> LinearFit:
    """Minimise sum_i w_i*logloss_i + ||beta||^2 / (2C) by damped Newton."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    w = w * class_multipliers(y.astype(int), class_weighting)
    A = np.column_stack([X, np.ones(n)])
    reg = np.full(p + 1, 1.0 / C)
    reg[-1] = 0.0
    theta = np.zeros(p + 1)

    def objective(t):
        eta = A @ t
        return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)) + 0.5 * np.sum(reg * t * t))

    f = objective(theta)
    converged = False
    for it in range(1, max_iter + 1):
        prob = sigmoid(A @ theta)
        grad = A.T @ (w * (prob - y)) + reg * theta
        H = (A * (w * prob * (1 - prob))[:, None]).T @ A + np.diag(reg) + 1e-10 * np.eye(p + 1)
        step_dir = np.linalg.solve(H, grad)
        step = 1.0
        while step > 1e-10:
            cand = theta - step * step_dir
            fc = objective(cand)
            if fc <= f:
                break
            step *= 0.5
        theta, f = cand, fc
        if np.abs(step * step_dir).max() < tol:
            converged = True
            break
    return LinearFit(theta[:-1].copy(), float(theta[-1]), converged, it)


def fit_l1_least_squares(X, y, alpha: float, sample_weight=None, tol: float = 1e-8,
                         max_sweeps: int = 10000) -> LinearFit:
    """Lasso: minimise (1/2n)*sum_i w_i*(y_i - x_i.beta - b)^2 + alpha*||beta||_1."""
    X = np.asfortranarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    h = w / n
    g = -h * y
    beta = np.zeros(p)
    d, db, used, last = solve_subproblem(X, g, h, beta, np.full(p, float(alpha)), tol,
                                         max_sweeps, True)
    converged = last < tol
    if not converged:
        warnings.warn(f"lasso did not converge in {max_sweeps} sweeps", ConvergenceWarning,
                      stacklevel=2)
    return LinearFit(d, float(db), converged, used)
