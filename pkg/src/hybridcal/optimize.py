"""Damped least-squares (Levenberg-Marquardt) with monotone step acceptance.

Two entry modes share the same damping loop:

* ``levenberg_marquardt`` takes residual/Jacobian callbacks and forms dense
  normal equations; suitable for problems with tens of parameters.
* ``levenberg_marquardt_normal`` takes a callback returning pre-accumulated
  (JtJ, Jtr, cost); suitable for structured problems where the Jacobian
  should never be materialized.

Accepted iterations never increase the cost; the per-iteration cost of every
accepted step is recorded in ``loss_curve``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    loss_curve: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    message: str = ""


def numeric_jacobian(fun, x, step=1e-7):
    """Central-difference Jacobian of a residual function."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(fun(x))
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
    return J


def levenberg_marquardt(fun, x0, jac=None, max_iter=100, ftol=1e-12, gtol=1e-10,
                        xtol=1e-14, lambda0=1e-4, lambda_up=10.0, lambda_down=0.25,
                        max_lambda=1e12) -> LMResult:
    """Minimize ``sum(fun(x)**2)`` over x.

    ``jac(x)`` returns the residual Jacobian; omitted, central differences
    are used.  Raises nothing on stall; inspect ``converged``/``message``.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(fun(x), dtype=float)
    cost = float(r @ r)
    lam = lambda0
    result = LMResult(x=x, cost=cost, loss_curve=[cost])
    for it in range(max_iter):
        J = jac(x) if jac is not None else numeric_jacobian(fun, x)
        J = np.asarray(J, dtype=float)
        g = J.T @ r
        if np.linalg.norm(g, np.inf) < gtol:
            result.converged = True
            result.message = "gradient below tolerance"
            break
        JtJ = J.T @ J
        diag = np.diag(JtJ).copy()
        diag[diag < 1e-12] = 1e-12
        accepted = False
        while lam <= max_lambda:
            A = JtJ + lam * np.diag(diag)
            try:
                dx = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= lambda_up
                continue
            x_new = x + dx
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                result.loss_curve.append(cost)
                lam = max(lam * lambda_down, 1e-14)
                accepted = True
                if rel < ftol or np.linalg.norm(dx) < xtol * (1.0 + np.linalg.norm(x)):
                    result.converged = True
                    result.message = "cost decrease below tolerance"
                break
            lam *= lambda_up
        result.n_iter = it + 1
        if not accepted:
            result.converged = True
            result.message = "no acceptable step (local minimum)"
            break
        if result.converged:
            break
    result.x = x
    result.cost = cost
    if not result.message:
        result.converged = True
        result.message = "max iterations reached"
    return result


def levenberg_marquardt_normal(normal_fn, apply_fn, cost_fn, x0, max_iter=100,
                               ftol=1e-12, gtol=1e-10, lambda0=1e-4, lambda_up=10.0,
                               lambda_down=0.25, max_lambda=1e12,
                               raise_on_stall=False) -> LMResult:
    """LM on pre-accumulated normal equations.

    ``normal_fn(x) -> (JtJ, Jtr, cost)`` builds the Gauss-Newton system at x;
    ``apply_fn(x, dx) -> x_new`` composes a local step (manifold-aware);
    ``cost_fn(x) -> float`` evaluates the objective alone.
    """
    x = x0
    JtJ, g, cost = normal_fn(x)
    lam = lambda0
    result = LMResult(x=x, cost=cost, loss_curve=[cost])
    for it in range(max_iter):
        if np.linalg.norm(g, np.inf) < gtol:
            result.converged = True
            result.message = "gradient below tolerance"
            break
        diag = np.diag(JtJ).copy()
        diag[diag < 1e-12] = 1e-12
        accepted = False
        while lam <= max_lambda:
            A = JtJ + lam * np.diag(diag)
            try:
                dx = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= lambda_up
                continue
            x_new = apply_fn(x, dx)
            cost_new = cost_fn(x_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                x = x_new
                result.loss_curve.append(cost_new)
                cost = cost_new
                lam = max(lam * lambda_down, 1e-14)
                accepted = True
                if rel < ftol:
                    result.converged = True
                    result.message = "cost decrease below tolerance"
                break
            lam *= lambda_up
        result.n_iter = it + 1
        if not accepted:
            if raise_on_stall and it == 0:
                raise Diverged("optimizer could not decrease the objective")
            result.converged = True
            result.message = "no acceptable step (local minimum)"
            break
        if result.converged:
            break
        JtJ, g, cost = normal_fn(x)
        if result.loss_curve and cost > result.loss_curve[-1] + 1e-9 * (1 + abs(cost)):
            # a weight refresh between iterations must not silently raise cost
            result.message = "cost drifted after reweighting"
            break
    result.x = x
    result.cost = cost
    if not result.message:
        result.converged = True
        result.message = "max iterations reached"
    return result


def huber_weights(errors: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights for the Huber loss on per-item error magnitudes."""
    e = np.abs(np.asarray(errors, dtype=float))
    w = np.ones_like(e)
    mask = e > delta
    w[mask] = delta / e[mask]
    return w
