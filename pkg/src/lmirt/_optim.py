"""Damped Newton solvers for the weighted logistic sub-problems of the M-step.

Both solvers only ever accept parameter moves that do not decrease the
objective (expanding/halving line search, candidate points clipped into the
parameter box first), which is what preserves the generalized-EM
monotonicity guarantee of the callers. Step expansion matters under
separation: the concave objective then has no interior optimum and plain
Newton steps would crawl toward the cap one logit per iteration.
"""

from __future__ import annotations

import numpy as np

from .response_model import log_sigmoid

_MAX_HALVINGS = 40
_MAX_DOUBLINGS = 40


def _solve_direction(hessian: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """Ascent direction from H d = g, ridge-regularized when singular."""
    direction = None
    try:
        direction = np.linalg.solve(hessian, gradient)
    except np.linalg.LinAlgError:
        pass
    if direction is None or not np.all(np.isfinite(direction)):
        scale = max(np.abs(np.diag(hessian)).max(), 1e-12)
        ridge = hessian + 1e-8 * scale * np.eye(len(gradient))
        try:
            direction = np.linalg.solve(ridge, gradient)
        except np.linalg.LinAlgError:
            direction = gradient / scale
    if not np.all(np.isfinite(direction)):
        direction = gradient / max(np.abs(gradient).max(), 1.0)
    return direction


def _line_search(value, clip, theta, current, direction):
    """Largest improving step along ``direction`` (doubling, then halving).

    Returns (new_theta, new_value, moved).
    """
    cand = clip(theta + direction)
    cand_val = value(cand)
    if cand_val >= current - 1e-12:
        step = 1.0
        for _ in range(_MAX_DOUBLINGS):
            wider = clip(theta + 2.0 * step * direction)
            if np.array_equal(wider, cand):
                break  # boxed in
            wider_val = value(wider)
            if wider_val > cand_val:
                cand, cand_val, step = wider, wider_val, 2.0 * step
            else:
                break
        return cand, cand_val, bool(np.abs(cand - theta).max() > 0.0)
    step = 0.5
    for _ in range(_MAX_HALVINGS):
        cand = clip(theta + step * direction)
        cand_val = value(cand)
        if cand_val >= current - 1e-12:
            return cand, cand_val, bool(np.abs(cand - theta).max() > 0.0)
        step *= 0.5
    return theta, current, False


def maximize_weighted_logistic(design, offset, weights, successes, theta0, *,
                               cap=50.0, tol=1e-9, max_iter=50, natural_clip=None):
    """Maximize sum_i [S_i log s(z_i) + (W_i - S_i) log s(-z_i)], z = A theta + o.

    ``natural_clip``, when given, maps a candidate theta onto the feasible
    set in whatever natural parameterization the caller uses (identity box
    clipping by default). Returns (theta, converged).
    """
    design = np.asarray(design, dtype=float)
    weights = np.asarray(weights, dtype=float)
    successes = np.asarray(successes, dtype=float)
    failures = weights - successes
    if natural_clip is None:
        def natural_clip(th):
            return np.clip(th, -cap, cap)

    def value(th):
        z = design @ th + offset
        return float(successes @ log_sigmoid(z) + failures @ log_sigmoid(-z))

    theta = natural_clip(np.asarray(theta0, dtype=float).copy())
    current = value(theta)
    converged = False
    for _ in range(max_iter):
        z = design @ theta + offset
        prob = np.exp(log_sigmoid(z))
        grad = design.T @ (successes - weights * prob)
        if np.abs(grad).max() < tol:
            converged = True
            break
        curvature = weights * prob * (1.0 - prob)
        hessian = (design * curvature[:, None]).T @ design
        direction = _solve_direction(hessian, grad)
        theta, current, moved = _line_search(value, natural_clip, theta,
                                             current, direction)
        if not moved:
            break  # boxed in or at the optimum
    return theta, converged


def maximize_weighted_multinomial(covariates, weights, coefs0, *,
                                  cap=50.0, tol=1e-9, max_iter=50):
    """Maximize sum_i sum_c W_ic log p_ic(coefs) for the baseline-logit model.

    ``coefs0`` is (k-1, p); state 0 is the zero-coefficient baseline.
    Returns (coefs, converged).
    """
    covariates = np.asarray(covariates, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n, p = covariates.shape
    k = weights.shape[1]
    if k == 1:
        return np.zeros((0, p)), True
    row_weight = weights.sum(axis=1)

    def probs(coefs):
        logits = np.zeros((n, k))
        logits[:, 1:] = covariates @ coefs.reshape(k - 1, p).T
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def value(flat):
        logits = np.zeros((n, k))
        logits[:, 1:] = covariates @ flat.reshape(k - 1, p).T
        shift = logits.max(axis=1, keepdims=True)
        logden = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
        return float((weights * logits).sum() - row_weight @ logden)

    def clip(flat):
        return np.clip(flat, -cap, cap)

    theta = clip(np.asarray(coefs0, dtype=float).ravel().copy())
    current = value(theta)
    converged = False
    q = (k - 1) * p
    for _ in range(max_iter):
        pr = probs(theta)
        resid = weights[:, 1:] - row_weight[:, None] * pr[:, 1:]
        grad = (resid.T @ covariates).ravel()
        if np.abs(grad).max() < tol:
            converged = True
            break
        hessian = np.zeros((q, q))
        for c in range(1, k):
            for d in range(1, k):
                w_cd = row_weight * pr[:, c] * ((c == d) - pr[:, d])
                block = (covariates * w_cd[:, None]).T @ covariates
                hessian[(c - 1) * p:c * p, (d - 1) * p:d * p] = block
        direction = _solve_direction(hessian, grad)
        theta, current, moved = _line_search(value, clip, theta, current,
                                             direction)
        if not moved:
            break
    return theta.reshape(k - 1, p), converged
