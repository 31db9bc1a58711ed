"""Penalized spline logistic regression and a single-hidden-layer network.

The GAM analogue puts a quadratic penalty on the spline-block coefficients
only and fits by penalized IRLS; its smoothing weight is chosen on a
log-spaced grid by inner cross-validated log-loss. The network is trained
by deterministic full-batch gradient descent with backtracking line search
and multiple seeded restarts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cv import make_cv_plan
from .metrics import log_loss
from .schema import DesignMatrix


class GamFitError(RuntimeError):
    """IRLS failed to converge (typically separation)."""


LAMBDA_GRID = tuple(10.0 ** k for k in range(-4, 5))  # 1e-4 .. 1e4, 9 points
RIDGE_FLOOR = 1e-6


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bernoulli_deviance(z, y):
    # sum over i of log(1 + e^z) - y z, computed stably
    return float(np.sum(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))


# ---------------------------------------------------------------------------
# GAM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GamModel:
    """Penalized logistic fit over a design matrix (intercept prepended)."""

    coefficients: np.ndarray        # (p + 1,), [intercept, columns...]
    lam: float
    penalty_mask: np.ndarray        # (p + 1,) 1.0 where the spline penalty applies
    ridge_floor: float
    deviance: float
    fitted_probs: np.ndarray
    column_names: tuple[str, ...]

    def linear_predictor(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[1] + 1 != len(self.coefficients):
            raise ValueError(
                f"column mismatch: model has {len(self.coefficients) - 1} columns, "
                f"input has {values.shape[1]}")
        return self.coefficients[0] + values @ self.coefficients[1:]

    def to_dict(self) -> dict:
        return {
            "kind": "gam",
            "coefficients": self.coefficients.tolist(),
            "lam": self.lam,
            "penalty_mask": self.penalty_mask.tolist(),
            "ridge_floor": self.ridge_floor,
            "deviance": self.deviance,
            "column_names": list(self.column_names),
        }


def penalized_loglik_and_grad(beta, X_full, y, penalty_diag):
    """Log-likelihood minus (1/2) beta' P beta, with its exact gradient.

    `X_full` carries the intercept column; `penalty_diag` holds the
    per-coefficient quadratic penalty weights.
    """
    z = X_full @ beta
    p = _sigmoid(z)
    loglik = -_bernoulli_deviance(z, y)
    value = loglik - 0.5 * float(beta @ (penalty_diag * beta))
    grad = X_full.T @ (y - p) - penalty_diag * beta
    return value, grad


def _penalized_objective(X_full, y, penalty_diag, beta):
    z = X_full @ beta
    return -_bernoulli_deviance(z, y) - 0.5 * float(beta @ (penalty_diag * beta))


def _irls(X_full, y, penalty_diag, max_iter=100, tol=1e-8):
    n, p = X_full.shape
    beta = np.zeros(p)
    base = y.mean()
    beta[0] = np.log(base / (1.0 - base))
    objective = _penalized_objective(X_full, y, penalty_diag, beta)
    for _ in range(max_iter):
        z = X_full @ beta
        if not np.isfinite(z).all() or np.abs(z).max() > 1e4:
            raise GamFitError("IRLS diverged (separation suspected)")
        prob = _sigmoid(z)
        w = prob * (1.0 - prob)
        # Newton step on the penalized log-likelihood, halved if it would
        # decrease the objective (quasi-separation safeguard).
        grad = X_full.T @ (y - prob) - penalty_diag * beta
        hess = (X_full * w[:, None]).T @ X_full
        hess[np.diag_indices_from(hess)] += penalty_diag
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise GamFitError(f"IRLS normal equations singular: {exc}") from exc
        scale = 1.0
        accepted = False
        for _ in range(25):
            candidate = beta + scale * step
            cand_obj = _penalized_objective(X_full, y, penalty_diag, candidate)
            if np.isfinite(cand_obj) and cand_obj >= objective - 1e-12:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # Objective is stationary to float precision (e.g. a saturated
            # separable fit); the current iterate is the answer.
            break
        beta = candidate
        objective = cand_obj
        if np.abs(scale * step).max() < tol:
            break
    # Reaching max_iter is a valid stop: under quasi-separation a
    # zero-event dummy coefficient walks off at constant speed while the
    # objective is already stationary, exactly like GLM software that
    # returns its iteration-capped fit.
    return beta


def fit_gam(X: DesignMatrix, y, lam="auto", *, ridge_floor: float = 0.0,
            seed: int = 0) -> GamModel:
    """Penalized IRLS fit; lam="auto" picks the spline penalty from a
    log-spaced grid by stratified 5-fold CV log-loss (ties favor the
    smoother model)."""
    y = np.asarray(y, dtype=float)
    if not ((y == 1).any() and (y == 0).any()):
        raise GamFitError("both classes must be present")
    values = X.values
    spline_cols = set(X.spline_indices().tolist())
    mask = np.zeros(values.shape[1] + 1)
    for j in spline_cols:
        mask[j + 1] = 1.0

    if lam == "auto":
        lam = _select_lambda(values, y, mask, seed, ridge_floor)
    lam = float(lam)

    X_full = np.column_stack([np.ones(len(y)), values])
    penalty_diag = lam * mask + ridge_floor
    beta = _irls(X_full, y, penalty_diag)
    z = X_full @ beta
    return GamModel(
        coefficients=beta, lam=lam, penalty_mask=mask, ridge_floor=ridge_floor,
        deviance=2.0 * _bernoulli_deviance(z, y), fitted_probs=_sigmoid(z),
        column_names=X.column_names)


def _select_lambda(values, y, mask, seed, ridge_floor=0.0, folds=5):
    plan = make_cv_plan(y, folds=folds, repeats=1, seed=seed)
    best = None
    for lam in LAMBDA_GRID:
        losses = []
        for fold in range(folds):
            tr = plan.train_indices(0, fold)
            te = plan.test_indices(0, fold)
            X_full = np.column_stack([np.ones(len(tr)), values[tr]])
            beta = None
            for floor in (ridge_floor, max(ridge_floor, RIDGE_FLOOR),
                          max(ridge_floor, 1e-2)):
                try:
                    beta = _irls(X_full, y[tr], lam * mask + floor)
                    break
                except GamFitError:
                    continue
            if beta is None:
                losses.append(np.inf)
                continue
            z = beta[0] + values[te] @ beta[1:]
            losses.append(log_loss(_sigmoid(z), y[te]))
        mean_loss = float(np.mean(losses))
        # >= keeps the larger (smoother) lambda on ties.
        if best is None or mean_loss <= best[0]:
            best = (mean_loss, lam)
    if not np.isfinite(best[0]):
        raise GamFitError("no smoothing weight produced a convergent fit")
    return best[1]


def predict_gam(model: GamModel, X_new) -> np.ndarray:
    """Probabilities on new rows encoded with the model's spline_meta."""
    values = X_new.values if isinstance(X_new, DesignMatrix) else X_new
    return _sigmoid(model.linear_predictor(values))


# ---------------------------------------------------------------------------
# Neural network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NnModel:
    """One logistic hidden layer, one logistic output unit."""

    w1: np.ndarray            # (p, hidden)
    b1: np.ndarray            # (hidden,)
    w2: np.ndarray            # (hidden,)
    b2: float
    hidden: int
    decay: float
    input_mean: np.ndarray
    input_sd: np.ndarray
    train_objective: float
    n_iterations: int

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.w1.shape[0]:
            raise ValueError(
                f"column mismatch: model expects {self.w1.shape[0]}, got {X.shape[1]}")
        Xs = (X - self.input_mean) / self.input_sd
        hidden = _sigmoid(Xs @ self.w1 + self.b1)
        return _sigmoid(hidden @ self.w2 + self.b2)

    def to_dict(self) -> dict:
        return {
            "kind": "nn",
            "w1": self.w1.tolist(), "b1": self.b1.tolist(),
            "w2": self.w2.tolist(), "b2": self.b2,
            "hidden": self.hidden, "decay": self.decay,
            "input_mean": self.input_mean.tolist(),
            "input_sd": self.input_sd.tolist(),
        }


def _unpack(theta, p, h):
    w1 = theta[: p * h].reshape(p, h)
    b1 = theta[p * h: p * h + h]
    w2 = theta[p * h + h: p * h + 2 * h]
    b2 = theta[-1]
    return w1, b1, w2, b2


def nn_objective_and_grad(theta, Xs, y, decay, hidden):
    """Summed Bernoulli deviance plus decay * (squared weights, biases
    excluded), with the exact backprop gradient."""
    n, p = Xs.shape
    w1, b1, w2, b2 = _unpack(theta, p, hidden)
    a = Xs @ w1 + b1
    hid = _sigmoid(a)
    z = hid @ w2 + b2
    value = _bernoulli_deviance(z, y) + decay * (float(np.sum(w1 * w1))
                                                 + float(np.sum(w2 * w2)))
    dz = _sigmoid(z) - y                       # (n,)
    gw2 = hid.T @ dz + 2.0 * decay * w2
    gb2 = float(dz.sum())
    dhid = np.outer(dz, w2) * hid * (1.0 - hid)  # (n, h)
    gw1 = Xs.T @ dhid + 2.0 * decay * w1
    gb1 = dhid.sum(axis=0)
    grad = np.concatenate([gw1.ravel(), gb1, gw2, [gb2]])
    return value, grad


def _nn_objective(theta, Xs, y, decay, hidden):
    n, p = Xs.shape
    w1, b1, w2, b2 = _unpack(theta, p, hidden)
    z = _sigmoid(Xs @ w1 + b1) @ w2 + b2
    return _bernoulli_deviance(z, y) + decay * (float(np.sum(w1 * w1))
                                                + float(np.sum(w2 * w2)))


def _descend(theta, Xs, y, decay, hidden, max_iter, grad_tol, initial_step):
    """Backtracking-line-search gradient descent; returns (theta, value, iters)."""
    step = initial_step
    value, grad = nn_objective_and_grad(theta, Xs, y, decay, hidden)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite initial loss")
    it = 0
    for it in range(1, max_iter + 1):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) < grad_tol:
            break
        accepted = False
        for _ in range(40):
            cand = theta - step * grad
            cand_value = _nn_objective(cand, Xs, y, decay, hidden)
            if np.isfinite(cand_value) and cand_value <= value - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        theta = cand
        value, grad = nn_objective_and_grad(theta, Xs, y, decay, hidden)
        step *= 2.0
    return theta, value, it


def fit_nn(X, y, *, hidden=3, decay=0.0, seed=0, restarts=5, max_iter=2000,
           grad_tol=1e-6) -> NnModel:
    """Best-of-restarts full-batch training on standardized inputs.

    Initial weights are uniform on +-0.5 per (seed, restart); the restart
    with the lowest training objective wins. A non-finite loss retries the
    descent with a halved initial step.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not ((y == 1).any() and (y == 0).any()):
        raise ValueError("both classes must be present")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0.0] = 1.0
    Xs = (X - mean) / sd
    p = X.shape[1]
    n_par = p * hidden + 2 * hidden + 1

    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence((seed, restart)))
        theta0 = rng.uniform(-0.5, 0.5, size=n_par)
        step = 1e-2
        for _ in range(8):
            try:
                theta, value, iters = _descend(theta0, Xs, y, decay, hidden,
                                               max_iter, grad_tol, step)
                break
            except FloatingPointError:
                step *= 0.5
        else:
            continue
        if best is None or value < best[0]:
            best = (value, theta, iters)
    if best is None:
        raise RuntimeError("all restarts produced non-finite losses")

    value, theta, iters = best
    w1, b1, w2, b2 = _unpack(theta, p, hidden)
    return NnModel(w1=w1.copy(), b1=b1.copy(), w2=w2.copy(), b2=float(b2),
                   hidden=hidden, decay=decay, input_mean=mean, input_sd=sd,
                   train_objective=float(value), n_iterations=iters)


def save_smooth_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)
        fh.write("\n")
