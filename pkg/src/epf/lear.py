"""LASSO-estimated autoregression (LEAR).

The objective is the plain residual sum of squares plus an L1 penalty,

    min_{b0, beta}  ||y - b0 - X beta||^2 + lam * ||beta||_1

with no 1/(2n) factor. Every lambda in this module (grid, lambda_max, KKT
checks) uses that convention, so lambda_max = max_j |2 X_j'(y - mean(y))|.
The intercept is unpenalised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from typing import Hashable, Sequence

import numba
import numpy as np

from .features import DesignMatrix, ScalerMismatchError, ScalerState, norm_inverse

SCHEMA_VERSION = 1
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
DEFAULT_FOLDS = 7
GRID_SIZE = 100
GRID_RATIO = 1e-3


class ConvergenceError(RuntimeError):
    def __init__(self, message, duality_gap=float("nan"), kkt_violation=float("nan")):
        super().__init__(f"{message} (duality gap {duality_gap:.3g}, KKT violation {kkt_violation:.3g})")
        self.message = message
        self.duality_gap = duality_gap
        self.kkt_violation = kkt_violation


# ---------------------------------------------------------------------------
# solver


@numba.njit(cache=True)
def _update(G, q, beta, j, half_lam):
    gjj = G[j, j]
    old = beta[j]
    if gjj <= 0.0:
        new = 0.0
    else:
        rho = q[j] + gjj * old
        if rho > half_lam:
            new = (rho - half_lam) / gjj
        elif rho < -half_lam:
            new = (rho + half_lam) / gjj
        else:
            new = 0.0
    delta = new - old
    if delta != 0.0:
        beta[j] = new
        for k in range(q.shape[0]):
            q[k] -= G[k, j] * delta
    return abs(delta)


@numba.njit(cache=True)
def _violation(G, q, beta, lam, j):
    g = 2.0 * q[j]
    if G[j, j] <= 0.0:
        return 0.0
    if beta[j] > 0.0:
        return abs(g - lam)
    if beta[j] < 0.0:
        return abs(g + lam)
    return max(0.0, abs(g) - lam)


@numba.njit(cache=True)
def _cd_gram(G, c, beta, lam, tol, max_iter):
    """Cyclic coordinate descent on centred Gram ``G`` and ``c = X'y``.

    ``q = c - G beta`` is kept up to date so the KKT residual ``2 q_j`` is
    exact after every update. Returns (sweeps used, final max violation).
    """
    p = c.shape[0]
    q = c - G @ beta
    half_lam = 0.5 * lam
    sweeps = 0
    active = np.empty(p, dtype=np.int64)
    while sweeps < max_iter:
        # full sweep
        for j in range(p):
            _update(G, q, beta, j, half_lam)
        sweeps += 1
        worst = 0.0
        for j in range(p):
            v = _violation(G, q, beta, lam, j)
            if v > worst:
                worst = v
        if worst <= tol:
            return sweeps, worst
        # sweeps restricted to the current support
        n_act = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[n_act] = j
                n_act += 1
        while sweeps < max_iter and n_act > 0:
            for a in range(n_act):
                _update(G, q, beta, active[a], half_lam)
            sweeps += 1
            worst_act = 0.0
            for a in range(n_act):
                v = _violation(G, q, beta, lam, active[a])
                if v > worst_act:
                    worst_act = v
            if worst_act <= 0.5 * tol:
                break
    worst = 0.0
    for j in range(p):
        v = _violation(G, q, beta, lam, j)
        if v > worst:
            worst = v
    return sweeps, worst


def _objective_gram(G, c, yy, beta, lam):
    rss = yy - 2.0 * beta @ c + beta @ G @ beta
    return rss + lam * np.abs(beta).sum()


def duality_gap(G, c, yy, beta, lam) -> float:
    """Gap between the primal objective and the dual bound at a rescaled residual."""
    q = c - G @ beta
    rss = max(yy - 2.0 * beta @ c + beta @ G @ beta, 0.0)
    primal = rss + lam * np.abs(beta).sum()
    gmax = np.max(np.abs(2.0 * q)) if q.size else 0.0
    s = 1.0 if gmax <= lam else lam / gmax
    # dual objective 2 theta'y - theta'theta with theta = s r
    ty = s * (yy - beta @ c)
    dual = 2.0 * ty - s * s * rss
    return float(primal - dual)


@dataclass
class _Problem:
    """Centred sufficient statistics of a least-squares problem."""

    G: np.ndarray
    c: np.ndarray
    yy: float
    x_mean: np.ndarray
    y_mean: float

    @classmethod
    def from_data(cls, X, y) -> "_Problem":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        xm = X.mean(axis=0)
        ym = float(y.mean())
        Xc = X - xm
        yc = y - ym
        return cls(Xc.T @ Xc, Xc.T @ yc, float(yc @ yc), xm, ym)

    def solve(self, lam, beta0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        beta = np.zeros(self.c.size) if beta0 is None else np.array(beta0, dtype=float)
        G = np.ascontiguousarray(self.G)
        _, worst = _cd_gram(G, np.ascontiguousarray(self.c), beta, float(lam), float(tol), int(max_iter))
        if worst > tol:
            gap = duality_gap(self.G, self.c, self.yy, beta, lam)
            raise ConvergenceError(f"coordinate descent did not converge in {max_iter} sweeps at lambda={lam:.6g}",
                                   gap, worst)
        return beta, self.y_mean - float(self.x_mean @ beta)

    def lambda_max(self) -> float:
        return float(np.max(np.abs(2.0 * self.c))) if self.c.size else 0.0


def coordinate_descent(X, y, lam: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                       beta0=None) -> tuple[np.ndarray, float]:
    """Minimise ``||y - b0 - X beta||^2 + lam ||beta||_1``.

    Returns ``(beta, b0)``. The solution satisfies, per column,
    ``|2 X_j'r - lam sign(beta_j)| <= tol`` when ``beta_j != 0`` and
    ``|2 X_j'r| <= lam + tol`` otherwise, with ``r`` the residual.
    Raises :class:`ConvergenceError` after ``max_iter`` sweeps.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    return _Problem.from_data(X, y).solve(lam, beta0, tol, max_iter)


def lasso_objective(X, y, beta, intercept, lam) -> float:
    r = np.asarray(y) - intercept - np.asarray(X) @ beta
    return float(r @ r + lam * np.abs(beta).sum())


def kkt_violation(X, y, beta, intercept, lam) -> float:
    """Largest subgradient-condition residual of a candidate solution."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(y) - intercept - X @ beta
    g = 2.0 * X.T @ r
    nz = beta != 0
    v = np.where(nz, np.abs(g - lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(v.max()) if v.size else 0.0


def lambda_max(X, y) -> float:
    return _Problem.from_data(X, y).lambda_max()


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CvPlan:
    k: int
    fold_assignment: dict
    lambda_grid: np.ndarray
    seed: int

    def row_folds(self, row_days: Sequence[Hashable]) -> np.ndarray:
        return np.array([self.fold_assignment[d] for d in row_days], dtype=int)

    def scaled(self, factor: float) -> "CvPlan":
        return CvPlan(self.k, self.fold_assignment, self.lambda_grid * factor, self.seed)


def make_cv_plan(days: Sequence[Hashable], k: int, seed: int, X, y, n_lambda: int = GRID_SIZE,
                 ratio: float = GRID_RATIO) -> CvPlan:
    """Shuffle days with ``seed`` and deal them round-robin into ``k`` folds.

    The grid runs from lambda_max of the full set down to ``ratio * lambda_max``
    on a log scale.
    """
    days = list(days)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(set(days)) < k:
        raise ValueError(f"{len(set(days))} days cannot fill {k} folds")
    uniq = list(dict.fromkeys(days))
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(len(uniq))
    folds = {uniq[i]: int(pos % k) for pos, i in enumerate(order)}
    lmax = lambda_max(X, y)
    if lmax <= 0:
        lmax = 1.0
    grid = np.geomspace(lmax, ratio * lmax, n_lambda)
    return CvPlan(k, folds, grid, seed)


def lasso_path(problem: _Problem, grid, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, beta0=None):
    """Warm-started solutions along a descending grid: ``(betas (L, p), intercepts (L,))``."""
    p = problem.c.size
    betas = np.empty((len(grid), p))
    b0 = np.empty(len(grid))
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    for i, lam in enumerate(grid):
        beta, b0[i] = problem.solve(lam, beta, tol, max_iter)
        betas[i] = beta
    return betas, b0


def _select(curve: np.ndarray, grid: np.ndarray) -> float:
    return float(grid[int(np.argmin(curve))])  # first minimum = largest lambda


def cv_select_lambda(X, y, plan: CvPlan, row_days: Sequence[Hashable] | None = None,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[float, np.ndarray]:
    """Pick lambda by mean held-out MSE across folds.

    ``row_days`` maps each row to a key of ``plan.fold_assignment`` (default:
    the row index). Ties go to the larger lambda.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if row_days is None:
        row_days = range(X.shape[0])
    folds = plan.row_folds(list(row_days))
    # shift by the global means first; centred Gram matrices are shift invariant
    Xs = X - X.mean(axis=0)
    ys = y - y.mean()
    curve = np.zeros(len(plan.lambda_grid))
    for f in range(plan.k):
        held = folds == f
        if not held.any():
            continue
        betas, b0 = _fold_path(_Problem.from_data(Xs[~held], ys[~held]), plan.lambda_grid, f, tol, max_iter)
        pred = Xs[held] @ betas.T + b0[None, :]
        curve += np.mean((ys[held][:, None] - pred) ** 2, axis=0)
    curve /= plan.k
    return _select(curve, plan.lambda_grid), curve


def _fold_path(problem, grid, fold, tol, max_iter):
    try:
        return lasso_path(problem, grid, tol, max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(f"fold {fold}: {exc.message}", exc.duality_gap, exc.kkt_violation) from exc


def _pooled_problem(Z: np.ndarray, Y: np.ndarray, U: np.ndarray) -> _Problem:
    """Centred statistics of the pooled rows ``[Z[d], U[h]] -> Y[d, h]``.

    With every day carrying all 24 hours, the centred cross-block between day
    features and the hour block vanishes, so the Gram matrix is block diagonal
    and costs O(n_days) instead of O(24 n_days).
    """
    n, p_day = Z.shape
    zm = Z.mean(axis=0)
    um = U.mean(axis=0)
    ym = float(Y.mean())
    Zc = Z - zm
    Uc = U - um
    Yc = Y - ym
    G = np.zeros((p_day + 24, p_day + 24))
    G[:p_day, :p_day] = 24.0 * (Zc.T @ Zc)
    G[p_day:, p_day:] = n * (Uc.T @ Uc)
    c = np.concatenate([Zc.T @ Yc.sum(axis=1), Uc.T @ Yc.sum(axis=0)])
    return _Problem(G, c, float((Yc * Yc).sum()), np.concatenate([zm, um]), ym)


def cv_select_lambda_pooled(design: DesignMatrix, plan: CvPlan, tol: float = DEFAULT_TOL,
                            max_iter: int = DEFAULT_MAX_ITER) -> tuple[float, np.ndarray]:
    """Same result as :func:`cv_select_lambda` on ``design.X``, using the pooled structure."""
    Z, Y = design.day_view()
    U = design.X[:24, Z.shape[1]:]
    folds = np.array([plan.fold_assignment[d] for d in design.days], dtype=int)
    Zs = Z - Z.mean(axis=0)
    Ys = Y - Y.mean()
    p_day = Z.shape[1]
    curve = np.zeros(len(plan.lambda_grid))
    for f in range(plan.k):
        held = folds == f
        if not held.any():
            continue
        betas, b0 = _fold_path(_pooled_problem(Zs[~held], Ys[~held], U), plan.lambda_grid, f, tol, max_iter)
        day_part = Zs[held] @ betas[:, :p_day].T  # (n_held, L)
        hour_part = U @ betas[:, p_day:].T  # (24, L)
        pred = day_part[:, None, :] + hour_part[None, :, :] + b0[None, None, :]
        curve += np.mean((Ys[held][:, :, None] - pred) ** 2, axis=(0, 1))
    curve /= plan.k
    return _select(curve, plan.lambda_grid), curve


# ---------------------------------------------------------------------------
# LEAR model


@dataclass(frozen=True)
class LassoFit:
    columns: tuple[str, ...]
    beta: np.ndarray
    intercept: float
    lam: float
    x_scaler: ScalerState
    y_scaler: ScalerState
    config_label: str = ""
    groups: dict = field(default_factory=dict)
    valid_from: date | None = None
    valid_to: date | None = None

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "lear",
            "config_label": self.config_label,
            "columns": list(self.columns),
            "groups": [self.groups.get(c, c) for c in self.columns],
            "beta": [float(b) for b in self.beta],
            "intercept": float(self.intercept),
            "lambda": float(self.lam),
            "x_scaler": self.x_scaler.to_dict(),
            "y_scaler": self.y_scaler.to_dict(),
            "valid_from": self.valid_from.isoformat() if self.valid_from else None,
            "valid_to": self.valid_to.isoformat() if self.valid_to else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LassoFit":
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "lear":
            raise ValueError(f"not a LEAR fit document (schema {d.get('schema_version')}, kind {d.get('kind')})")
        cols = tuple(d["columns"])
        return cls(cols, np.array(d["beta"], dtype=float), float(d["intercept"]), float(d["lambda"]),
                   ScalerState.from_dict(d["x_scaler"]), ScalerState.from_dict(d["y_scaler"]),
                   d.get("config_label", ""), dict(zip(cols, d["groups"])),
                   date.fromisoformat(d["valid_from"]) if d.get("valid_from") else None,
                   date.fromisoformat(d["valid_to"]) if d.get("valid_to") else None)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def fit_lear(design: DesignMatrix, plan: CvPlan | None = None, seed: int = 0, k: int = DEFAULT_FOLDS,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, relative_tol: bool = False,
             pooled: bool = True) -> LassoFit:
    """Cross-validate lambda on day-level folds, then refit on the whole window.

    ``pooled`` uses the block structure of the hour one-hot layout (same
    answer as the generic route, far cheaper). With ``relative_tol`` the KKT
    tolerance is ``tol * max(1, lambda_max)``:
    the residual gradient grows with the row count, and thousands of pooled
    rows make an absolute 1e-6 unreachable in reasonable time.
    """
    if plan is None:
        plan = make_cv_plan(design.days, k, seed, design.X, design.y)
    if relative_tol:
        tol = tol * max(1.0, float(plan.lambda_grid[0]))
    if pooled:
        lam, _ = cv_select_lambda_pooled(design, plan, tol, max_iter)
        Z, Y = design.day_view()
        problem = _pooled_problem(Z, Y, design.X[:24, Z.shape[1]:])
    else:
        lam, _ = cv_select_lambda(design.X, design.y, plan, design.row_days, tol, max_iter)
        problem = _Problem.from_data(design.X, design.y)
    stop = int(np.searchsorted(-plan.lambda_grid, -lam)) + 1
    betas, b0 = lasso_path(problem, plan.lambda_grid[:stop], tol, max_iter)
    label = design.config.label if design.config is not None else ""
    return LassoFit(design.columns, betas[-1].copy(), float(b0[-1]), lam, design.x_scaler, design.y_scaler,
                    label, dict(design.groups))


def check_compatible(fit, rows: DesignMatrix) -> None:
    if tuple(rows.columns) != tuple(fit.columns):
        raise ScalerMismatchError("design columns differ from the fitted model's columns")
    if rows.x_scaler != fit.x_scaler or rows.y_scaler != fit.y_scaler:
        raise ScalerMismatchError("design was scaled with a different scaler than the fitted model")


def predict_normalized(fit: LassoFit, X) -> np.ndarray:
    return fit.intercept + np.asarray(X) @ fit.beta


def predict_lear(fit: LassoFit, day_rows: DesignMatrix) -> np.ndarray:
    """Prices (EUR/MWh) for the 24 hours of each day in ``day_rows``.

    Returns shape ``(24,)`` for a single day, else ``(n_days, 24)``.
    """
    check_compatible(fit, day_rows)
    z = predict_normalized(fit, day_rows.X)
    out = norm_inverse(z[:, None], fit.y_scaler)[:, 0].reshape(-1, 24)
    return out[0] if out.shape[0] == 1 else out
