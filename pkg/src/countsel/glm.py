"""Poisson log-likelihood, deviance, and the unpenalized IRLS fitter.

The log link is used throughout.  The likelihood omits the constant
-sum(log(y!)) term everywhere, consistently, so likelihood differences and
deviances are unaffected.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ETA_CLAMP = 30.0  # linear-predictor bound applied inside exp() during fitting
ETA_OVERFLOW = 700.0  # beyond this exp() overflows a double outright


class PredictorOverflowError(FloatingPointError):
    """Linear predictor left the range where exp() is representable."""


class RankDeficiencyError(ValueError):
    """Active design columns are collinear; carries the offending names."""

    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"collinear columns: {', '.join(self.columns)}")


@dataclass(frozen=True)
class PoissonModel:
    """Intercept plus a full-width coefficient vector (zeros off-support)."""

    intercept: float
    coefficients: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self) -> None:
        coefs = np.asarray(self.coefficients, dtype=np.float64)
        coefs.flags.writeable = False
        object.__setattr__(self, "coefficients", coefs)
        if len(self.column_names) != coefs.shape[0]:
            raise ValueError("column names and coefficients disagree in length")

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ self.coefficients

    @property
    def active_set(self) -> tuple[str, ...]:
        return tuple(
            name
            for name, b in zip(self.column_names, self.coefficients)
            if b != 0.0
        )


@dataclass(frozen=True)
class FitDiagnostics:
    log_likelihood: float
    deviance: float
    iterations: int
    converged: bool
    history: tuple[float, ...]


def _check_eta(eta: np.ndarray) -> None:
    if eta.size and np.max(np.abs(eta)) > ETA_OVERFLOW:
        raise PredictorOverflowError(
            "linear predictor exceeds the representable range for exp()"
        )


def log_likelihood(model: PoissonModel, X: np.ndarray, Y: np.ndarray) -> float:
    """sum(y * eta - exp(eta)), the constant -sum(log y!) omitted."""
    eta = model.linear_predictor(X)
    _check_eta(eta)
    return float(np.sum(Y * eta - np.exp(eta)))


def predict(model: PoissonModel, X: np.ndarray) -> np.ndarray:
    """Mean response exp(eta); strictly positive for representable eta."""
    eta = model.linear_predictor(X)
    _check_eta(eta)
    return np.exp(eta)


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    """2 * sum(y*log(y/mu) - (y - mu)); a zero count contributes 2*mu.

    Requires mu > 0 wherever y > 0; mu may be 0 only alongside a zero
    count (the saturated prediction), contributing nothing.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu < 0.0) or np.any((mu == 0.0) & (y > 0)):
        raise ValueError("deviance requires positive predictions for positive counts")
    safe_y = np.where(y > 0, y, 1.0)
    safe_mu = np.where(mu > 0, mu, 1.0)
    terms = np.where(y > 0, y * np.log(safe_y / safe_mu) - (y - mu), mu)
    return float(2.0 * np.sum(terms))


def deviance(model: PoissonModel, X: np.ndarray, Y: np.ndarray) -> float:
    return poisson_deviance(Y, predict(model, X))


def saturated_log_likelihood(Y: np.ndarray) -> float:
    """sum(y*log(y) - y) with the same constant omitted; zero counts give 0."""
    y = np.asarray(Y, dtype=np.float64)
    return float(np.sum(np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)) - y, 0.0)))


def dependent_columns(A: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Indices of columns linearly dependent on earlier ones.

    Greedy modified Gram-Schmidt in column order: a column whose residual
    after projection onto the previously kept ones falls below rtol times
    its own norm is flagged.  Earlier columns always win.
    """
    n, p = A.shape
    basis: list[np.ndarray] = []
    dependent: list[int] = []
    for j in range(p):
        c = A[:, j].astype(np.float64, copy=True)
        norm0 = np.linalg.norm(c)
        if norm0 == 0.0:
            dependent.append(j)
            continue
        for q in basis:
            c -= (q @ c) * q
        for q in basis:  # second pass for numerical stability
            c -= (q @ c) * q
        norm = np.linalg.norm(c)
        if norm <= rtol * norm0:
            dependent.append(j)
        else:
            basis.append(c / norm)
    return dependent


def _clamped_mu(eta: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))


def _loglik_raw(eta: np.ndarray, y: np.ndarray) -> float:
    # exp overflow deliberately yields -inf so a divergent step is rejected
    with np.errstate(over="ignore"):
        return float(np.sum(y * eta - np.exp(eta)))


def fit_glm(
    X: np.ndarray,
    Y: np.ndarray,
    active_columns: Sequence[int] | None = None,
    *,
    column_names: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 20,
) -> tuple[PoissonModel, FitDiagnostics]:
    """Unpenalized Poisson fit on a column subset by Newton steps.

    active_columns selects design columns by index; None means all of them
    and an empty sequence fits the intercept alone.  Coefficients outside
    the active set come back as exact zeros.  Convergence is declared when
    the max-absolute gradient of the log-likelihood drops to tol; each step
    is halved (up to max_halvings) until the log-likelihood does not
    decrease.  Collinear active columns raise RankDeficiencyError before
    any iteration runs.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, p_full = X.shape
    if column_names is None:
        column_names = tuple(f"col{j}" for j in range(p_full))
    else:
        column_names = tuple(column_names)

    if active_columns is None:
        idx = list(range(p_full))
    else:
        idx = [int(j) for j in active_columns]
    if len(idx) + 1 >= n:
        raise ValueError(
            f"{len(idx)} active columns with only {n} rows; fit is underdetermined"
        )

    A = np.column_stack([np.ones(n), X[:, idx]]) if idx else np.ones((n, 1))
    dep = dependent_columns(A)
    if dep:
        raise RankDeficiencyError([column_names[idx[j - 1]] for j in dep])

    ybar = float(Y.mean())
    b = np.zeros(A.shape[1])
    b[0] = np.log(ybar) if ybar > 0 else -2.0

    eta = A @ b
    ll = _loglik_raw(eta, Y)
    history = [ll]
    converged = False
    iterations = 0
    for _ in range(max_iter):
        mu_step = _clamped_mu(eta)
        grad = A.T @ (Y - np.exp(np.clip(eta, -ETA_OVERFLOW, ETA_OVERFLOW)))
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        iterations += 1
        H = (A * mu_step[:, None]).T @ A
        try:
            delta = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(H, grad, rcond=None)
        accepted = False
        for _h in range(max_halvings + 1):
            b_try = b + delta
            eta_try = A @ b_try
            ll_try = _loglik_raw(eta_try, Y)
            if ll_try >= ll - 1e-12 * max(1.0, abs(ll)):
                b, eta, ll = b_try, eta_try, ll_try
                accepted = True
                break
            delta = delta / 2.0
        if not accepted:
            break
        history.append(ll)
    else:
        grad = A.T @ (Y - np.exp(np.clip(eta, -ETA_OVERFLOW, ETA_OVERFLOW)))
        converged = bool(np.max(np.abs(grad)) <= tol)

    coefs = np.zeros(p_full)
    for k, j in enumerate(idx):
        coefs[j] = b[k + 1]
    model = PoissonModel(float(b[0]), coefs, column_names)
    diag = FitDiagnostics(
        log_likelihood=ll,
        deviance=poisson_deviance(Y, _clamped_mu(eta)),
        iterations=iterations,
        converged=converged,
        history=tuple(history),
    )
    return model, diag
