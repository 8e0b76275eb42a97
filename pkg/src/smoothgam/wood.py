"""Wood's parametric lactation curve, fat = α week^δ exp(κ week) + ε, fitted by nonlinear least squares."""
import logging
from typing import Optional

import numpy as np
from attr import attrs
from scipy.optimize import least_squares

from .data import Dataset
from .errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

MAX_EVALUATIONS = 500
GRADIENT_TOLERANCE = 1e-8


def wood_curve(week: np.ndarray, alpha: float, delta: float, kappa: float) -> np.ndarray:
    week = np.asarray(week, dtype=float)
    return alpha * week ** delta * np.exp(kappa * week)


@attrs(auto_attribs=True, frozen=True, eq=False)
class WoodFit(object):
    """A fitted Wood curve.

    `residual_variance` is RSS / (n − 3) and `covariance` is the matching σ² (JᵀJ)⁻¹. The likelihood, and hence
    AIC, uses the maximum-likelihood variance RSS / n; the model has ``df = 4`` parameters counting σ.
    """
    DF = 4

    alpha: float
    delta: float
    kappa: float
    residual_variance: float
    covariance: np.ndarray
    rss: float
    tss: float
    n: int
    log_likelihood: float
    aic: float
    evaluations: int
    gradient_norm: float
    response_name: str = 'fat'
    covariate_name: str = 'week'

    @property
    def df(self) -> int:
        return self.DF

    @property
    def rmse(self) -> float:
        return float(np.sqrt(self.rss / self.n))

    @property
    def deviance_explained(self) -> float:
        return 1.0 - self.rss / self.tss if self.tss > 0 else 0.0

    @property
    def parameters(self) -> np.ndarray:
        return np.array([self.alpha, self.delta, self.kappa])

    def predict(self, week: np.ndarray) -> np.ndarray:
        return wood_curve(week, self.alpha, self.delta, self.kappa)

    def summary_row(self, label: str = 'Wood') -> dict:
        return {'model': label, 'response': self.response_name, 'edf': float(self.df), 'aic': self.aic,
                'deviance': self.rss, 'deviance_explained': self.deviance_explained, 'rmse': self.rmse}


def _jacobian(parameters: np.ndarray, week: np.ndarray, fat: np.ndarray) -> np.ndarray:
    alpha, delta, kappa = parameters
    curve = wood_curve(week, alpha, delta, kappa)
    # Residuals are fat - curve, so every column is the negated partial derivative of the curve.
    return -np.column_stack([curve / alpha, curve * np.log(week), curve * week])


def _residuals(parameters: np.ndarray, week: np.ndarray, fat: np.ndarray) -> np.ndarray:
    return fat - wood_curve(week, *parameters)


def start_values(week: np.ndarray, fat: np.ndarray) -> np.ndarray:
    """(α, δ, κ) from the log-linear regression log(fat) ~ 1 + log(week) + week."""
    design = np.column_stack([np.ones_like(week), np.log(week), week])
    coefficients, *_ = np.linalg.lstsq(design, np.log(fat), rcond=None)
    return np.array([np.exp(coefficients[0]), coefficients[1], coefficients[2]])


def fit_wood_lactation(data: Dataset, week: str = 'week', fat: Optional[str] = None) -> WoodFit:
    """Fit Wood's curve by Levenberg–Marquardt with an analytic Jacobian.

    Args:
        data: The lactation data.
        week: The lactation-week column.
        fat: The response column; defaults to the Dataset's response.

    Raises:
        DomainError: Non-positive weeks or fat yields.
        ConvergenceError: No convergence within 500 function evaluations, or a relative gradient norm
            ‖Jᵀr‖ / (‖J‖ ‖y‖) above 1e-8 at the returned point; carries the optimizer trace.
    """
    fat_name = fat or data.response_name or 'fat'
    t = np.asarray(data.numeric(week), dtype=float)
    y = np.asarray(data.numeric(fat_name), dtype=float)
    if np.any(t <= 0) or np.any(y <= 0):
        raise DomainError("Wood's model needs strictly positive weeks and yields", column=week)
    start = start_values(t, y)
    trace = []

    def residuals(parameters):
        r = _residuals(parameters, t, y)
        trace.append({'parameters': parameters.tolist(), 'rss': float(r @ r)})
        return r

    result = least_squares(residuals, start, jac=lambda p: _jacobian(p, t, y), method='lm', max_nfev=MAX_EVALUATIONS,
                           xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if result.status <= 0 or not np.all(np.isfinite(result.x)):
        raise ConvergenceError(f"Wood's model did not converge: {result.message}", trace=trace,
                               last_iterate=result.x.tolist())

    J = _jacobian(result.x, t, y)
    r = _residuals(result.x, t, y)
    rss = float(r @ r)
    n = t.size
    gradient_norm = float(np.linalg.norm(J.T @ r) / max(np.linalg.norm(J) * np.linalg.norm(y), 1e-300))
    if gradient_norm > GRADIENT_TOLERANCE:
        raise ConvergenceError(f"Wood's model stopped at a relative gradient norm of {gradient_norm:.3g}, above "
                               f"{GRADIENT_TOLERANCE:g}", trace=trace, last_iterate=result.x.tolist())
    residual_variance = rss / (n - 3) if n > 3 else np.nan
    covariance = residual_variance * np.linalg.inv(J.T @ J)
    sigma2 = max(rss / n, np.finfo(float).tiny)
    log_likelihood = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1.0)
    logger.info("Wood's model converged after %d evaluations, RSS %.6g", result.nfev, rss)
    return WoodFit(
        alpha=float(result.x[0]), delta=float(result.x[1]), kappa=float(result.x[2]),
        residual_variance=residual_variance, covariance=covariance, rss=rss, tss=float(np.sum((y - y.mean()) ** 2)),
        n=n, log_likelihood=float(log_likelihood), aic=float(-2 * log_likelihood + 2 * WoodFit.DF),
        evaluations=int(result.nfev), gradient_norm=gradient_norm, response_name=fat_name, covariate_name=week,
    )


__all__ = ['WoodFit', 'wood_curve', 'start_values', 'fit_wood_lactation']
