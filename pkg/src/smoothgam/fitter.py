"""Penalized IRLS, smoothness selection by REML or GCV, and the statistics of a fitted model.

Smoothing parameters are searched on the log scale, ρ = log λ, by Nelder–Mead with restarts. Every criterion
evaluation runs a full PIRLS and evaluates the criterion at the converged working weights, so the REML used here
is the penalized quasi-likelihood (performance iteration) version with the scale profiled out.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, TypeVar, Union
from warnings import warn

import numpy as np
from attr import attrib, attrs, evolve
from scipy import linalg
from scipy.optimize import minimize, minimize_scalar

from .data import Dataset
from .design import ModelMatrices, assemble_design
from .errors import (ConvergenceError, DegenerateCriterionError, DomainError, EvaluationError, GAMError,
                     OptimizationError, RankError, RequestError)
from .families import Family, GaussianFamily, IdentityLink, TweedieFamily
from .formula import parse
from .terms.classes import FittedTerm, Term

logger = logging.getLogger(__name__)

T = TypeVar('T')

REML = 'reml'
GCV = 'gcv'
CRITERIA = (REML, GCV)


@attrs(auto_attribs=True, frozen=True, order=False)
class FitOptions(object):
    """Knobs of the fitting procedure.

    Examples:
        >>> FitOptions().with_criterion('gcv').criterion
        'gcv'
    """
    criterion: str = REML
    max_iterations: int = 200
    tolerance: float = 1e-9
    max_halvings: int = 30
    starts: Tuple[float, ...] = (-3.0, 0.0, 6.0)
    start_jitter: float = 0.25
    bounds: Tuple[float, float] = (-12.0, 12.0)
    gradient_step: float = 1e-4
    gradient_tolerance: float = 1e-2
    seed: int = 0
    power_grid: Tuple[float, ...] = tuple(round(1.05 + 0.05 * i, 2) for i in range(19))
    power_tolerance: float = 0.005
    initial_rho: Optional[Tuple[float, ...]] = None

    def with_criterion(self: T, criterion: str) -> T:
        if criterion not in CRITERIA:
            raise OptimizationError(f'Unknown criterion {criterion!r}, expected one of {list(CRITERIA)}')
        return evolve(self, criterion=criterion)

    def with_seed(self: T, seed: int) -> T:
        return evolve(self, seed=int(seed))

    def with_starts(self: T, *starts: float) -> T:
        return evolve(self, starts=tuple(float(start) for start in starts))

    def with_initial_rho(self: T, rho: Optional[Sequence[float]]) -> T:
        return evolve(self, initial_rho=None if rho is None else tuple(float(r) for r in rho))


@attrs(auto_attribs=True, frozen=True, eq=False)
class InnerFit(object):
    """The converged state of PIRLS at fixed smoothing parameters.

    `W` and `z` are the working weights and response of the final solve, so `beta` solves
    ``(XᵀWX + Sλ) β = XᵀWz`` exactly for them.
    """
    beta: np.ndarray
    W: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    deviance: float
    penalized_deviance: float
    converged: bool
    iterations: int
    XtWX: np.ndarray
    A: np.ndarray
    cholesky: Tuple[np.ndarray, bool]

    @property
    def working_rss(self) -> float:
        return float(np.sum(self.W * (self.z - self.eta) ** 2))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.cholesky, rhs)

    @property
    def log_det_A(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.cholesky[0]))))

    @property
    def influence_diagonal(self) -> np.ndarray:
        """diag(F) with F = (XᵀWX + Sλ)⁻¹ XᵀWX."""
        return np.diag(self.solve(self.XtWX))

    @property
    def edf(self) -> float:
        return float(np.sum(self.influence_diagonal))


def _is_gaussian_identity(family: Family) -> bool:
    return isinstance(family, GaussianFamily) and isinstance(family.link, IdentityLink)


def _offending_term(A: np.ndarray, M: ModelMatrices) -> Optional[str]:
    eigenvalues, eigenvectors = np.linalg.eigh((A + A.T) / 2.0)
    weakest = np.abs(eigenvectors[:, np.argmin(eigenvalues)])
    column = int(np.argmax(weakest))
    for label, (start, stop) in M.term_index.items():
        if start <= column < stop:
            return label
    return None


def _factorize(A: np.ndarray, M: ModelMatrices) -> Tuple[np.ndarray, bool]:
    try:
        factor = linalg.cho_factor(A, lower=False, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        term = _offending_term(A, M) if np.all(np.isfinite(A)) else None
        raise RankError('The penalized normal equations are singular; the model is not identifiable at these '
                        'smoothing parameters', term=term) from None
    if np.any(np.diag(factor[0]) ** 2 <= 1e-12 * np.abs(np.diag(A))):
        raise RankError('The penalized normal equations are numerically singular', term=_offending_term(A, M))
    return factor


def pirls_fit(M: ModelMatrices, family: Family, lambdas: Sequence[float], data: Dataset,
              options: Optional[FitOptions] = None, beta_start: Optional[np.ndarray] = None) -> InnerFit:
    """Maximize the penalized likelihood at fixed smoothing parameters.

    Each iteration forms the working response ``z = η + (y − μ) dη/dμ`` and weights ``W = w (dμ/dη)² / V(μ)`` and
    solves the penalized weighted least-squares problem by Cholesky. A step that increases the penalized deviance
    or leaves the domain of the mean is halved. Iteration stops when the relative change of the penalized
    deviance, ``|Δ| / (D + 0.1)``, falls below the tolerance; a Gaussian identity-link model is exact after one
    solve.

    Raises:
        RankError: The penalized normal equations are singular; names the offending term.
        ConvergenceError: No convergence within the iteration limit; carries the last iterate.
    """
    options = options or FitOptions()
    X = M.X
    y = data.y
    w = data.weights
    family.check_response(y)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise OptimizationError(f'Smoothing parameters must be non-negative, got {lambdas.tolist()}')
    S = M.penalty_sum(lambdas) if M.n_groups else np.zeros((M.P, M.P))

    if beta_start is not None:
        eta = X @ beta_start
        mu = family.link_invert(eta)
        if not family.link.valid_mu(mu) or (family.POSITIVE_MEAN and np.any(mu <= 0)):
            beta_start = None
    if beta_start is None:
        mu = family.initial_mu(y, w)
        eta = family.link_apply(mu)

    def penalized(beta_, mu_):
        return family.deviance(y, mu_, w) + float(beta_ @ S @ beta_)

    beta_old = beta_start
    pdev_old = penalized(beta_start, mu) if beta_start is not None else np.inf
    exact = _is_gaussian_identity(family)
    for iteration in range(1, options.max_iterations + 1):
        mu_eta = family.link_derivative(eta)
        z = eta + (y - mu) / mu_eta
        W = w * mu_eta ** 2 / family.variance(mu)
        XtW = X.T * W
        XtWX = XtW @ X
        A = XtWX + S
        cholesky = _factorize(A, M)
        beta = linalg.cho_solve(cholesky, XtW @ z)
        eta_new = X @ beta
        mu_new = family.link_invert(eta_new)

        halvings = 0
        while True:
            valid = family.link.valid_mu(mu_new) and not (family.POSITIVE_MEAN and np.any(mu_new <= 0))
            pdev = penalized(beta, mu_new) if valid else np.inf
            if beta_old is None or pdev <= pdev_old * (1 + 1e-12) or halvings >= options.max_halvings:
                break
            halvings += 1
            beta = (beta + beta_old) / 2.0
            eta_new = X @ beta
            mu_new = family.link_invert(eta_new)
        if not np.isfinite(pdev):
            raise ConvergenceError('PIRLS left the domain of the mean and could not recover by step halving',
                                   last_iterate={'iteration': iteration, 'beta': beta.tolist()})

        eta, mu = eta_new, mu_new
        change = abs(pdev - pdev_old) / (abs(pdev) + 0.1) if np.isfinite(pdev_old) else np.inf
        logger.debug('PIRLS iteration %d: penalized deviance %.10g, %d halvings', iteration, pdev, halvings)
        if exact or change < options.tolerance:
            return InnerFit(beta, W, z, eta, mu, family.deviance(y, mu, w), pdev, True, iteration, XtWX, A,
                            cholesky)
        beta_old, pdev_old = beta, pdev

    raise ConvergenceError(f'PIRLS did not converge in {options.max_iterations} iterations',
                           last_iterate={'penalized_deviance': pdev_old, 'beta': beta_old.tolist()})


def _orthogonal(first: np.ndarray, second: np.ndarray) -> bool:
    scale = np.abs(first).max() * np.abs(second).max()
    return bool(np.abs(first @ second).max() <= 1e-10 * scale)


@attrs(auto_attribs=True, frozen=True, eq=False)
class PenaltyStructure(object):
    """Log pseudo-determinant bookkeeping for Sλ.

    Sλ is block diagonal over terms. Within a term whose groups act on mutually orthogonal ranges the
    pseudo-determinant factorizes, log|Σ λ_g S_g|₊ = Σ_g (r_g log λ_g + log|S_g|₊); other terms fall back to an
    eigendecomposition at the structural rank.
    """
    separable: Tuple[Tuple[int, int, float], ...]
    blocks: Tuple[Tuple[int, int, Tuple[int, ...], int], ...]
    rank: int

    @classmethod
    def from_matrices(cls, M: ModelMatrices) -> 'PenaltyStructure':
        separable: List[Tuple[int, int, float]] = []
        blocks = []
        rank = 0
        for label, (start, stop) in M.term_index.items():
            groups = sorted({M.group_index(block.group) for block in M.penalties if start <= block.start < stop})
            if not groups:
                continue
            local = [M.group_penalty(M.groups[g])[start:stop, start:stop] for g in groups]
            orthogonal = all(_orthogonal(local[i], local[j])
                             for i in range(len(local)) for j in range(i + 1, len(local)))
            if orthogonal:
                for g, matrix in zip(groups, local):
                    r = sum(block.rank for block in M.penalties if block.group == M.groups[g])
                    eigenvalues = np.sort(np.linalg.eigvalsh(matrix))[::-1][:r]
                    separable.append((g, r, float(np.sum(np.log(eigenvalues)))))
                    rank += r
            else:
                eigenvalues = np.linalg.eigvalsh(sum(local))
                r = int(np.sum(eigenvalues > 1e-9 * eigenvalues.max()))
                blocks.append((start, stop, tuple(groups), r))
                rank += r
        return cls(tuple(separable), tuple(blocks), rank)

    def log_det(self, M: ModelMatrices, lambdas: np.ndarray) -> float:
        total = sum(r * np.log(lambdas[g]) + log_det for g, r, log_det in self.separable)
        for start, stop, groups, r in self.blocks:
            matrix = sum(lambdas[g] * M.group_penalty(M.groups[g])[start:stop, start:stop] for g in groups)
            total += float(np.sum(np.log(np.sort(np.linalg.eigvalsh(matrix))[::-1][:r])))
        return float(total)


def _residual_df(M: ModelMatrices, inner: InnerFit) -> float:
    residual_df = M.n - inner.edf
    if residual_df <= 1e-8 * M.n:
        raise DegenerateCriterionError(f'The model uses {inner.edf:.6g} effective degrees of freedom on {M.n} '
                                       f'observations; the criterion is undefined')
    return residual_df


def gcv_criterion(M: ModelMatrices, family: Family, lambdas: Sequence[float], data: Dataset,
                  inner: Optional[InnerFit] = None, options: Optional[FitOptions] = None) -> float:
    """GCV = n D / (n − τ)² with τ = tr(F).

    Raises:
        DegenerateCriterionError: τ reaches n.
    """
    inner = inner or pirls_fit(M, family, lambdas, data, options)
    return float(M.n * inner.deviance / _residual_df(M, inner) ** 2)


def reml_criterion(M: ModelMatrices, family: Family, lambdas: Sequence[float], data: Dataset,
                   inner: Optional[InnerFit] = None, options: Optional[FitOptions] = None,
                   structure: Optional[PenaltyStructure] = None) -> float:
    """Negative restricted log likelihood with the scale profiled out, up to a constant.

    ``V = ½ [(n − M_p) log D_p + log|XᵀWX + Sλ| − log|Sλ|₊]`` where ``D_p`` is the working penalized residual sum of
    squares at convergence and ``M_p`` the dimension of the penalty null space.
    """
    inner = inner or pirls_fit(M, family, lambdas, data, options)
    structure = structure or PenaltyStructure.from_matrices(M)
    lambdas = np.asarray(lambdas, dtype=float)
    null_dim = M.P - structure.rank
    if M.n <= null_dim:
        raise DegenerateCriterionError(f'{M.n} observations cannot support {null_dim} unpenalized coefficients')
    S = M.penalty_sum(lambdas) if M.n_groups else np.zeros((M.P, M.P))
    d_p = inner.working_rss + float(inner.beta @ S @ inner.beta)
    if d_p <= 0:
        raise DegenerateCriterionError('The penalized residual sum of squares is zero; REML is undefined')
    log_det_s = structure.log_det(M, lambdas) if M.n_groups else 0.0
    return float(0.5 * ((M.n - null_dim) * np.log(d_p) + inner.log_det_A - log_det_s))


@attrs(auto_attribs=True, frozen=True, eq=False)
class FittedModel(object):
    """A fitted GAM.

    Attributes:
        formula: The formula text as given.
        family: The family, with φ̂ and, for Tweedie, p̂ filled in.
        terms: Fitted terms, in design order.
        term_index: Column range of each term.
        groups: Smoothing-parameter group names; `lambdas` is aligned with them.
        Vbeta: Bayesian posterior covariance φ̂ (XᵀWX + Sλ)⁻¹.
        Ve: Frequentist covariance φ̂ (XᵀWX + Sλ)⁻¹ XᵀWX (XᵀWX + Sλ)⁻¹.
        edf: Per-coefficient diagonal of the influence matrix F.
        edf_by_term: Sums of `edf` over each term's columns, parametric terms included, so they add up to the
            total.
        covariates: Training values of the numeric covariates of univariate smooths, kept for diagnostics.
    """
    formula: str
    family: Family
    terms: Tuple[FittedTerm, ...]
    term_index: Dict[str, Tuple[int, int]]
    groups: Tuple[str, ...]
    lambdas: np.ndarray
    beta: np.ndarray
    Vbeta: np.ndarray
    Ve: np.ndarray
    edf: np.ndarray
    edf_by_term: Dict[str, float]
    phi: float
    deviance: float
    null_deviance: float
    log_likelihood: float
    aic: float
    criterion: str
    criterion_value: Optional[float]
    response_name: str
    weight_name: Optional[str]
    y: np.ndarray
    weights: np.ndarray
    fitted_values: np.ndarray
    covariates: Dict[str, np.ndarray]
    factor_levels: Dict[str, Tuple[str, ...]]
    null_space_dim: int
    iterations: int = 0
    trace: Tuple[dict, ...] = ()
    penalty_scales: Dict[str, float] = attrib(factory=dict)
    matrices: Optional[ModelMatrices] = attrib(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def P(self) -> int:
        return int(self.beta.size)

    @property
    def edf_total(self) -> float:
        return float(np.sum(self.edf))

    @property
    def residual_df(self) -> float:
        return self.n - self.edf_total

    @property
    def power(self) -> Optional[float]:
        return getattr(self.family, 'power', None)

    @property
    def deviance_explained(self) -> float:
        if self.null_deviance <= 0:
            return 0.0
        return 1.0 - self.deviance / self.null_deviance

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.y - self.fitted_values) ** 2)))

    @property
    def linear_predictor(self) -> np.ndarray:
        return self.family.link_apply(self.fitted_values)

    def term(self, label: str) -> FittedTerm:
        for fitted in self.terms:
            if fitted.label == label:
                return fitted
        raise RequestError(f'Unknown term {label!r}', term=label)

    def coefficients(self, label: str) -> np.ndarray:
        start, stop = self.term_index[label]
        return self.beta[start:stop]


def _covariance(inner: InnerFit, phi: float) -> Tuple[np.ndarray, np.ndarray]:
    P = inner.A.shape[0]
    try:
        A_inv = linalg.cho_solve(inner.cholesky, np.eye(P))
        Vbeta = phi * (A_inv + A_inv.T) / 2.0
        if P:
            linalg.cholesky(Vbeta)
    except linalg.LinAlgError:
        ridge = 1e-10 * np.abs(np.diag(inner.A)).max()
        warn(f'Posterior covariance regularized with a ridge of {ridge:.3g}')
        A_inv = np.linalg.inv(inner.A + ridge * np.eye(P))
        Vbeta = phi * (A_inv + A_inv.T) / 2.0
    Ve = phi * A_inv @ inner.XtWX @ A_inv
    return Vbeta, (Ve + Ve.T) / 2.0


def _smooth_covariates(M: ModelMatrices, data: Dataset) -> Dict[str, np.ndarray]:
    covariates = {}
    for fitted in M.fitted_terms:
        for name in fitted.term.columns:
            if not data.column(name).is_factor:
                covariates[name] = np.array(data.numeric(name))
    return covariates


def finalize_fit(M: ModelMatrices, family: Family, lambdas: Sequence[float], inner: InnerFit, data: Dataset,
                 formula: str, criterion: str, criterion_value: Optional[float],
                 trace: Sequence[dict] = ()) -> FittedModel:
    """Scale, covariances, EDF and fit statistics at the selected smoothing parameters."""
    y, w = data.y, data.weights
    edf = inner.influence_diagonal
    tau = float(np.sum(edf))
    residual_df = M.n - tau
    if residual_df <= 0:
        raise DegenerateCriterionError(f'No residual degrees of freedom left (EDF {tau:.6g}, n {M.n})')
    phi = float(np.sum(w * (y - inner.mu) ** 2 / family.variance(inner.mu)) / residual_df)
    family = family.with_phi(phi)
    Vbeta, Ve = _covariance(inner, phi)
    edf_by_term = {label: float(np.sum(edf[start:stop])) for label, (start, stop) in M.term_index.items()}
    centre = float(np.average(y, weights=w))
    null_deviance = family.deviance(y, np.full_like(y, centre), w)
    log_likelihood = family.log_likelihood(y, inner.mu, phi, w)
    aic = -2.0 * log_likelihood + 2.0 * (tau + family.n_scale_parameters)
    factor_levels = {name: data.column(name).levels for fitted in M.fitted_terms
                     for name in fitted.term.columns if data.column(name).is_factor}
    return FittedModel(
        formula=formula, family=family, terms=M.fitted_terms, term_index=dict(M.term_index), groups=M.groups,
        lambdas=np.asarray(lambdas, dtype=float), beta=inner.beta, Vbeta=Vbeta, Ve=Ve, edf=edf,
        edf_by_term=edf_by_term, phi=phi, deviance=inner.deviance, null_deviance=null_deviance,
        log_likelihood=log_likelihood, aic=aic, criterion=criterion, criterion_value=criterion_value,
        response_name=data.response_name, weight_name=data.weight_name, y=np.array(y), weights=np.array(w),
        fitted_values=inner.mu, covariates=_smooth_covariates(M, data), factor_levels=factor_levels,
        null_space_dim=M.null_space_dim, iterations=inner.iterations, trace=tuple(trace),
        penalty_scales=dict(M.penalty_scales), matrices=M,
    )


class _Objective(object):
    """The criterion as a function of ρ, remembering the best coefficients for warm starts."""
    SOFT_ERRORS = (ConvergenceError, RankError, DegenerateCriterionError, EvaluationError, DomainError)

    def __init__(self, M: ModelMatrices, family: Family, data: Dataset, options: FitOptions):
        self.M = M
        self.family = family
        self.data = data
        self.options = options
        self.structure = PenaltyStructure.from_matrices(M) if options.criterion == REML else None
        self.best_value = np.inf
        self.best_beta: Optional[np.ndarray] = None
        self.evaluations = 0

    def inner(self, rho: np.ndarray) -> InnerFit:
        return pirls_fit(self.M, self.family, np.exp(rho), self.data, self.options, self.best_beta)

    def __call__(self, rho: np.ndarray) -> float:
        rho = np.clip(np.asarray(rho, dtype=float), *self.options.bounds)
        self.evaluations += 1
        try:
            inner = self.inner(rho)
            if self.options.criterion == REML:
                value = reml_criterion(self.M, self.family, np.exp(rho), self.data, inner, structure=self.structure)
            else:
                value = gcv_criterion(self.M, self.family, np.exp(rho), self.data, inner)
        except self.SOFT_ERRORS as e:
            logger.debug('Criterion undefined at rho=%s: %s', rho.tolist(), e.message)
            return np.inf
        if value < self.best_value:
            self.best_value = value
            self.best_beta = inner.beta
        return value


def _nelder_mead(objective: _Objective, start: np.ndarray, options: FitOptions, simplex_size: float = 1.0):
    dim = start.size
    lo, hi = options.bounds
    start = np.clip(start, lo, hi)
    simplex = [start]
    for i in range(dim):
        vertex = start.copy()
        vertex[i] += simplex_size if start[i] + simplex_size <= hi else -simplex_size
        simplex.append(vertex)
    return minimize(objective, start, method='Nelder-Mead', bounds=[options.bounds] * dim,
                    options={'initial_simplex': np.vstack(simplex), 'xatol': 1e-6, 'fatol': 1e-10,
                             'maxiter': 600 * dim, 'maxfev': 800 * dim, 'adaptive': dim > 2})


def criterion_gradient(objective, rho: np.ndarray, options: FitOptions) -> np.ndarray:
    """Central finite-difference gradient; components sitting on a bound are reported as zero."""
    h = options.gradient_step
    lo, hi = options.bounds
    gradient = np.zeros(rho.size)
    for i in range(rho.size):
        if rho[i] - h < lo or rho[i] + h > hi:
            continue
        step = np.zeros(rho.size)
        step[i] = h
        gradient[i] = (objective(rho + step) - objective(rho - step)) / (2 * h)
    return gradient


def optimize_smoothness(M: ModelMatrices, family: Family, data: Dataset, criterion: str = REML,
                        options: Optional[FitOptions] = None, formula: str = '') -> FittedModel:
    """Select smoothing parameters by minimizing REML or GCV over ρ = log λ.

    Nelder–Mead runs from each start ρ = c·1 (c in ``options.starts``) shifted by a fixed-seed jitter and bounded
    to ``options.bounds``. The lowest criterion wins, ties going to the smaller ‖ρ‖; a polishing run follows and
    stationarity is confirmed by a central finite-difference gradient.

    Raises:
        OptimizationError: Every restart failed; carries the trace.
    """
    options = (options or FitOptions()).with_criterion(criterion)
    if not M.n_groups:
        raise OptimizationError('The model has no penalties; there is no smoothness to select')
    objective = _Objective(M, family, data, options)
    rng = np.random.default_rng(options.seed)
    dim = M.n_groups
    if options.initial_rho is not None:
        starts = [np.asarray(options.initial_rho, dtype=float)]
    else:
        starts = [np.full(dim, c) + rng.uniform(-options.start_jitter, options.start_jitter, dim)
                  for c in options.starts]

    trace: List[dict] = []
    best = None
    for restart, start in enumerate(starts):
        result = _nelder_mead(objective, start, options)
        rho = np.clip(result.x, *options.bounds)
        trace.append({'restart': restart, 'start': start.tolist(), 'rho': rho.tolist(), 'value': float(result.fun),
                      'evaluations': int(result.nfev), 'success': bool(result.success)})
        logger.info('%s restart %d: criterion %.10g after %d evaluations', options.criterion.upper(), restart,
                    result.fun, result.nfev)
        if not np.isfinite(result.fun):
            continue
        if best is None or result.fun < best[0] - 1e-10 or (
                abs(result.fun - best[0]) <= 1e-10 and np.linalg.norm(rho) < np.linalg.norm(best[1])):
            best = (float(result.fun), rho)
    if best is None:
        raise OptimizationError('Smoothness selection failed from every start', trace=trace)

    polished = _nelder_mead(objective, best[1], options, simplex_size=0.1)
    if np.isfinite(polished.fun) and polished.fun <= best[0]:
        best = (float(polished.fun), np.clip(polished.x, *options.bounds))
    trace.append({'restart': 'polish', 'rho': best[1].tolist(), 'value': best[0], 'evaluations': int(polished.nfev)})

    rho = best[1]
    gradient = criterion_gradient(objective, rho, options)
    trace.append({'gradient': gradient.tolist()})
    if np.max(np.abs(gradient), initial=0.0) >= options.gradient_tolerance:
        warn(f'{options.criterion.upper()} gradient at the optimum is {np.max(np.abs(gradient)):.3g}, above the '
             f'stationarity tolerance {options.gradient_tolerance}')
    inner = pirls_fit(M, family, np.exp(rho), data, options, objective.best_beta)
    value = objective(rho)
    return finalize_fit(M, family, np.exp(rho), inner, data, formula, options.criterion, value, trace)


def _fit_fixed_family(M: ModelMatrices, family: Family, data: Dataset, options: FitOptions,
                      formula: str) -> FittedModel:
    if M.n_groups:
        return optimize_smoothness(M, family, data, options.criterion, options, formula)
    inner = pirls_fit(M, family, (), data, options)
    if options.criterion == REML:
        value = reml_criterion(M, family, (), data, inner)
    else:
        value = gcv_criterion(M, family, (), data, inner)
    return finalize_fit(M, family, (), inner, data, formula, options.criterion, value)


def estimate_tweedie_power(M: ModelMatrices, family: TweedieFamily, data: Dataset,
                           options: Optional[FitOptions] = None, formula: str = '') -> FittedModel:
    """Profile the Tweedie power.

    Each p on ``options.power_grid`` is fitted with its own smoothness selection and scored by the series
    log-likelihood at the Pearson scale estimate; a bounded scalar search within ±0.05 of the best grid point then
    refines p to ``options.power_tolerance``.
    """
    options = options or FitOptions()
    fits: Dict[float, FittedModel] = {}
    warm: Dict[str, Optional[Tuple[float, ...]]] = {'rho': None}

    def fit_at(power: float) -> FittedModel:
        power = float(power)
        if power not in fits:
            fit_options = options if warm['rho'] is None else options.with_initial_rho(warm['rho'])
            fit = _fit_fixed_family(M, family.with_power(power, estimated=True), data, fit_options, formula)
            if M.n_groups:
                warm['rho'] = tuple(np.log(fit.lambdas))
            logger.info('Tweedie p=%.4f: log-likelihood %.10g', power, fit.log_likelihood)
            fits[power] = fit
        return fits[power]

    profile = []
    for power in options.power_grid:
        try:
            profile.append((fit_at(power).log_likelihood, power))
        except GAMError as e:
            logger.info('Tweedie p=%.4f could not be fitted: %s', power, e.message)
    if not profile:
        raise OptimizationError('No Tweedie power on the grid could be fitted')
    best_power = max(profile)[1]
    lower, upper = max(best_power - 0.05, 1.001), min(best_power + 0.05, 1.999)

    def negative_log_likelihood(power):
        try:
            return -fit_at(power).log_likelihood
        except GAMError:
            return np.inf

    minimize_scalar(negative_log_likelihood, bounds=(lower, upper), method='bounded',
                    options={'xatol': options.power_tolerance})
    # Every evaluation is cached, so the best power seen near the grid optimum is the estimate.
    chosen = max((fits[p].log_likelihood, p) for p in fits if lower <= p <= upper or p == best_power)[1]
    best = fit_at(chosen)
    profile_rows = [[power, log_likelihood] for log_likelihood, power in sorted(profile, key=lambda row: row[1])]
    return evolve(best, trace=(*best.trace, {'power_profile': profile_rows, 'power': chosen}))


def fit_model(model: Union[str, Sequence[Term]], data: Dataset, family: Family,
              options: Optional[FitOptions] = None) -> FittedModel:
    """Fit a GAM from a formula or a term list.

    Models without penalties (a GLM written as a GAM) are fitted by a single PIRLS. A Tweedie family without a
    power gets its power profiled.

    Examples:
        >>> fit = fit_model('y ~ s(x)', data, Gaussian)  # doctest: +SKIP
    """
    options = options or FitOptions()
    if isinstance(model, str):
        formula = parse(model, data)
        if formula.response is not None and formula.response != data.response_name:
            data = evolve(data, response_name=formula.response)
        terms, text = list(formula.terms), model
    else:
        terms = list(model)
        text = ' + '.join(term.label for term in terms)
        if data.response_name:
            text = f'{data.response_name} ~ {text}'
    M = assemble_design(terms, data)
    family.check_response(data.y)
    if isinstance(family, TweedieFamily) and family.power is None:
        return estimate_tweedie_power(M, family, data, options, text)
    return _fit_fixed_family(M, family, data, options, text)


__all__ = ['REML', 'GCV', 'FitOptions', 'InnerFit', 'FittedModel', 'PenaltyStructure', 'pirls_fit',
           'gcv_criterion', 'reml_criterion', 'optimize_smoothness', 'finalize_fit', 'estimate_tweedie_power',
           'fit_model', 'criterion_gradient']
