"""Poisson, negative binomial and zero-inflated count regressions

Parameters are packed as ``[beta, gamma, log_alpha]``: ``beta`` for the
log-link count mean, ``gamma`` for the logit-link excess-zero probability
(zip/zinb only) and ``log_alpha`` for the NB2 dispersion (negbin/zinb only),
with Var = mu + alpha * mu^2.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from logger import log_model_event
from survey_data import VARIABLE_ALIASES, SurveyDataset


logger = logging.getLogger(__name__)

FAMILIES = ('poisson', 'negbin', 'zip', 'zinb')
INFLATED = ('zip', 'zinb')
DISPERSED = ('negbin', 'zinb')

ETA_BOUND = 100.0
LOG_ALPHA_MIN = -15.0
LOG_ALPHA_MAX = 15.0
PI_BOUNDARY = 1e-10
FLAT_LOGLIK_RTOL = 1e-12

# Dummy-coding reference levels
REFERENCE_LEVELS = {
    'age_bracket': '18-24',
    'race': 'white',
    'gender': 'male',
    'ethnicity': 'non-hispanic',
    'shelter_status': 'housed',
}


class ModelError(Exception):
    """Raised for unfittable specifications or data"""
    pass


@dataclass
class ModelSpec:
    family: str
    conditional_terms: List[str] = field(default_factory=list)
    zero_terms: List[str] = field(default_factory=list)
    response: str = 'y'

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family '{self.family}'")
        if self.zero_terms and self.family not in INFLATED:
            raise ModelError(f"{self.family} has no zero-inflation component")

    @property
    def inflated(self) -> bool:
        return self.family in INFLATED

    @property
    def dispersed(self) -> bool:
        return self.family in DISPERSED

    def all_terms(self) -> List[str]:
        out = list(self.conditional_terms)
        out += [t for t in self.zero_terms if t not in out]
        return out

    def without(self, component: str, term: str) -> 'ModelSpec':
        if component == 'conditional':
            return replace(self, conditional_terms=[t for t in self.conditional_terms if t != term])
        return replace(self, zero_terms=[t for t in self.zero_terms if t != term])

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family, 'response': self.response,
                'conditional_terms': list(self.conditional_terms),
                'zero_terms': list(self.zero_terms)}


@dataclass
class FitOptions:
    tol: float = 1e-6
    max_iter: int = 500
    n_starts: int = 3
    rng_seed: int = 0

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> 'FitOptions':
        values = values or {}
        return cls(**{k: v for k, v in values.items() if k in cls.__dataclass_fields__})


@dataclass
class ModelData:
    """Design matrices for one spec over a fixed set of rows"""
    y: np.ndarray
    X: np.ndarray
    Z: Optional[np.ndarray]
    x_names: List[str]
    z_names: List[str]

    @property
    def n(self) -> int:
        return int(self.y.size)


@dataclass
class CountModelFit:
    spec: ModelSpec
    beta: np.ndarray
    gamma: np.ndarray
    log_alpha: Optional[float]
    loglik: float
    aic: float
    aicc: Optional[float]
    bic: float
    rmse: float
    n: int
    converged: bool
    iterations: int
    x_names: List[str] = field(default_factory=list)
    z_names: List[str] = field(default_factory=list)
    se: Optional[np.ndarray] = None
    at_boundary: bool = False

    @property
    def k(self) -> int:
        return n_params(self.spec, len(self.x_names), len(self.z_names))

    @property
    def params(self) -> np.ndarray:
        tail = [self.log_alpha] if self.log_alpha is not None else []
        return np.concatenate([self.beta, self.gamma, np.array(tail, dtype=float)])

    def coefficient_table(self) -> pd.DataFrame:
        """One row per parameter with Wald SE, z, two-sided p and stars"""
        names = ([('conditional', t) for t in self.x_names]
                 + [('zero', t) for t in self.z_names])
        if self.log_alpha is not None:
            names.append(('dispersion', 'log(alpha)'))
        se = self.se if self.se is not None else np.full(len(names), np.nan)
        rows = []
        for (component, term), estimate, s in zip(names, self.params, se):
            z = estimate / s if np.isfinite(s) and s > 0 else np.nan
            p = float(2 * stats.norm.sf(abs(z))) if np.isfinite(z) else np.nan
            rows.append({'component': component, 'term': term, 'estimate': float(estimate),
                         'se': float(s), 'z': float(z), 'p_value': p,
                         'stars': significance_stars(p)})
        return pd.DataFrame(rows, columns=['component', 'term', 'estimate', 'se', 'z',
                                           'p_value', 'stars'])

    def to_dict(self) -> Dict[str, Any]:
        table = self.coefficient_table()
        return {
            'spec': self.spec.to_dict(),
            'coefficients': [
                {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                 for k, v in row.items()}
                for row in table.to_dict(orient='records')
            ],
            'criteria': {'loglik': self.loglik, 'aic': self.aic, 'aicc': self.aicc,
                         'bic': self.bic, 'rmse': self.rmse, 'k': self.k, 'n': self.n},
            'converged': self.converged,
            'iterations': self.iterations,
            'at_boundary': self.at_boundary,
        }


def n_params(spec: ModelSpec, p: int, q: int) -> int:
    return p + (q if spec.inflated else 0) + (1 if spec.dispersed else 0)


def significance_stars(p: float) -> str:
    if p is None or not np.isfinite(p):
        return ''
    if p < 0.001:
        return '***'
    if p < 0.01:
        return '**'
    if p < 0.05:
        return '*'
    if p < 0.1:
        return '+'
    return ''


# --- design matrices -------------------------------------------------------

def _frame(data: Union[pd.DataFrame, SurveyDataset]) -> pd.DataFrame:
    if isinstance(data, SurveyDataset):
        return data.model_frame()
    return data


def _is_missing(value: Any) -> bool:
    return value is None or (isinstance(value, float) and np.isnan(value))


def _column(frame: pd.DataFrame, name: str) -> pd.Series:
    if name in frame.columns:
        return frame[name]
    alias = VARIABLE_ALIASES.get(name)
    if alias in frame.columns:
        return frame[alias]
    if '=' in name:
        attr, level = (s.strip() for s in name.split('=', 1))
        base = _column(frame, attr)
        if pd.api.types.is_numeric_dtype(base):
            token = level.lower()
            if token in ('true', 'yes'):
                target = 1.0
            elif token in ('false', 'no'):
                target = 0.0
            else:
                target = float(level)
            return base.where(base.isna(), (base == target).astype(float))
        return pd.Series([np.nan if _is_missing(v) else float(str(v) == level) for v in base],
                         index=frame.index, dtype=float)
    raise ModelError(f"unknown term '{name}'")


def complete_cases(frame: pd.DataFrame, response: str, terms: Sequence[str]) -> np.ndarray:
    """Boolean mask of rows with response and every term observed"""
    mask = _column(frame, response).notna().to_numpy()
    for term in terms:
        mask &= _column(frame, term).notna().to_numpy()
    return mask


def _design(frame: pd.DataFrame, terms: Sequence[str]) -> Tuple[np.ndarray, List[str]]:
    columns = [np.ones(len(frame))]
    names = ['(Intercept)']
    for term in terms:
        col = _column(frame, term)
        if pd.api.types.is_numeric_dtype(col):
            columns.append(col.to_numpy(dtype=float))
            names.append(term)
            continue
        values = col.astype(str).to_numpy()
        levels = sorted(set(values))
        reference = REFERENCE_LEVELS.get(VARIABLE_ALIASES.get(term, term))
        if reference not in levels:
            reference = levels[0]
        for level in levels:
            if level == reference:
                continue
            columns.append((values == level).astype(float))
            names.append(f"{term}[{level}]")
    return np.column_stack(columns), names


def build_model_data(spec: ModelSpec, data: Union[pd.DataFrame, SurveyDataset],
                     rows: Optional[np.ndarray] = None) -> ModelData:
    """Complete-case design matrices for ``spec``

    Args:
        spec: Model specification
        data: Model frame or survey dataset
        rows: Optional boolean row mask applied instead of the spec's own
            complete-case mask (used to keep candidates on identical data)
    """
    frame = _frame(data)
    if rows is None:
        rows = complete_cases(frame, spec.response, spec.all_terms())
    frame = frame.loc[rows]
    y = _column(frame, spec.response).to_numpy(dtype=float)
    if y.size and (np.any(y < 0) or np.any(y != np.floor(y))):
        raise ModelError(f"response '{spec.response}' must be nonnegative integers")
    X, x_names = _design(frame, spec.conditional_terms)
    Z, z_names = (None, [])
    if spec.inflated:
        Z, z_names = _design(frame, spec.zero_terms)
    for label, M in (('conditional', X), ('zero-inflation', Z)):
        if M is not None and M.shape[0] and np.linalg.matrix_rank(M) < M.shape[1]:
            raise ModelError(f"{label} design matrix is rank deficient")
    return ModelData(y=y, X=X, Z=Z, x_names=x_names, z_names=z_names)


# --- likelihood ------------------------------------------------------------

def _split(spec: ModelSpec, theta: np.ndarray, p: int, q: int):
    beta = theta[:p]
    gamma = theta[p:p + q] if spec.inflated else np.zeros(0)
    log_alpha = float(theta[-1]) if spec.dispersed else None
    return beta, gamma, log_alpha


def _evaluate(spec: ModelSpec, theta: np.ndarray, md: ModelData,
              want_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """Total log-likelihood and (optionally) its gradient"""
    p = md.X.shape[1]
    q = md.Z.shape[1] if md.Z is not None else 0
    beta, gamma, log_alpha = _split(spec, np.asarray(theta, dtype=float), p, q)
    y = md.y
    raw_eta = md.X @ beta
    eta = np.clip(raw_eta, -ETA_BOUND, ETA_BOUND)
    mu = np.exp(eta)

    if spec.dispersed:
        a = min(max(log_alpha, LOG_ALPHA_MIN), LOG_ALPHA_MAX)
        log_r = -a
        r = np.exp(log_r)
        log_r_mu = np.logaddexp(log_r, eta)
        log_p0 = r * (log_r - log_r_mu)
        ll_count = (special.gammaln(y + r) - special.gammaln(r) - special.gammaln(y + 1)
                    + log_p0 + y * (eta - log_r_mu))
        d_eta = (y - mu) / (1.0 + np.exp(a) * mu)
        d_a = -r * (special.digamma(y + r) - special.digamma(r) + log_r - log_r_mu
                    + (mu - y) / (r + mu))
    else:
        log_p0 = -mu
        ll_count = y * eta - mu - special.gammaln(y + 1)
        d_eta = y - mu
        d_a = None

    if spec.inflated:
        zeta = md.Z @ gamma
        log_pi = special.log_expit(zeta)
        log_1m_pi = special.log_expit(-zeta)
        zero = y == 0
        ll = np.where(zero, np.logaddexp(log_pi, log_1m_pi + log_p0), log_1m_pi + ll_count)
        w_inf = np.where(zero, np.exp(log_pi - ll), 0.0)
        scale = np.where(zero, 1.0 - w_inf, 1.0)
        d_zeta = w_inf - np.exp(log_pi)
    else:
        ll = ll_count
        scale = 1.0
        d_zeta = None

    total = float(np.sum(ll))
    if not want_grad:
        return total, None

    inside = (raw_eta > -ETA_BOUND) & (raw_eta < ETA_BOUND)
    parts = [md.X.T @ (scale * d_eta * inside)]
    if spec.inflated:
        parts.append(md.Z.T @ d_zeta)
    if spec.dispersed:
        g_a = float(np.sum(scale * d_a))
        if not LOG_ALPHA_MIN < log_alpha < LOG_ALPHA_MAX:
            g_a = 0.0
        parts.append(np.array([g_a]))
    return total, np.concatenate(parts)


def loglik(spec: ModelSpec, params: np.ndarray, data: Union[ModelData, pd.DataFrame, SurveyDataset]) -> float:
    """Exact log-likelihood of ``params`` (packed beta, gamma, log_alpha)"""
    md = data if isinstance(data, ModelData) else build_model_data(spec, data)
    expected = n_params(spec, md.X.shape[1], md.Z.shape[1] if md.Z is not None else 0)
    if len(params) != expected:
        raise ModelError(f"expected {expected} parameters, got {len(params)}")
    value, _ = _evaluate(spec, params, md, want_grad=False)
    if not np.isfinite(value):
        raise ModelError("log-likelihood is not finite")
    return value


def loglik_gradient(spec: ModelSpec, params: np.ndarray, md: ModelData) -> np.ndarray:
    return _evaluate(spec, params, md)[1]


def _numerical_hessian(spec: ModelSpec, theta: np.ndarray, md: ModelData) -> np.ndarray:
    k = theta.size
    H = np.zeros((k, k))
    for j in range(k):
        h = 1e-5 * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        H[:, j] = (loglik_gradient(spec, up, md) - loglik_gradient(spec, down, md)) / (2 * h)
    return 0.5 * (H + H.T)


# --- fitting ---------------------------------------------------------------

def _poisson_irls(X: np.ndarray, y: np.ndarray, max_iter: int = 25) -> np.ndarray:
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(y.mean() + 0.1)
    for _ in range(max_iter):
        eta = np.clip(X @ beta, -30, 30)
        mu = np.exp(eta)
        z = eta + (y - mu) / mu
        w = np.sqrt(mu)
        new, *_ = np.linalg.lstsq(X * w[:, None], z * w, rcond=None)
        if np.max(np.abs(new - beta)) < 1e-8:
            beta = new
            break
        beta = new
    return beta


def _initial_params(spec: ModelSpec, md: ModelData) -> np.ndarray:
    y = md.y
    beta = _poisson_irls(md.X, y)
    mu = np.exp(np.clip(md.X @ beta, -30, 30))
    parts = [beta]
    if spec.inflated:
        observed = np.mean(y == 0)
        expected = np.mean(np.exp(-mu))
        excess = 0.5 if expected >= 1 - 1e-12 else (observed - expected) / (1 - expected)
        gamma = np.zeros(md.Z.shape[1])
        gamma[0] = special.logit(np.clip(excess, 0.01, 0.99))
        parts.append(gamma)
    if spec.dispersed:
        denom = np.sum(mu ** 2)
        alpha = np.sum((y - mu) ** 2 - mu) / denom if denom > 0 else 0.1
        parts.append(np.array([np.log(np.clip(alpha, 1e-3, 100.0))]))
    return np.concatenate(parts)


class CountModelFitter:
    """Maximum-likelihood fitter: restarts + BFGS, then Newton polishing"""

    def __init__(self, opts: Optional[FitOptions] = None):
        self.opts = opts or FitOptions()
        self.logger = logging.getLogger(__name__)

        self.stats = {
            'fits': 0,
            'non_converged': 0,
        }

    def fit(self, spec: ModelSpec, data: Union[ModelData, pd.DataFrame, SurveyDataset]) -> CountModelFit:
        md = data if isinstance(data, ModelData) else build_model_data(spec, data)
        p = md.X.shape[1]
        q = md.Z.shape[1] if md.Z is not None else 0
        k = n_params(spec, p, q)
        if md.n <= k:
            raise ModelError(f"{md.n} complete cases for {k} parameters")

        def neg(theta):
            value, grad = _evaluate(spec, theta, md)
            return -value, -grad

        rng = np.random.default_rng(self.opts.rng_seed)
        start = _initial_params(spec, md)
        starts = [start] + [start + rng.normal(0.0, 0.25, size=start.size)
                            for _ in range(max(self.opts.n_starts, 1) - 1)]

        best_theta, best_value, iterations = None, -np.inf, 0
        for x0 in starts:
            with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
                result = optimize.minimize(neg, x0, jac=True, method='BFGS',
                                           options={'gtol': self.opts.tol,
                                                    'maxiter': self.opts.max_iter})
            iterations += int(result.nit)
            value = -float(result.fun)
            if np.isfinite(value) and value > best_value:
                best_theta, best_value = np.asarray(result.x, dtype=float), value
        if best_theta is None:
            raise ModelError("log-likelihood is not finite at any start")

        theta, polish_steps = self._polish(spec, md, best_theta)
        iterations += polish_steps
        value, grad = _evaluate(spec, theta, md)
        converged = bool(np.max(np.abs(grad)) < self.opts.tol)

        H = _numerical_hessian(spec, theta, md)
        se = np.full(k, np.nan)
        try:
            cov = np.linalg.inv(-H)
            diag = np.diag(cov)
            se = np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
        except np.linalg.LinAlgError:
            pass

        beta, gamma, log_alpha = _split(spec, theta, p, q)
        at_boundary = bool(np.any(np.abs(md.X @ beta) >= ETA_BOUND))
        if spec.inflated:
            pi = special.expit(md.Z @ gamma)
            at_boundary |= bool(np.any(pi < PI_BOUNDARY) or np.any(pi > 1 - PI_BOUNDARY))
        if log_alpha is not None:
            at_boundary |= not LOG_ALPHA_MIN < log_alpha < LOG_ALPHA_MAX

        aic, aicc, bic = criteria_from_loglik(value, k, md.n)
        result = CountModelFit(
            spec=spec, beta=beta.copy(), gamma=gamma.copy(), log_alpha=log_alpha,
            loglik=value, aic=aic, aicc=aicc, bic=bic, rmse=0.0, n=md.n,
            converged=converged, iterations=iterations,
            x_names=list(md.x_names), z_names=list(md.z_names), se=se,
            at_boundary=at_boundary,
        )
        result.rmse = rmse(result, md)

        self.stats['fits'] += 1
        if not converged:
            self.stats['non_converged'] += 1
            log_model_event(self.logger, f"{spec.family} fit did not converge "
                                         f"(max |grad| {np.max(np.abs(grad)):.2e})", "warning")
        else:
            log_model_event(self.logger, f"{spec.family} converged: loglik {value:.3f}, "
                                         f"AICc {aicc if aicc is not None else float('nan'):.3f}",
                            "debug")
        return result

    def _polish(self, spec: ModelSpec, md: ModelData, theta: np.ndarray,
                max_steps: int = 50) -> Tuple[np.ndarray, int]:
        """Newton steps with backtracking until the gradient max-norm < tol

        Near the optimum the log-likelihood is flat to rounding, so a step
        within ``FLAT_LOGLIK_RTOL * |ll|`` of the current value is accepted
        when it shrinks the gradient.
        """
        value, grad = _evaluate(spec, theta, md)
        steps = 0
        while steps < max_steps and np.max(np.abs(grad)) >= self.opts.tol:
            steps += 1
            H = _numerical_hessian(spec, theta, md)
            try:
                np.linalg.cholesky(-H)
                direction = np.linalg.solve(-H, grad)
            except np.linalg.LinAlgError:
                direction = grad / max(1.0, np.linalg.norm(grad))
            floor = value - FLAT_LOGLIK_RTOL * max(1.0, abs(value))
            grad_norm = np.max(np.abs(grad))
            t = 1.0
            while t > 1e-10:
                candidate = theta + t * direction
                new_value, new_grad = _evaluate(spec, candidate, md)
                if new_value > value or (new_value >= floor
                                         and np.max(np.abs(new_grad)) < grad_norm):
                    break
                t *= 0.5
            else:
                break
            theta, value, grad = candidate, new_value, new_grad
        return theta, steps

    def get_stats(self) -> Dict[str, int]:
        return self.stats.copy()


def fit(spec: ModelSpec, data: Union[ModelData, pd.DataFrame, SurveyDataset],
        opts: Optional[Union[FitOptions, Dict[str, Any]]] = None) -> CountModelFit:
    """Fit one count model (see CountModelFitter)"""
    if isinstance(opts, dict) or opts is None:
        opts = FitOptions.from_dict(opts)
    return CountModelFitter(opts).fit(spec, data)


# --- criteria and diagnostics ----------------------------------------------

def criteria_from_loglik(loglik_value: float, k: int, n: int) -> Tuple[float, Optional[float], float]:
    """(aic, aicc, bic); aicc is None when n <= k + 1"""
    aic = -2.0 * loglik_value + 2.0 * k
    aicc = aic + 2.0 * k * (k + 1) / (n - k - 1) if n - k - 1 > 0 else None
    bic = -2.0 * loglik_value + k * np.log(n)
    return aic, aicc, bic


def information_criteria(fit_result: CountModelFit) -> Tuple[float, Optional[float], float]:
    if not np.isfinite(fit_result.loglik):
        raise ModelError("information criteria need a finite log-likelihood")
    return criteria_from_loglik(fit_result.loglik, fit_result.k, fit_result.n)


def predict_components(fit_result: CountModelFit, md: ModelData) -> Tuple[np.ndarray, np.ndarray]:
    """Fitted count means and excess-zero probabilities per row"""
    mu = np.exp(np.clip(md.X @ fit_result.beta, -ETA_BOUND, ETA_BOUND))
    if fit_result.spec.inflated:
        pi = special.expit(md.Z @ fit_result.gamma)
    else:
        pi = np.zeros_like(mu)
    return mu, pi


def _data_for(fit_result: CountModelFit, data) -> ModelData:
    return data if isinstance(data, ModelData) else build_model_data(fit_result.spec, data)


def rmse(fit_result: CountModelFit, data) -> float:
    """Root-mean-square error of y against (1 - pi) * mu"""
    md = _data_for(fit_result, data)
    mu, pi = predict_components(fit_result, md)
    return float(np.sqrt(np.mean((md.y - (1.0 - pi) * mu) ** 2))) if md.n else 0.0


def predict_pmf(fit_result: CountModelFit, data, y_max: int) -> np.ndarray:
    """(n, y_max + 1) array of fitted probabilities P(Y_i = y)"""
    md = _data_for(fit_result, data)
    mu, pi = predict_components(fit_result, md)
    support = np.arange(y_max + 1)
    if fit_result.spec.dispersed:
        r = np.exp(-fit_result.log_alpha)
        pmf = stats.nbinom.pmf(support[None, :], r, (r / (r + mu))[:, None])
    else:
        pmf = stats.poisson.pmf(support[None, :], mu[:, None])
    pmf = (1.0 - pi)[:, None] * pmf
    pmf[:, 0] += pi
    return pmf


def frequency_diagnostic(fit_result: CountModelFit, data, max_count: Optional[int] = None) -> pd.DataFrame:
    """Observed vs expected frequencies of each count value"""
    md = _data_for(fit_result, data)
    top = int(max_count if max_count is not None else min(md.y.max() if md.n else 0, 50))
    pmf = predict_pmf(fit_result, md, top)
    observed = np.bincount(np.minimum(md.y.astype(int), top + 1), minlength=top + 2)[:top + 1]
    return pd.DataFrame({'count': np.arange(top + 1), 'observed': observed,
                         'expected': pmf.sum(axis=0)})


def simulate_response(spec: ModelSpec, X: np.ndarray, Z: Optional[np.ndarray],
                      beta: np.ndarray, gamma: Optional[np.ndarray],
                      log_alpha: Optional[float], rng: np.random.Generator) -> np.ndarray:
    """Draw counts from a fully specified model"""
    mu = np.exp(X @ beta)
    if spec.dispersed:
        r = np.exp(-log_alpha)
        y = rng.negative_binomial(r, r / (r + mu))
    else:
        y = rng.poisson(mu)
    if spec.inflated:
        excess = rng.random(len(y)) < special.expit(Z @ gamma)
        y = np.where(excess, 0, y)
    return y.astype(float)


# --- selection --------------------------------------------------------------

@dataclass
class SelectionStep:
    step: int
    component: str
    term: str
    criterion: Optional[float]
    converged: bool
    accepted: bool = False


def _criterion_value(fit_result: CountModelFit, criterion: str) -> float:
    value = getattr(fit_result, criterion)
    if value is None or not fit_result.converged:
        return np.inf
    return float(value)


def stepwise_backward(full_spec: ModelSpec, data: Union[pd.DataFrame, SurveyDataset],
                      criterion: str = 'aicc',
                      opts: Optional[Union[FitOptions, Dict[str, Any]]] = None
                      ) -> Tuple[CountModelFit, List[SelectionStep]]:
    """Backward elimination by information criterion

    Every step evaluates dropping each remaining conditional term, then each
    zero-inflation term, and removes the one that lowers the criterion most.
    All candidates use the complete cases of the full specification.

    Returns:
        (selected fit, trace of every candidate evaluation)
    """
    if criterion not in ('aicc', 'aic', 'bic'):
        raise ModelError(f"unknown criterion '{criterion}'")
    frame = _frame(data)
    rows = complete_cases(frame, full_spec.response, full_spec.all_terms())
    current_spec = full_spec
    current = fit(current_spec, build_model_data(current_spec, frame, rows), opts)
    trace: List[SelectionStep] = []
    step = 0
    while True:
        candidates = ([('conditional', t) for t in current_spec.conditional_terms]
                      + [('zero', t) for t in current_spec.zero_terms])
        if not candidates:
            break
        step += 1
        best = None
        for component, term in candidates:
            spec = current_spec.without(component, term)
            try:
                candidate = fit(spec, build_model_data(spec, frame, rows), opts)
                record = SelectionStep(step, component, term,
                                       getattr(candidate, criterion), candidate.converged)
            except ModelError:
                candidate = None
                record = SelectionStep(step, component, term, None, False)
            trace.append(record)
            if candidate is not None:
                value = _criterion_value(candidate, criterion)
                if best is None or value < best[0]:
                    best = (value, spec, candidate, record)
        if best is None or not best[0] < _criterion_value(current, criterion):
            break
        _, current_spec, current, record = best
        record.accepted = True
        log_model_event(logger, f"Dropped {record.component} term '{record.term}' "
                                f"({criterion} {best[0]:.3f})", "debug")
    return current, trace


def trace_frame(trace: List[SelectionStep]) -> pd.DataFrame:
    return pd.DataFrame([vars(s) for s in trace],
                        columns=['step', 'component', 'term', 'criterion', 'converged', 'accepted'])


def candidate_specs(response: str, conditional_terms: Sequence[str],
                    zero_terms: Optional[Sequence[str]] = None) -> List[ModelSpec]:
    """The four family variants of one term list"""
    zero = list(conditional_terms if zero_terms is None else zero_terms)
    return [
        ModelSpec('poisson', list(conditional_terms), [], response),
        ModelSpec('negbin', list(conditional_terms), [], response),
        ModelSpec('zip', list(conditional_terms), zero, response),
        ModelSpec('zinb', list(conditional_terms), zero, response),
    ]


def family_selection(data: Union[pd.DataFrame, SurveyDataset], candidates: Sequence[ModelSpec],
                     opts: Optional[Union[FitOptions, Dict[str, Any]]] = None,
                     threads: int = 1) -> pd.DataFrame:
    """Fit every candidate on shared complete cases and rank by AICc

    Non-converged or failed candidates keep their row with absent criteria
    and are ranked last.
    """
    if len(candidates) < 2:
        raise ModelError("family selection needs at least two candidates")
    frame = _frame(data)
    terms: List[str] = []
    for spec in candidates:
        terms += [t for t in spec.all_terms() if t not in terms]
    rows = complete_cases(frame, candidates[0].response, terms)

    def run(spec: ModelSpec) -> Optional[CountModelFit]:
        try:
            return fit(spec, build_model_data(spec, frame, rows), opts)
        except ModelError as e:
            log_model_event(logger, f"{spec.family} failed: {e}", "warning")
            return None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        fits = list(pool.map(run, candidates))
    if all(f is None for f in fits):
        raise ModelError("every candidate model failed to fit")

    table = []
    for order, (spec, result) in enumerate(zip(candidates, fits)):
        usable = result is not None and result.converged
        table.append({
            'family': spec.family,
            'loglik': result.loglik if usable else None,
            'k': result.k if result is not None else None,
            'aicc': result.aicc if usable else None,
            'aic': result.aic if usable else None,
            'bic': result.bic if usable else None,
            'rmse': result.rmse if usable else None,
            'converged': bool(result.converged) if result is not None else False,
            'n': result.n if result is not None else int(rows.sum()),
            '_order': order,
        })
    ranked = sorted(table, key=lambda row: (row['aicc'] is None,
                                            row['aicc'] if row['aicc'] is not None else 0.0,
                                            row['_order']))
    for rank, row in enumerate(ranked, start=1):
        row['rank'] = rank
        del row['_order']
    return pd.DataFrame(ranked, columns=['rank', 'family', 'loglik', 'k', 'aicc', 'aic',
                                         'bic', 'rmse', 'converged', 'n'])


def render_regression_table(fit_result: CountModelFit) -> str:
    """Aligned text table: count panel, zero-inflation panel, fit statistics"""
    table = fit_result.coefficient_table()
    width = max([len(t) for t in table['term']] + [20]) + 2
    lines = [f"{fit_result.spec.family.upper()} model for {fit_result.spec.response}",
             f"{'':{width}}{'Estimate':>12}{'S.E.':>12}  "]

    def panel(title, component):
        block = table[table['component'] == component]
        if block.empty:
            return
        lines.append(title)
        for row in block.itertuples():
            se = f"{row.se:12.4f}" if np.isfinite(row.se) else f"{'---':>12}"
            lines.append(f"  {row.term:{width - 2}}{row.estimate:12.4f}{se}  {row.stars}")

    panel('Count model (log link)', 'conditional')
    panel('Zero-inflation model (logit link)', 'zero')
    panel('Dispersion', 'dispersion')
    lines.append('Goodness of fit')
    for label, value in (('AICc', fit_result.aicc), ('AIC', fit_result.aic),
                         ('BIC', fit_result.bic), ('RMSE', fit_result.rmse),
                         ('Log-likelihood', fit_result.loglik)):
        text = f"{value:12.2f}" if value is not None else f"{'---':>12}"
        lines.append(f"  {label:{width - 2}}{text}")
    lines.append(f"  {'N':{width - 2}}{fit_result.n:12d}")
    lines.append("Significance: + p<.1, * p<.05, ** p<.01, *** p<.001")
    return "\n".join(lines)
