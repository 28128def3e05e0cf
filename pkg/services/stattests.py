"""
Statistical Tests Service
OLS, augmented Dickey-Fuller, Jarque-Bera and partial-correlation tests shared
across the pipeline.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats
from statsmodels.tsa.adfvalues import mackinnoncrit, mackinnonp

from services.errors import RankDeficientError, StatTestError

logger = logging.getLogger(__name__)

ADF_SPECS = ('nc', 'c', 'ct', 'ctt')

# statsmodels names the no-constant case 'n'
_MACKINNON_REGRESSION = {'nc': 'n', 'c': 'c', 'ct': 'ct', 'ctt': 'ctt'}
_TREND_TERMS = {'nc': 0, 'c': 1, 'ct': 2, 'ctt': 3}


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    standard_errors: np.ndarray
    t_values: np.ndarray
    dof: int

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)

    @property
    def nobs(self) -> int:
        return int(len(self.residuals))


@dataclass(frozen=True)
class AdfResult:
    spec: str
    test_statistic: float
    p_value: float
    lags_used: int
    nobs: int
    critical_values: Dict[str, float]

    def to_document(self) -> Dict:
        return {
            'spec': self.spec,
            'test_statistic': self.test_statistic,
            'p_value': self.p_value,
            'lags_used': self.lags_used,
            'nobs': self.nobs,
            'critical_values': dict(self.critical_values),
        }


@dataclass(frozen=True)
class AdfTable:
    """All four ADF specifications for every variable of a dataset."""

    alpha: float
    results: Dict[str, Dict[str, AdfResult]]

    @property
    def nonstationary(self) -> List[str]:
        """Variables whose unit-root null survives under every specification."""
        return [name for name, by_spec in self.results.items()
                if all(r.p_value > self.alpha for r in by_spec.values())]

    def to_document(self) -> Dict:
        return {
            'alpha': self.alpha,
            'p_values': {name: {spec: r.p_value for spec, r in by_spec.items()}
                         for name, by_spec in self.results.items()},
            'results': {name: {spec: r.to_document() for spec, r in by_spec.items()}
                        for name, by_spec in self.results.items()},
            'nonstationary': self.nonstationary,
        }


@dataclass(frozen=True)
class NormalityResult:
    skewness: float
    kurtosis: float
    jb_statistic: float
    p_value: float
    nobs: int

    def to_document(self) -> Dict:
        return {'skewness': self.skewness, 'kurtosis': self.kurtosis,
                'jb_statistic': self.jb_statistic, 'p_value': self.p_value}


@dataclass(frozen=True)
class JarqueBeraResult:
    columns: Tuple[NormalityResult, ...]
    aggregate_statistic: float
    aggregate_p_value: float
    aggregate_dof: int

    def to_document(self, names: Optional[List[str]] = None) -> Dict:
        names = names or [f"x{i}" for i in range(len(self.columns))]
        return {
            'columns': {name: col.to_document() for name, col in zip(names, self.columns)},
            'aggregate': {'jb_statistic': self.aggregate_statistic,
                          'p_value': self.aggregate_p_value,
                          'dof': self.aggregate_dof},
        }


@dataclass(frozen=True)
class CiResult:
    """Outcome of a conditional independence test; `independent` is None when undetermined."""

    statistic: float
    p_value: float
    independent: Optional[bool]
    t_value: float = float('nan')
    dof: int = 0


def ols(y: np.ndarray, X: np.ndarray) -> OlsFit:
    """
    Ordinary least squares.

    Args:
        y: response vector of length T
        X: T x k design matrix with full column rank and T > k

    Returns:
        OlsFit with coefficients, residuals, standard errors and t-values
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, k = X.shape
    if n != len(y):
        raise StatTestError(f"design has {n} rows but response has {len(y)}")
    if n <= k:
        raise StatTestError(f"need more observations ({n}) than regressors ({k})")
    if k and np.linalg.matrix_rank(X) < k:
        raise RankDeficientError(f"design matrix is rank deficient ({k} columns)")

    coefficients, *_ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ coefficients
    dof = n - k
    sigma2 = float(residuals @ residuals) / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    standard_errors = np.sqrt(np.clip(np.diag(xtx_inv) * sigma2, 0.0, None))
    with np.errstate(divide='ignore', invalid='ignore'):
        t_values = coefficients / standard_errors
    return OlsFit(coefficients, residuals, standard_errors, t_values, dof)


def _adf_design(y: np.ndarray, lags: int, start: int, spec: str) -> Tuple[np.ndarray, np.ndarray]:
    """Rows t = start..T-1: Δy_t on y_{t-1}, Δy_{t-1..t-lags} and deterministic terms."""
    ts = np.arange(start, len(y))
    target = y[ts] - y[ts - 1]
    columns = [y[ts - 1]]
    for j in range(1, lags + 1):
        columns.append(y[ts - j] - y[ts - j - 1])
    nobs = len(ts)
    trend = np.arange(1, nobs + 1) / nobs
    if spec != 'nc':
        columns.append(np.ones(nobs))
    if spec in ('ct', 'ctt'):
        columns.append(trend)
    if spec == 'ctt':
        columns.append(trend ** 2)
    return target, np.column_stack(columns)


def default_adf_max_lag(T: int) -> int:
    return int(np.floor(12.0 * (T / 100.0) ** 0.25))


def adf_test(y: np.ndarray, spec: str = 'c', max_lag: Optional[int] = None) -> AdfResult:
    """
    Augmented Dickey-Fuller unit-root test.

    The lag order is chosen by AIC over 0..max_lag on a common sample, then the
    regression is re-estimated on the largest sample for that lag. P-values and
    critical values come from MacKinnon's response surfaces.

    Args:
        y: series in levels
        spec: deterministic terms, one of nc, c, ct, ctt
        max_lag: largest lag searched; default floor(12 * (T/100)^(1/4))

    Returns:
        AdfResult
    """
    if spec not in ADF_SPECS:
        raise StatTestError(f"unknown ADF specification '{spec}', expected one of {ADF_SPECS}")
    y = np.asarray(y, dtype=float).ravel()
    T = len(y)
    if T == 0 or np.ptp(y) == 0:
        raise StatTestError("ADF test on a constant series")
    if max_lag is None:
        max_lag = max(0, min(default_adf_max_lag(T), T // 2 - _TREND_TERMS[spec] - 1))
    if max_lag < 0:
        raise StatTestError(f"max_lag must be >= 0, got {max_lag}")
    if T < max_lag + 10:
        raise StatTestError(f"series too short for ADF: {T} observations, {max_lag} lags")

    best_lag, best_aic = 0, np.inf
    for lags in range(max_lag + 1):
        target, design = _adf_design(y, lags, max_lag + 1, spec)
        fit = ols(target, design)
        aic = fit.nobs * np.log(fit.rss / fit.nobs) + 2 * design.shape[1]
        if aic < best_aic:
            best_lag, best_aic = lags, aic

    target, design = _adf_design(y, best_lag, best_lag + 1, spec)
    fit = ols(target, design)
    statistic = float(fit.t_values[0])
    regression = _MACKINNON_REGRESSION[spec]
    p_value = float(mackinnonp(statistic, regression=regression, N=1))
    crit = mackinnoncrit(N=1, regression=regression, nobs=fit.nobs)
    logger.debug(f"ADF[{spec}] stat={statistic:.4f} p={p_value:.4g} lags={best_lag}")
    return AdfResult(
        spec=spec,
        test_statistic=statistic,
        p_value=p_value,
        lags_used=best_lag,
        nobs=fit.nobs,
        critical_values={'1%': float(crit[0]), '5%': float(crit[1]), '10%': float(crit[2])},
    )


def adf_table(ds, alpha: float = 0.05, max_lag: Optional[int] = None) -> AdfTable:
    """Run every ADF specification on every column of a TimeSeriesDataset."""
    results = {}
    for j, name in enumerate(ds.variable_names):
        results[name] = {spec: adf_test(ds.values[:, j], spec, max_lag) for spec in ADF_SPECS}
    table = AdfTable(alpha=alpha, results=results)
    logger.info(f"ADF: {len(table.nonstationary)} of {ds.n_vars} variables nonstationary at {alpha}")
    return table


def _normality(x: np.ndarray) -> NormalityResult:
    n = len(x)
    xc = x - x.mean()
    m2 = float(np.mean(xc ** 2))
    if not m2 > 0:
        raise StatTestError("Jarque-Bera on a constant column")
    skewness = float(np.mean(xc ** 3) / m2 ** 1.5)
    kurtosis = float(np.mean(xc ** 4) / m2 ** 2)
    jb = n / 6.0 * (skewness ** 2 + (kurtosis - 3.0) ** 2 / 4.0)
    return NormalityResult(skewness, kurtosis, jb, float(stats.chi2.sf(jb, 2)), n)


def jarque_bera(residuals: np.ndarray) -> JarqueBeraResult:
    """
    Component-wise Jarque-Bera normality test with a summed aggregate.

    Args:
        residuals: T x n matrix (a vector is treated as one column)

    Returns:
        JarqueBeraResult; the aggregate is referred to chi-square(2n)
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim == 1:
        residuals = residuals.reshape(-1, 1)
    if residuals.shape[0] < 8:
        raise StatTestError(f"Jarque-Bera needs at least 8 observations, got {residuals.shape[0]}")
    columns = tuple(_normality(residuals[:, j]) for j in range(residuals.shape[1]))
    aggregate = float(sum(c.jb_statistic for c in columns))
    dof = 2 * len(columns)
    return JarqueBeraResult(columns, aggregate, float(stats.chi2.sf(aggregate, dof)), dof)


def partial_correlation_test(x: np.ndarray, y: np.ndarray, Z: Optional[np.ndarray] = None,
                             alpha: float = 0.05) -> CiResult:
    """
    Linear conditional independence test of x and y given Z.

    Both variables are residualized on Z (with intercept); the statistic is the
    Pearson correlation of the residuals, tested with a Student-t on
    T - 2 - |Z| degrees of freedom.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    T = len(x)
    if Z is None:
        Z = np.empty((T, 0))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    k = Z.shape[1]
    if T < k + 3:
        raise StatTestError(f"need at least {k + 3} observations for {k} conditions, got {T}")
    dof = T - 2 - k

    design = np.column_stack([np.ones(T), Z])
    try:
        rx = ols(x, design).residuals
        ry = ols(y, design).residuals
    except RankDeficientError:
        logger.debug("Degenerate conditioning set; dependence undetermined")
        return CiResult(float('nan'), float('nan'), None, dof=dof)

    sx = np.sqrt(rx @ rx)
    sy = np.sqrt(ry @ ry)
    if sx <= 1e-12 * max(1.0, np.sqrt(x @ x)) or sy <= 1e-12 * max(1.0, np.sqrt(y @ y)):
        logger.debug("Degenerate residual variance; dependence undetermined")
        return CiResult(float('nan'), float('nan'), None, dof=dof)

    r = float(np.clip((rx @ ry) / (sx * sy), -1.0, 1.0))
    if abs(r) >= 1.0:
        return CiResult(r, 0.0, False, t_value=float(np.copysign(np.inf, r)), dof=dof)
    t_value = r * np.sqrt(dof / (1.0 - r * r))
    p_value = float(2.0 * stats.t.sf(abs(t_value), dof))
    return CiResult(r, p_value, p_value > alpha, t_value=float(t_value), dof=dof)


def monte_carlo_rejection_rate(simulate: Callable[[np.random.Generator], np.ndarray],
                               p_value: Callable[[np.ndarray], float],
                               n_sims: int, alpha: float = 0.05, seed: int = 0,
                               workers: int = 1) -> float:
    """
    Fraction of simulated samples whose test p-value falls below alpha.

    Each simulation draws from its own generator spawned from `seed`, so the
    result does not depend on the number of workers.
    """
    if n_sims < 1:
        raise StatTestError("n_sims must be positive")
    streams = np.random.SeedSequence(seed).spawn(n_sims)

    def one(stream):
        return p_value(simulate(np.random.default_rng(stream))) < alpha

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rejections = list(pool.map(one, streams))
    else:
        rejections = [one(s) for s in streams]
    return float(np.mean(rejections))
