"""
VAR Service
Vector autoregression estimation, information-criterion order selection and
residual extraction for VAR-LiNGAM.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import stats

from services.dataset import TimeSeriesDataset
from services.errors import RankDeficientError, VarModelError
from services.stattests import ols

logger = logging.getLogger(__name__)

CRITERIA = ('aic', 'bic', 'hqic')


@dataclass(frozen=True, eq=False)
class VarModel:
    """
    Fitted VAR(p). coefficients[tau - 1][i, j] is the effect of x_j(t - tau)
    on x_i(t).
    """

    order: int
    coefficients: np.ndarray
    intercept: np.ndarray
    residuals: np.ndarray
    residual_covariance: np.ndarray
    standard_errors: np.ndarray
    intercept_standard_errors: np.ndarray
    dof: int
    variable_names: Tuple[str, ...]

    @property
    def n_vars(self) -> int:
        return len(self.variable_names)

    @property
    def t_values(self) -> np.ndarray:
        with np.errstate(divide='ignore', invalid='ignore'):
            return self.coefficients / self.standard_errors

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * stats.t.sf(np.abs(self.t_values), self.dof)

    def fitted(self, ds: TimeSeriesDataset) -> np.ndarray:
        """One-step fitted values for rows p..T-1 of ds."""
        p = self.order
        x = ds.values
        out = np.tile(self.intercept, (ds.n_obs - p, 1))
        for tau in range(1, p + 1):
            out += x[p - tau:ds.n_obs - tau] @ self.coefficients[tau - 1].T
        return out

    def to_document(self) -> Dict:
        names = list(self.variable_names)
        lags = []
        for tau in range(1, self.order + 1):
            m = self.coefficients[tau - 1]
            se = self.standard_errors[tau - 1]
            pv = self.p_values[tau - 1]
            lags.append({
                'lag': tau,
                'coefficients': {names[i]: {names[j]: float(m[i, j]) for j in range(len(names))}
                                 for i in range(len(names))},
                'standard_errors': {names[i]: {names[j]: float(se[i, j]) for j in range(len(names))}
                                    for i in range(len(names))},
                'p_values': {names[i]: {names[j]: float(pv[i, j]) for j in range(len(names))}
                             for i in range(len(names))},
            })
        return {
            'order': self.order,
            'variables': names,
            'intercept': {n: float(v) for n, v in zip(names, self.intercept)},
            'lags': lags,
            'residual_covariance': self.residual_covariance.tolist(),
        }


@dataclass(frozen=True)
class OrderSelection:
    table: Tuple[Dict[str, float], ...]
    selected: Dict[str, int]
    nobs: int

    def chosen(self, criterion: str) -> int:
        if criterion not in self.selected:
            raise VarModelError(f"unknown criterion '{criterion}', expected one of {CRITERIA}")
        return self.selected[criterion]

    def to_document(self) -> Dict:
        return {'table': [dict(row) for row in self.table],
                'selected': dict(self.selected), 'nobs': self.nobs}


def lag_design(values: np.ndarray, p: int, start: int) -> np.ndarray:
    """Rows t = start..T-1 of [1, x(t-1), ..., x(t-p)]."""
    T = values.shape[0]
    blocks = [np.ones((T - start, 1))]
    for tau in range(1, p + 1):
        blocks.append(values[start - tau:T - tau])
    return np.hstack(blocks)


def _check_length(T: int, n: int, p: int):
    if p < 1:
        raise VarModelError(f"VAR order must be >= 1, got {p}")
    if T <= n * p + n + 1:
        raise VarModelError(
            f"insufficient observations for VAR({p}) with {n} variables: "
            f"need more than {n * p + n + 1}, got {T}")


def fit(ds: TimeSeriesDataset, p: int, workers: int = 1) -> VarModel:
    """
    Equation-by-equation OLS of x(t) on an intercept and x(t-1)..x(t-p).

    Args:
        ds: stationary dataset
        p: lag order
        workers: equations fitted concurrently when > 1

    Returns:
        VarModel with residual covariance residuals'residuals / (T - p)
    """
    T, n = ds.values.shape
    _check_length(T, n, p)
    design = lag_design(ds.values, p, p)
    targets = ds.values[p:]

    def fit_equation(i):
        try:
            return ols(targets[:, i], design)
        except RankDeficientError as e:
            raise VarModelError(f"rank-deficient VAR regressors: {e}") from e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(fit_equation, range(n)))
    else:
        fits = [fit_equation(i) for i in range(n)]

    coef = np.vstack([f.coefficients for f in fits])
    se = np.vstack([f.standard_errors for f in fits])
    residuals = np.column_stack([f.residuals for f in fits])
    coefficients = np.stack([coef[:, 1 + (tau - 1) * n:1 + tau * n] for tau in range(1, p + 1)])
    standard_errors = np.stack([se[:, 1 + (tau - 1) * n:1 + tau * n] for tau in range(1, p + 1)])
    model = VarModel(
        order=p,
        coefficients=coefficients,
        intercept=coef[:, 0].copy(),
        residuals=residuals,
        residual_covariance=residuals.T @ residuals / (T - p),
        standard_errors=standard_errors,
        intercept_standard_errors=se[:, 0].copy(),
        dof=fits[0].dof,
        variable_names=ds.variable_names,
    )
    logger.info(f"Fitted VAR({p}) on {T - p} observations of {n} variables")
    return model


def select_order(ds: TimeSeriesDataset, max_p: int = 10) -> OrderSelection:
    """
    Information criteria for p = 1..max_p on a common estimation sample.

    Each criterion is ln det(Sigma_p) + penalty * (n^2 p + n) / T_eff with
    penalty 2 (AIC), ln T_eff (BIC) and 2 ln ln T_eff (HQIC), Sigma_p being the
    MLE residual covariance over rows max_p..T-1.
    """
    T, n = ds.values.shape
    _check_length(T, n, max_p)
    nobs = T - max_p
    if nobs <= 1 + n * max_p:
        raise VarModelError(f"insufficient observations for order search up to {max_p}")
    targets = ds.values[max_p:]
    penalties = {'aic': 2.0, 'bic': np.log(nobs), 'hqic': 2.0 * np.log(np.log(nobs))}

    table: List[Dict[str, float]] = []
    for p in range(1, max_p + 1):
        design = lag_design(ds.values, p, max_p)
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise VarModelError(f"rank-deficient VAR regressors at order {p}")
        coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
        resid = targets - design @ coef
        sign, logdet = np.linalg.slogdet(resid.T @ resid / nobs)
        if sign <= 0:
            raise VarModelError(f"singular residual covariance at order {p}")
        k = n * n * p + n
        row = {'p': p}
        row.update({c: float(logdet + penalties[c] * k / nobs) for c in CRITERIA})
        table.append(row)

    selected = {c: int(table[int(np.argmin([r[c] for r in table]))]['p']) for c in CRITERIA}
    logger.info(f"VAR order selection up to {max_p}: {selected}")
    return OrderSelection(table=tuple(table), selected=selected, nobs=nobs)


def companion_matrix(coefficients: np.ndarray) -> np.ndarray:
    p, n, _ = coefficients.shape
    companion = np.zeros((n * p, n * p))
    companion[:n, :] = np.hstack(list(coefficients))
    if p > 1:
        companion[n:, :-n] = np.eye(n * (p - 1))
    return companion


def spectral_radius(coefficients: np.ndarray) -> float:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(coefficients)))))


def stability(model: VarModel) -> float:
    """Spectral radius of the companion matrix; the model is stable when < 1."""
    return spectral_radius(model.coefficients)
