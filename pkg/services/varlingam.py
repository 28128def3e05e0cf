"""
VAR-LiNGAM Service
VAR fit, LiNGAM on the VAR residuals and the lagged-matrix correction
B_tau = (I - B0) M_tau, with domain knowledge and standardized re-estimation.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services import lingam, var
from services.dataset import TimeSeriesDataset, TransformLog, standardize
from services.errors import VarModelError
from services.graphs import LaggedDag
from services.knowledge import Knowledge, make_market_knowledge
from services.stattests import JarqueBeraResult, jarque_bera, ols

logger = logging.getLogger(__name__)

__all__ = ['VarLingamModel', 'fit_var_lingam', 'make_market_knowledge', 'max_feasible_order']


@dataclass(frozen=True, eq=False)
class VarLingamModel:
    """
    b[0] is B0 and b[tau] is B_tau, each indexed [effect, cause]. m holds the
    VAR coefficient matrices and b_raw the lagged matrices before knowledge
    and pruning.
    """

    b: np.ndarray
    causal_order: Tuple[int, ...]
    var_order: int
    standardized: bool
    variable_names: Tuple[str, ...]
    m: np.ndarray
    b_raw: np.ndarray
    instantaneous: lingam.InstantaneousModel
    var_model: var.VarModel
    normality: JarqueBeraResult
    knowledge: Knowledge = field(default_factory=Knowledge.empty)
    order_selection: Optional[var.OrderSelection] = None
    binding_constraints: Tuple[Tuple[str, str, int], ...] = ()
    transform: Optional[TransformLog] = None

    @property
    def b0(self) -> np.ndarray:
        return self.b[0]

    @property
    def causal_order_names(self) -> Tuple[str, ...]:
        return tuple(self.variable_names[i] for i in self.causal_order)

    def to_lagged_dag(self) -> LaggedDag:
        return LaggedDag(self.variable_names, self.b)

    def to_document(self) -> Dict[str, Any]:
        names = list(self.variable_names)
        doc = {
            'variables': names,
            'var_order': self.var_order,
            'standardized': self.standardized,
            'causal_order': list(self.causal_order_names),
            'adjacency': [{'lag': lag, 'matrix': self.b[lag].tolist()} for lag in range(len(self.b))],
            'knowledge': self.knowledge.to_document(),
            'binding_constraints': [list(c) for c in self.binding_constraints],
            'residual_normality': self.normality.to_document(names),
        }
        if self.transform is not None:
            doc['transform_log'] = self.transform.to_document()
        return doc


def max_feasible_order(T: int, n: int, max_p: int) -> int:
    """Largest order <= max_p that a common-sample order search can fit."""
    p = max_p
    while p > 1 and (T <= n * p + n + 1 or T - p <= 1 + n * p):
        p -= 1
    return p


def _lagged_rows(values: np.ndarray, b0: np.ndarray, p: int, effect: int,
                 allowed: List[Tuple[int, int]]) -> Dict[Tuple[int, int], float]:
    """
    Regress x_effect(t) - B0[effect] x(t) on an intercept and the allowed
    (lag, cause) regressors, holding B0 fixed.
    """
    T = values.shape[0]
    target = values[p:, effect] - values[p:] @ b0[effect]
    columns = [np.ones(T - p)] + [values[p - lag:T - lag, cause] for lag, cause in allowed]
    coef = ols(target, np.column_stack(columns)).coefficients
    return {key: float(c) for key, c in zip(allowed, coef[1:])}


def _apply_lagged_knowledge(values: np.ndarray, names: Sequence[str], b: np.ndarray,
                            knowledge: Knowledge) -> None:
    p, n = b.shape[0] - 1, b.shape[1]
    for lag in range(1, p + 1):
        for cause, effect in knowledge.index_pairs(names, lag):
            b[lag, effect, cause] = np.nan
    for effect in range(n):
        row_forbidden = [(lag, c) for lag in range(1, p + 1) for c in range(n)
                         if np.isnan(b[lag, effect, c])]
        if not row_forbidden:
            continue
        allowed = [(lag, c) for lag in range(1, p + 1) for c in range(n)
                   if (lag, c) not in row_forbidden]
        refit = _lagged_rows(values, b[0], p, effect, allowed)
        for lag in range(1, p + 1):
            for c in range(n):
                b[lag, effect, c] = refit.get((lag, c), 0.0)


def fit_var_lingam(ds: TimeSeriesDataset, p: Optional[int] = None,
                   knowledge: Optional[Knowledge] = None, standardize_flag: bool = False,
                   criterion: str = 'hqic', max_p: int = 10,
                   prune_threshold: float = lingam.DEFAULT_PRUNE_THRESHOLD,
                   approximate: bool = False, seed: int = 0, workers: int = 1) -> VarLingamModel:
    """
    Estimate B0..Bp on a stationary dataset.

    Args:
        ds: stationary (typically differenced) dataset
        p: VAR order; selected by `criterion` when omitted
        knowledge: forbidden/required triples at any lag
        standardize_flag: z-score the data first so strengths are comparable
        criterion: 'hqic' or 'bic'
        max_p: largest order considered by the search
        prune_threshold: standardized magnitude below which entries are dropped

    Returns:
        VarLingamModel
    """
    knowledge = knowledge or Knowledge.empty()
    knowledge.check_names(ds.variable_names)
    transform = None
    if standardize_flag:
        ds, transform = standardize(ds)

    T, n = ds.values.shape
    selection = None
    if p is None:
        if criterion not in ('hqic', 'bic'):
            raise VarModelError(f"unsupported order criterion '{criterion}'")
        selection = var.select_order(ds, max_feasible_order(T, n, max_p))
        p = selection.chosen(criterion)

    var_model = var.fit(ds, p, workers=workers)
    radius = var.stability(var_model)
    if radius >= 1.0:
        logger.warning(f"VAR({p}) companion spectral radius {radius:.3f} >= 1; data may be nonstationary")
    normality = jarque_bera(var_model.residuals)

    instantaneous = lingam.estimate_b0(var_model.residuals, knowledge.at_lag(0), ds.variable_names,
                                       approximate=approximate, prune_threshold=prune_threshold,
                                       seed=seed)
    b0 = instantaneous.b0
    b_raw = np.stack([(np.eye(n) - b0) @ m for m in var_model.coefficients])

    b = np.concatenate([b0[None], b_raw.copy()])
    scale = ds.values.std(axis=0, ddof=1)
    names = ds.variable_names
    binding = [(c, e, 0) for c, e in instantaneous.binding_constraints]
    for lag in range(1, p + 1):
        for cause, effect in knowledge.index_pairs(names, lag):
            if abs(b_raw[lag - 1, effect, cause]) * scale[cause] / scale[effect] >= prune_threshold:
                binding.append((names[cause], names[effect], lag))
                logger.warning(f"Knowledge forbids {names[cause]}(t-{lag}) -> {names[effect]}(t), "
                               f"which the data support")
    _apply_lagged_knowledge(ds.values, names, b, knowledge)

    lagged = b[1:]
    standardized_lagged = lagged * scale[None, None, :] / scale[None, :, None]
    required = np.zeros_like(lagged, dtype=bool)
    for lag in range(1, p + 1):
        for cause, effect in knowledge.index_pairs(names, lag, required=True):
            required[lag - 1, effect, cause] = True
    lagged[(np.abs(standardized_lagged) < prune_threshold) & ~required] = 0.0

    model = VarLingamModel(
        b=b,
        causal_order=instantaneous.causal_order,
        var_order=p,
        standardized=standardize_flag,
        variable_names=names,
        m=var_model.coefficients,
        b_raw=b_raw,
        instantaneous=instantaneous,
        var_model=var_model,
        normality=normality,
        knowledge=knowledge,
        order_selection=selection,
        binding_constraints=tuple(binding),
        transform=transform,
    )
    logger.info(f"VAR-LiNGAM ({'standardized' if standardize_flag else 'raw'}) p={p}: "
                f"{int((b != 0).sum())} edges across {p + 1} lags")
    return model
