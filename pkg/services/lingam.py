"""
LiNGAM Service
Instantaneous causal structure from non-Gaussian residuals: FastICA, row
permutation by linear assignment, causal-order search and OLS re-estimation.
"""

import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment
from sklearn.decomposition import FastICA
from sklearn.exceptions import ConvergenceWarning

from services.errors import (GraphError, IcaConvergenceError, KnowledgeError,
                             SingularAssignmentError, StatTestError)
from services.knowledge import Knowledge
from services.stattests import jarque_bera, ols

logger = logging.getLogger(__name__)

MAX_RESTARTS = 5
MAX_EXACT_VARIABLES = 8
DEFAULT_PRUNE_THRESHOLD = 0.05
# E[log cosh(Z)] for standard normal Z
GAUSSIAN_LOGCOSH = 0.3745672075


@dataclass(frozen=True, eq=False)
class IcaResult:
    unmixing: np.ndarray
    whitening: np.ndarray
    converged: bool
    iterations: int
    trace: Tuple[Dict[str, Any], ...] = ()
    gaussian_components: int = 0
    attempt: int = 0

    def sources(self, X: np.ndarray) -> np.ndarray:
        """Recovered sources W (X - mean) for X of shape n x T."""
        X = np.asarray(X, dtype=float)
        return self.unmixing @ (X - X.mean(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class InstantaneousModel:
    """
    b0[i, j] is the lag-0 effect of variable j on variable i. causal_order
    lists variable indices from most exogenous to most endogenous.
    """

    b0: np.ndarray
    causal_order: Tuple[int, ...]
    pruned_mask: np.ndarray
    variable_names: Tuple[str, ...]
    b0_ica: np.ndarray
    binding_constraints: Tuple[Tuple[str, str], ...] = ()
    non_gaussian_columns: int = 0
    ica: Optional[IcaResult] = field(default=None, repr=False)

    @property
    def causal_order_names(self) -> Tuple[str, ...]:
        return tuple(self.variable_names[i] for i in self.causal_order)

    def to_document(self) -> Dict[str, Any]:
        names = list(self.variable_names)
        return {
            'variables': names,
            'causal_order': list(self.causal_order_names),
            'b0': self.b0.tolist(),
            'binding_constraints': [list(c) for c in self.binding_constraints],
            'non_gaussian_columns': self.non_gaussian_columns,
        }


def amari_error(P: np.ndarray) -> float:
    """Distance of P from a scaled permutation matrix, in [0, 1]; 0 means exact."""
    P = np.abs(np.asarray(P, dtype=float))
    n = P.shape[0]
    if n < 2:
        return 0.0
    rows = (P.sum(axis=1) / P.max(axis=1) - 1.0).sum()
    cols = (P.sum(axis=0) / P.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2.0 * n * (n - 1)))


def _gaussian_like(s: np.ndarray) -> bool:
    n = len(s)
    skew_se = np.sqrt(6.0 / n)
    kurt_se = np.sqrt(24.0 / n)
    return abs(stats.skew(s)) < 4 * skew_se and abs(stats.kurtosis(s)) < 4 * kurt_se


def _contrast(sources: np.ndarray) -> float:
    """Negated logcosh negentropy approximation of unit-variance sources; lower is less Gaussian."""
    g = np.log(np.cosh(sources)).mean(axis=0)
    return float(-((g - GAUSSIAN_LOGCOSH) ** 2).sum())


def _ica_attempt(X: np.ndarray, n: int, tol: float, max_iter: int, seed: int) -> Tuple[FastICA, np.ndarray, bool]:
    ica = FastICA(n_components=n, algorithm='parallel', fun='logcosh',
                  whiten='unit-variance', whiten_solver='eigh',
                  tol=tol, max_iter=max_iter, random_state=seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', ConvergenceWarning)
        sources = ica.fit_transform(X.T)
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    return ica, sources, converged


def fastica(X: np.ndarray, tol: float = 1e-4, max_iter: int = 1000, seed: int = 0,
            workers: int = 1) -> IcaResult:
    """
    Symmetric FastICA with a tanh nonlinearity and eigen-decomposition whitening.

    Every restart runs; the converged attempt with the lowest contrast wins,
    ties going to the earlier attempt.

    Args:
        X: n x T observations, one row per variable
        tol: convergence tolerance on the unmixing update
        max_iter: iterations per attempt
        seed: initialization seed; restart k uses seed + k
        workers: attempts run concurrently on this many threads

    Returns:
        IcaResult whose unmixing maps centered X onto unit-variance sources
    """
    X = np.asarray(X, dtype=float)
    n, T = X.shape
    if T <= 10 * n:
        raise StatTestError(f"FastICA needs more than {10 * n} observations, got {T}")
    if np.any(X.std(axis=1) == 0):
        raise StatTestError("FastICA input has a constant row")

    seeds = [seed + attempt for attempt in range(MAX_RESTARTS + 1)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            attempts = list(pool.map(lambda s: _ica_attempt(X, n, tol, max_iter, s), seeds))
    else:
        attempts = [_ica_attempt(X, n, tol, max_iter, s) for s in seeds]

    trace: List[Dict[str, Any]] = []
    candidates = []
    for attempt, (ica, sources, converged) in enumerate(attempts):
        contrast = _contrast(sources) if converged else None
        trace.append({'attempt': attempt, 'seed': seeds[attempt], 'iterations': int(ica.n_iter_),
                      'converged': converged, 'contrast': contrast})
        if converged:
            candidates.append((contrast, attempt))
        else:
            logger.warning(f"FastICA attempt {attempt} did not converge in {max_iter} iterations")
    if not candidates:
        raise IcaConvergenceError(f"FastICA did not converge after {MAX_RESTARTS} restarts", trace)

    _, best = min(candidates)
    ica, sources, _ = attempts[best]
    logger.debug(f"FastICA kept attempt {best} of {len(candidates)} converged")
    gaussian = sum(_gaussian_like(sources[:, k]) for k in range(n))
    if gaussian >= 2:
        logger.warning(f"{gaussian} recovered components look Gaussian; the unmixing is not identifiable")
    return IcaResult(unmixing=ica.components_, whitening=ica.whitening_, converged=True,
                     iterations=int(ica.n_iter_), trace=tuple(trace),
                     gaussian_components=int(gaussian), attempt=best)


def solve_assignment(cost: np.ndarray) -> Tuple[np.ndarray, float]:
    """Exact minimum-cost assignment; returns the column of each row and the total."""
    cost = np.asarray(cost, dtype=float)
    row_ind, col_ind = linear_sum_assignment(cost)
    assigned = np.empty(cost.shape[0], dtype=int)
    assigned[row_ind] = col_ind
    return assigned, float(cost[row_ind, col_ind].sum())


def permute_and_scale(W: np.ndarray) -> np.ndarray:
    """
    Permute rows of W so the diagonal has no zeros and sum 1/|W_ii| is minimal,
    then divide each row by its diagonal entry.
    """
    W = np.asarray(W, dtype=float)
    with np.errstate(divide='ignore'):
        cost = np.where(W == 0, np.inf, 1.0 / np.abs(W))
    try:
        assigned, _ = solve_assignment(cost)
    except ValueError as e:
        raise SingularAssignmentError(f"every row assignment leaves a zero diagonal entry: {e}") from e
    permuted = np.empty_like(W)
    permuted[assigned] = W
    return permuted / np.diag(permuted)[:, None]


def _required_before(names: Sequence[str], knowledge: Knowledge) -> List[Tuple[int, int]]:
    return knowledge.index_pairs(names, 0, required=True)


def exhaustive_order(b0: np.ndarray, required: Sequence[Tuple[int, int]] = ()) -> Tuple[int, ...]:
    """
    Permutation minimizing the squared mass that must be discarded to make b0
    strictly lower triangular; required (cause, effect) pairs keep cause first.
    Equal costs go to the lexicographically first permutation.
    """
    n = b0.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=int)
    if required:
        positions = np.argsort(perms, axis=1)
        keep = np.ones(len(perms), dtype=bool)
        for cause, effect in required:
            keep &= positions[:, cause] < positions[:, effect]
        perms = perms[keep]
        if len(perms) == 0:
            raise KnowledgeError("required lag-0 edges admit no causal order")
    squared = b0 ** 2
    reordered = squared[perms[:, :, None], perms[:, None, :]]
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    costs = (reordered * upper).sum(axis=(1, 2))
    # permutations are generated in lexicographic order and argmin keeps the first minimum
    return tuple(int(i) for i in perms[int(np.argmin(costs))])


def approximate_order(b0: np.ndarray, required: Sequence[Tuple[int, int]] = ()) -> Tuple[int, ...]:
    """Zero the weakest entries until b0 is acyclic, then peel exogenous variables."""
    n = b0.shape[0]
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n))
    graph.add_edges_from(required)
    if not nx.is_directed_acyclic_graph(graph):
        raise KnowledgeError("required lag-0 edges admit no causal order")
    entries = [(abs(b0[i, j]), i, j) for i in range(n) for j in range(n) if i != j and b0[i, j] != 0]
    entries.sort(reverse=True)
    for _, effect, cause in entries:
        graph.add_edge(cause, effect)
        if not nx.is_directed_acyclic_graph(graph):
            graph.remove_edge(cause, effect)
    return tuple(nx.lexicographical_topological_sort(graph))


def _regress(residuals: np.ndarray, target: int, regressors: List[int]) -> np.ndarray:
    coef = np.zeros(residuals.shape[1])
    if regressors:
        coef[regressors] = ols(residuals[:, target], residuals[:, regressors]).coefficients
    return coef


def reestimate(residuals: np.ndarray, order: Sequence[int], forbidden: Sequence[Tuple[int, int]] = (),
               required: Sequence[Tuple[int, int]] = (),
               threshold: float = DEFAULT_PRUNE_THRESHOLD) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """
    OLS of each variable on its causal-order predecessors, excluding forbidden
    regressors; standardized coefficients below threshold are dropped (never
    required ones) and the survivors refit.

    Returns:
        (b0, binding) where binding lists forbidden pairs that would have survived
    """
    centered = residuals - residuals.mean(axis=0)
    scale = centered.std(axis=0, ddof=1)
    n = centered.shape[1]
    forbidden = set(forbidden)
    required = set(required)
    b0 = np.zeros((n, n))
    binding = []
    for position, target in enumerate(order):
        predecessors = list(order[:position])
        if not predecessors:
            continue
        unconstrained = _regress(centered, target, predecessors)
        standardized = unconstrained * scale / scale[target]
        binding.extend((c, target) for c in predecessors
                       if (c, target) in forbidden and abs(standardized[c]) >= threshold)

        allowed = [c for c in predecessors if (c, target) not in forbidden]
        coef = _regress(centered, target, allowed)
        standardized = coef * scale / scale[target]
        survivors = [c for c in allowed
                     if abs(standardized[c]) >= threshold or (c, target) in required]
        b0[target] = _regress(centered, target, survivors)
    return b0, binding


def estimate_b0(residuals: np.ndarray, knowledge: Optional[Knowledge] = None,
                variable_names: Optional[Sequence[str]] = None, approximate: bool = False,
                prune_threshold: float = DEFAULT_PRUNE_THRESHOLD, seed: int = 0,
                tol: float = 1e-4, max_iter: int = 1000) -> InstantaneousModel:
    """
    ICA-LiNGAM on a T x n residual matrix.

    B0 = I - W' where W' is the permuted, row-normalized unmixing matrix. The
    causal order minimizes the discarded upper-triangular mass of the
    standardized B0, so it does not depend on the units of the residuals;
    coefficients are then re-estimated by OLS along that order.
    """
    residuals = np.asarray(residuals, dtype=float)
    T, n = residuals.shape
    names = tuple(variable_names) if variable_names is not None else tuple(f"x{i}" for i in range(n))
    if len(names) != n:
        raise GraphError(f"{len(names)} variable names for {n} residual columns")
    knowledge = knowledge or Knowledge.empty()
    knowledge.check_names(names)
    if n > MAX_EXACT_VARIABLES and not approximate:
        raise GraphError(f"exact causal-order search supports at most {MAX_EXACT_VARIABLES} "
                         f"variables, got {n}; use approximate search")

    normality = jarque_bera(residuals)
    non_gaussian = sum(1 for c in normality.columns if c.p_value <= 0.05)
    if non_gaussian < n - 1:
        logger.warning(f"Only {non_gaussian} of {n} residual columns reject normality; "
                       f"the instantaneous structure may be unidentifiable")

    ica = fastica(residuals.T, tol=tol, max_iter=max_iter, seed=seed)
    b0_ica = np.eye(n) - permute_and_scale(ica.unmixing)
    np.fill_diagonal(b0_ica, 0.0)

    # unit-free strengths; entries below the prune threshold count as absent
    scale = residuals.std(axis=0, ddof=1)
    scored = b0_ica * scale[None, :] / scale[:, None]
    scored[np.abs(scored) < prune_threshold] = 0.0

    required = _required_before(names, knowledge)
    if approximate:
        order = approximate_order(scored, required)
    else:
        order = exhaustive_order(scored, required)

    forbidden = knowledge.index_pairs(names, 0)
    b0, binding = reestimate(residuals, order, forbidden, required, prune_threshold)
    binding_names = tuple((names[c], names[e]) for c, e in binding)
    for cause, effect in binding_names:
        logger.warning(f"Knowledge forbids {cause} -> {effect} at lag 0, which the data support")

    pruned = (b0 == 0)
    np.fill_diagonal(pruned, False)
    logger.info(f"LiNGAM causal order: {' -> '.join(names[i] for i in order)}; "
                f"{int((b0 != 0).sum())} instantaneous edges")
    return InstantaneousModel(b0=b0, causal_order=order, pruned_mask=pruned, variable_names=names,
                              b0_ica=b0_ica, binding_constraints=binding_names,
                              non_gaussian_columns=non_gaussian, ica=ica)
