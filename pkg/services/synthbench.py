"""
Synthetic Benchmark Service
Ground-truth structural VAR generators and the benchmark harness used to
measure recovery of VAR-LiNGAM and LPCMCI.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from services import lpcmci, varlingam
from services.dataset import TimeSeriesDataset
from services.errors import BenchmarkError
from services.graphs import LaggedDag, structural_distance
from services.var import spectral_radius

logger = logging.getLogger(__name__)

BURN_IN = 200
MAX_SPECTRAL_RADIUS = 0.95
NOISE_FAMILIES = ('uniform', 'laplace', 'gaussian')
ALGORITHMS = ('varlingam', 'lpcmci')
WEIGHT_RANGE = (0.1, 0.5)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """
    Structural VAR x(t) = B0 x(t) + sum_tau B_tau x(t - tau) + e(t) over
    observed and latent variables; matrices are indexed [effect, cause].
    """

    variable_names: Tuple[str, ...]
    b0: np.ndarray
    bs: np.ndarray
    noise: Tuple[str, ...]
    latent_names: Tuple[str, ...] = ()
    seed: int = 0
    name: str = ''

    def __post_init__(self):
        n = len(self.variable_names)
        b0 = np.array(self.b0, dtype=float)
        bs = np.array(self.bs, dtype=float).reshape(-1, n, n) if np.size(self.bs) else np.zeros((0, n, n))
        if b0.shape != (n, n):
            raise BenchmarkError(f"B0 must be {n}x{n}, got {b0.shape}")
        if len(self.noise) != n or any(f not in NOISE_FAMILIES for f in self.noise):
            raise BenchmarkError(f"noise must list one of {NOISE_FAMILIES} per variable")
        unknown = set(self.latent_names) - set(self.variable_names)
        if unknown:
            raise BenchmarkError(f"latent variables not declared: {sorted(unknown)}")
        object.__setattr__(self, 'variable_names', tuple(self.variable_names))
        object.__setattr__(self, 'noise', tuple(self.noise))
        object.__setattr__(self, 'latent_names', tuple(self.latent_names))
        object.__setattr__(self, 'b0', b0)
        object.__setattr__(self, 'bs', bs)

    @property
    def max_lag(self) -> int:
        return self.bs.shape[0]

    @property
    def observed_names(self) -> Tuple[str, ...]:
        return tuple(v for v in self.variable_names if v not in self.latent_names)

    def links(self) -> List[Tuple[str, str, int]]:
        """(cause, effect, lag) for every nonzero coefficient, latents included."""
        names = self.variable_names
        out = [(names[c], names[e], 0) for e, c in zip(*np.nonzero(self.b0))]
        for lag in range(1, self.max_lag + 1):
            out.extend((names[c], names[e], lag) for e, c in zip(*np.nonzero(self.bs[lag - 1])))
        return sorted(out, key=lambda link: (link[2], link[0], link[1]))

    def to_lagged_dag(self, max_lag: Optional[int] = None) -> LaggedDag:
        """Observed-variable lagged DAG padded or truncated to max_lag."""
        keep = [i for i, v in enumerate(self.variable_names) if v not in self.latent_names]
        max_lag = self.max_lag if max_lag is None else max_lag
        matrices = np.zeros((max_lag + 1, len(keep), len(keep)))
        matrices[0] = self.b0[np.ix_(keep, keep)]
        for lag in range(1, min(max_lag, self.max_lag) + 1):
            matrices[lag] = self.bs[lag - 1][np.ix_(keep, keep)]
        return LaggedDag(self.observed_names, matrices)

    def implied_var(self) -> np.ndarray:
        """Reduced-form coefficients (I - B0)^-1 B_tau."""
        n = len(self.variable_names)
        try:
            inverse = np.linalg.inv(np.eye(n) - self.b0)
        except np.linalg.LinAlgError as e:
            raise BenchmarkError("I - B0 is singular") from e
        return np.stack([inverse @ b for b in self.bs]) if self.max_lag else np.zeros((0, n, n))

    def to_document(self) -> Dict[str, Any]:
        return {'name': self.name, 'variables': list(self.variable_names),
                'latents': list(self.latent_names), 'noise': list(self.noise), 'seed': self.seed,
                'links': [list(link) for link in self.links()]}


def _draw_noise(rng: np.random.Generator, families: Sequence[str], size: int) -> np.ndarray:
    columns = []
    for family in families:
        if family == 'uniform':
            columns.append(rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size))
        elif family == 'laplace':
            columns.append(rng.laplace(0.0, 1.0 / math.sqrt(2.0), size))
        else:
            columns.append(rng.standard_normal(size))
    return np.column_stack(columns)


def check_truth(truth: GroundTruth) -> float:
    """Validate a truth for simulation; returns its companion spectral radius."""
    lag0 = nx.DiGraph((c, e) for e, c in zip(*np.nonzero(truth.b0)))
    if any(truth.b0[i, i] != 0 for i in range(len(truth.variable_names))) \
            or not nx.is_directed_acyclic_graph(lag0):
        raise BenchmarkError("lag-0 graph of the truth is cyclic")
    radius = spectral_radius(truth.implied_var())
    if radius >= MAX_SPECTRAL_RADIUS:
        raise BenchmarkError(f"truth is not stable enough: spectral radius {radius:.3f} "
                             f">= {MAX_SPECTRAL_RADIUS}")
    return radius


def generate(truth: GroundTruth, T: int, seed: Optional[int] = None) -> TimeSeriesDataset:
    """
    Simulate x(t) = (I - B0)^-1 (sum_tau B_tau x(t - tau) + e(t)).

    The first BURN_IN steps are discarded and latent columns dropped. Dates are
    consecutive business days.
    """
    if T < 2:
        raise BenchmarkError(f"T must be at least 2, got {T}")
    check_truth(truth)
    rng = np.random.default_rng(truth.seed if seed is None else seed)
    n = len(truth.variable_names)
    p = truth.max_lag
    inverse = np.linalg.inv(np.eye(n) - truth.b0)
    lagged = [inverse @ b for b in truth.bs]
    shocks = _draw_noise(rng, truth.noise, BURN_IN + T) @ inverse.T

    x = np.zeros((BURN_IN + T + p, n))
    for t in range(p, BURN_IN + T + p):
        value = shocks[t - p].copy()
        for tau in range(1, p + 1):
            value += lagged[tau - 1] @ x[t - tau]
        x[t] = value
    keep = [i for i, v in enumerate(truth.variable_names) if v not in truth.latent_names]
    values = x[p + BURN_IN:, keep]
    dates = tuple(d.date() for d in pd.bdate_range('2000-01-03', periods=T))
    return TimeSeriesDataset(truth.observed_names, dates, values)


def _weight(rng: np.random.Generator) -> float:
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(*WEIGHT_RANGE))


def random_truth(n: int, p: int = 1, seed: int = 0, noise: str = 'uniform', density: float = 0.3,
                 latents: int = 0, max_attempts: int = 100) -> GroundTruth:
    """
    Random stable truth with weights in +-[0.1, 0.5].

    noise is a family name or 'mixed' (alternating uniform and laplace). Each
    latent variable drives two observed variables at lag 0.
    """
    if n < 1 or p < 0:
        raise BenchmarkError(f"invalid truth size n={n}, p={p}")
    if noise != 'mixed' and noise not in NOISE_FAMILIES:
        raise BenchmarkError(f"unknown noise family '{noise}'")
    rng = np.random.default_rng(seed)
    observed = [f"x{i}" for i in range(n)]
    hidden = [f"L{k}" for k in range(latents)]
    names = observed + hidden
    total = len(names)
    for _ in range(max_attempts):
        b0 = np.zeros((total, total))
        order = rng.permutation(n)
        for a in range(n):
            for b in range(a + 1, n):
                if rng.random() < density:
                    b0[order[b], order[a]] = _weight(rng)
        for k in range(latents):
            for child in rng.choice(n, size=min(2, n), replace=False):
                b0[child, n + k] = _weight(rng)
        bs = np.zeros((p, total, total))
        for lag in range(p):
            for effect in range(n):
                for cause in range(n):
                    if rng.random() < density:
                        bs[lag, effect, cause] = _weight(rng)
        if noise == 'mixed':
            families = tuple('uniform' if i % 2 == 0 else 'laplace' for i in range(total))
        else:
            families = (noise,) * total
        truth = GroundTruth(tuple(names), b0, bs, families, tuple(hidden), seed, f"random-{seed}")
        try:
            check_truth(truth)
        except BenchmarkError:
            continue
        return truth
    raise BenchmarkError(f"no stable truth found in {max_attempts} attempts")


def _named(names: Sequence[str], links: Sequence[Tuple[str, str, int, float]], noise: Sequence[str],
           name: str, seed: int, p: Optional[int] = None) -> GroundTruth:
    index = {v: i for i, v in enumerate(names)}
    n = len(names)
    if p is None:
        p = max((lag for *_, lag, _ in links), default=0)
    b0 = np.zeros((n, n))
    bs = np.zeros((p, n, n))
    for cause, effect, lag, weight in links:
        if lag == 0:
            b0[index[effect], index[cause]] = weight
        else:
            bs[lag - 1, index[effect], index[cause]] = weight
    return GroundTruth(tuple(names), b0, bs, tuple(noise), (), seed, name)


def _nongaussian_suite(seed: int) -> List[GroundTruth]:
    return [random_truth(6, 1, seed + k, 'uniform' if k % 2 == 0 else 'laplace') for k in range(4)]


def _null_suite(seed: int) -> List[GroundTruth]:
    names = tuple(f"x{i}" for i in range(4))
    return [_named(names, [], (family,) * 4, f"null-{family}", seed, p=1)
            for family in ('uniform', 'laplace')]


def _bonds_suite(seed: int) -> List[GroundTruth]:
    names = ('Close_US10Y', 'Close_JGBF', 'Close_JGB')
    links = [('Close_US10Y', 'Close_JGBF', 1, 0.3), ('Close_US10Y', 'Close_JGBF', 2, 0.2),
             ('Close_JGBF', 'Close_JGB', 0, 0.45)]
    return [_named(names, links, ('laplace', 'uniform', 'laplace'), 'bonds', seed)]


MARKET_VARIABLES = ('USD', 'Close_Nikkei', 'Close_SP', 'Close_US10Y', 'Close_JGBF', 'Close_JGB')
MARKET_LINKS = (
    ('Close_SP', 'Close_Nikkei', 1, 0.4),
    ('USD', 'Close_Nikkei', 0, 0.3),
    ('Close_SP', 'Close_US10Y', 0, 0.25),
    ('Close_US10Y', 'Close_JGBF', 1, 0.3),
    ('Close_US10Y', 'Close_JGBF', 2, 0.2),
    ('Close_JGBF', 'Close_JGB', 0, 0.45),
    ('Close_JGB', 'USD', 1, -0.2),
)


def _market_suite(seed: int) -> List[GroundTruth]:
    noise = ('laplace', 'uniform', 'laplace', 'uniform', 'laplace', 'uniform')
    return [_named(MARKET_VARIABLES, MARKET_LINKS, noise, 'market', seed)]


SUITES: Dict[str, Tuple[str, Callable[[int], List[GroundTruth]]]] = {
    'nongaussian': ('Random six-variable VAR(1) truths with uniform or laplace noise', _nongaussian_suite),
    'null': ('Empty graphs; every reported edge is a false positive', _null_suite),
    'bonds': ('US10Y -> JGBF at lags 1 and 2 and JGBF -> JGB at lag 0', _bonds_suite),
    'market': ('Six market variables with a market-consistent structure', _market_suite),
}


def suite(name: str, seed: int = 0) -> List[GroundTruth]:
    if name not in SUITES:
        raise BenchmarkError(f"unknown suite '{name}', expected one of {sorted(SUITES)}")
    return SUITES[name][1](seed)


def describe_suites() -> List[Dict[str, Any]]:
    return [{'name': name, 'description': description,
             'truths': [t.to_document() for t in builder(0)]}
            for name, (description, builder) in sorted(SUITES.items())]


def _canonical_adjacency(links: Sequence[Tuple[int, int, int]], tau_max: int) -> set:
    keys = set()
    for cause, effect, lag in links:
        if lag > tau_max or (lag == 0 and cause == effect):
            continue
        keys.add((min(cause, effect), max(cause, effect), 0) if lag == 0 else (cause, effect, lag))
    return keys


def _order_accuracy(truth_dag: LaggedDag, causal_order: Sequence[int]) -> Optional[float]:
    pairs = list(nx.transitive_closure_dag(
        nx.DiGraph((c, e) for c, e, lag, _ in truth_dag.edges() if lag == 0)).edges())
    if not pairs:
        return None
    position = {v: k for k, v in enumerate(causal_order)}
    return sum(position[c] < position[e] for c, e in pairs) / len(pairs)


def _evaluate(algorithm: str, truth: GroundTruth, ds: TimeSeriesDataset, alpha: float) -> Dict[str, Any]:
    p = max(1, truth.max_lag)
    truth_dag = truth.to_lagged_dag(p)
    if algorithm == 'varlingam':
        model = varlingam.fit_var_lingam(ds, p=p, seed=truth.seed)
        weights = np.abs(truth_dag.matrices[truth_dag.matrices != 0])
        threshold = float(weights.min() / 2) if weights.size else 0.0
        distance = structural_distance(model.to_lagged_dag(), truth_dag, threshold)
        return {'precision': distance.precision, 'recall': distance.recall,
                'false_positive_rate': distance.false_positive_rate,
                'order_accuracy': _order_accuracy(truth_dag, model.causal_order)}

    pag = lpcmci.discover(ds, tau_max=p, alpha=alpha)
    n = len(ds.variable_names)
    estimated = {(e.source, e.target, e.lag) for e in pag.edges}
    true_links = [(c, e, lag) for c, e, lag, _ in truth_dag.edges()]
    true_keys = _canonical_adjacency(true_links, p)
    candidates = n * (n - 1) // 2 + n * n * p
    tp = len(estimated & true_keys)
    fp = len(estimated - true_keys)
    fn = len(true_keys - estimated)
    negatives = candidates - len(true_keys)
    return {'precision': tp / (tp + fp) if tp + fp else 1.0,
            'recall': tp / (tp + fn) if tp + fn else 1.0,
            'false_positive_rate': fp / negatives if negatives else 0.0,
            'order_accuracy': None}


@dataclass(frozen=True)
class BenchmarkResult:
    rows: Tuple[Dict[str, Any], ...]
    summary: Tuple[Dict[str, Any], ...] = field(default=())

    def to_document(self) -> Dict[str, Any]:
        return {'rows': [dict(r) for r in self.rows], 'summary': [dict(s) for s in self.summary]}


def _summarize(rows: Sequence[Dict[str, Any]]) -> Tuple[Dict[str, Any], ...]:
    frame = pd.DataFrame(list(rows))
    metrics = ['precision', 'recall', 'false_positive_rate', 'order_accuracy', 'seconds']
    frame['order_accuracy'] = pd.to_numeric(frame['order_accuracy'], errors='coerce')
    groups = frame.groupby(['algorithm', 'truth'], sort=True)
    grouped = groups[metrics].mean()
    counts = groups.size()
    out = []
    for (algorithm, truth), values in grouped.iterrows():
        entry = {'algorithm': algorithm, 'truth': truth, 'seeds': int(counts[(algorithm, truth)])}
        for metric in metrics:
            value = values[metric]
            entry[metric] = None if pd.isna(value) else float(value)
        out.append(entry)
    return tuple(out)


def run_benchmark(truths: Sequence[GroundTruth], algorithms: Sequence[str] = ALGORITHMS, T: int = 2000,
                  seeds: int = 5, alpha: float = 0.05, workers: int = 1) -> BenchmarkResult:
    """
    Evaluate algorithms on simulated data from each truth.

    Rows are ordered by (algorithm, truth, seed) regardless of scheduling.
    """
    if not truths:
        raise BenchmarkError("benchmark suite is empty")
    if seeds < 1:
        raise BenchmarkError(f"seeds must be positive, got {seeds}")
    unknown = sorted(set(algorithms) - set(ALGORITHMS))
    if unknown or not algorithms:
        raise BenchmarkError(f"unknown algorithms {unknown}, expected a subset of {list(ALGORITHMS)}")

    jobs = [(algorithm, k, s) for algorithm in sorted(set(algorithms))
            for k in range(len(truths)) for s in range(seeds)]

    def run(job):
        algorithm, k, s = job
        truth = truths[k]
        data_seed = int(np.random.SeedSequence([truth.seed, s]).generate_state(1)[0])
        ds = generate(truth, T, data_seed)
        start = time.perf_counter()
        metrics = _evaluate(algorithm, truth, ds, alpha)
        elapsed = time.perf_counter() - start
        row = {'algorithm': algorithm, 'truth': truth.name or f"truth-{k}", 'truth_index': k, 'seed': s}
        row.update(metrics)
        row['seconds'] = elapsed
        logger.debug(f"{algorithm} on {row['truth']} seed {s}: recall {metrics['recall']:.3f}")
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]
    rows.sort(key=lambda r: (r['algorithm'], r['truth_index'], r['seed']))
    logger.info(f"Benchmark finished: {len(rows)} runs over {len(truths)} truths")
    return BenchmarkResult(tuple(rows), _summarize(rows))
