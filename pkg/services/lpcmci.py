"""
LPCMCI Service
Time-series causal discovery with latent confounders. Produces a time-series
PAG over (variable, lag) nodes with pluggable conditional independence tests.

Edges are stored once per canonical position, between (source, t - lag) and
(target, t); every translated copy inside the window shares its marks.
"""

import itertools
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from services.dataset import TimeSeriesDataset
from services.errors import GraphError, KnowledgeError, StatTestError
from services.graphs import ARROW, CIRCLE, TAIL, PagEdge, TimeSeriesPAG
from services.knowledge import Knowledge
from services.stattests import partial_correlation_test

logger = logging.getLogger(__name__)

__all__ = ['CiOutcome', 'CiTester', 'PartialCorrelationTester', 'DsepOracle', 'TimeSeriesPAG',
           'make_dsep_oracle', 'discover']

Node = Tuple[int, int]
EdgeKey = Tuple[int, int, int]

DEFAULT_TAU_MAX = 2
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class CiOutcome:
    statistic: float
    p_value: float

    def independent(self, alpha: float) -> bool:
        # NaN p-values (undetermined tests) count as dependence
        return bool(self.p_value > alpha)


class CiTester:
    """(x, y, conditioning set) -> CiOutcome, symmetric in x and y."""

    variable_names: Tuple[str, ...] = ()

    def run(self, x: Node, y: Node, z: Sequence[Node]) -> CiOutcome:
        raise NotImplementedError


class PartialCorrelationTester(CiTester):
    """Partial correlation on lag-aligned samples t = tau_max..T-1."""

    def __init__(self, ds: TimeSeriesDataset, tau_max: int):
        T, n = ds.values.shape
        if T <= 10 * n * (tau_max + 1):
            raise StatTestError(f"partial correlation tests need more than {10 * n * (tau_max + 1)} "
                                f"observations for {n} variables at tau_max={tau_max}, got {T}")
        self.variable_names = ds.variable_names
        self.tau_max = tau_max
        self._values = ds.values
        self._cache: Dict[Tuple[FrozenSet[Node], FrozenSet[Node]], CiOutcome] = {}
        self._lock = threading.Lock()

    def _series(self, node: Node) -> np.ndarray:
        var, lag = node
        T = self._values.shape[0]
        return self._values[self.tau_max - lag:T - lag, var]

    def run(self, x: Node, y: Node, z: Sequence[Node]) -> CiOutcome:
        key = (frozenset((x, y)), frozenset(z))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        a, b = sorted((x, y))
        zs = sorted(z)
        Z = np.column_stack([self._series(node) for node in zs]) if zs else None
        result = partial_correlation_test(self._series(a), self._series(b), Z)
        outcome = CiOutcome(result.statistic, result.p_value)
        with self._lock:
            self._cache[key] = outcome
        return outcome


class DsepOracle(CiTester):
    """Exact answers from d-separation on a time-unrolled ground truth."""

    def __init__(self, graph: nx.DiGraph, variable_names: Sequence[str], horizon: int):
        self.graph = graph
        self.variable_names = tuple(variable_names)
        self.horizon = horizon

    def _node(self, node: Node) -> Tuple[str, int]:
        var, lag = node
        if not 0 <= lag <= self.horizon:
            raise GraphError(f"node lag {lag} outside the oracle horizon {self.horizon}")
        return self.variable_names[var], lag

    def separated(self, x: Node, y: Node, z: Sequence[Node]) -> bool:
        xs, ys, zs = {self._node(x)}, {self._node(y)}, {self._node(n) for n in z}
        if hasattr(nx, 'is_d_separator'):
            return nx.is_d_separator(self.graph, xs, ys, zs)
        return nx.d_separated(self.graph, xs, ys, zs)

    def run(self, x: Node, y: Node, z: Sequence[Node]) -> CiOutcome:
        if self.separated(x, y, z):
            return CiOutcome(0.0, 1.0)
        return CiOutcome(1.0, 0.0)


def make_dsep_oracle(links: Iterable[Tuple[str, str, int]], variables: Sequence[str],
                     latents: Sequence[str] = (), tau_max: int = DEFAULT_TAU_MAX) -> DsepOracle:
    """
    Build a d-separation oracle from stationary links (cause, effect, lag).

    The truth is unrolled over a past horizon long enough to contain every
    common ancestor relevant inside the discovery window. Latent variables take
    part in the unrolled graph but can never be queried.
    """
    links = [(str(c), str(e), int(lag)) for c, e, lag in links]
    names = list(variables) + [v for v in latents if v not in variables]
    known = set(names)
    for cause, effect, lag in links:
        if cause not in known or effect not in known:
            raise GraphError(f"link {cause} -> {effect} mentions an undeclared variable")
        if lag < 0:
            raise GraphError(f"link {cause} -> {effect} has negative lag {lag}")
    contemporaneous = nx.DiGraph((c, e) for c, e, lag in links if lag == 0)
    if not nx.is_directed_acyclic_graph(contemporaneous):
        raise GraphError("contemporaneous truth is cyclic")

    max_lag = max((lag for *_, lag in links), default=0)
    horizon = tau_max + 2 * len(names) * max(1, max_lag) + 1
    graph = nx.DiGraph()
    graph.add_nodes_from((name, t) for name in names for t in range(horizon + 1))
    for cause, effect, lag in links:
        for t in range(horizon + 1 - lag):
            graph.add_edge((cause, t + lag), (effect, t))
    logger.debug(f"Unrolled truth over {horizon + 1} steps: {graph.number_of_edges()} edges")
    return DsepOracle(graph, variables, horizon)


class _Window:
    """Canonical edge marks over nodes (var, lag), lag in 0..tau_max."""

    def __init__(self, n: int, tau_max: int, names: Sequence[str]):
        self.n = n
        self.tau_max = tau_max
        self.names = tuple(names)
        self.nodes: List[Node] = [(v, lag) for lag in range(tau_max + 1) for v in range(n)]
        self.marks: Dict[EdgeKey, List[str]] = {}
        self.fixed: Dict[EdgeKey, List[bool]] = {}
        self.conflicts: List[str] = []
        self._neighbors: Optional[Dict[Node, List[Node]]] = None

    @staticmethod
    def canon(a: Node, b: Node) -> Tuple[EdgeKey, bool]:
        """Canonical key for the pair and whether a sits at the source end."""
        (va, la), (vb, lb) = a, b
        if la > lb or (la == lb and va < vb):
            return (va, vb, la - lb), True
        return (vb, va, lb - la), False

    def label(self, node: Node) -> str:
        var, lag = node
        return f"{self.names[var]}(t)" if lag == 0 else f"{self.names[var]}(t-{lag})"

    def adjacent(self, a: Node, b: Node) -> bool:
        return a != b and self.canon(a, b)[0] in self.marks

    def neighbors(self, a: Node) -> List[Node]:
        if self._neighbors is None:
            self._neighbors = {u: [w for w in self.nodes if self.adjacent(u, w)] for u in self.nodes}
        return self._neighbors[a]

    def remove(self, key: EdgeKey):
        self.marks.pop(key, None)
        self.fixed.pop(key, None)
        self._neighbors = None

    def mark(self, at: Node, other: Node) -> str:
        key, at_source = self.canon(at, other)
        return self.marks[key][0 if at_source else 1]

    def set_mark(self, at: Node, other: Node, mark: str, fix: bool = False) -> bool:
        """Update the mark at `at` on edge at--other; only circles change."""
        key, at_source = self.canon(at, other)
        slot = 0 if at_source else 1
        current = self.marks[key][slot]
        if current == mark:
            if fix:
                self.fixed[key][slot] = True
            return False
        if mark == ARROW and at_source and key[2] > 0:
            self._conflict(f"refused arrowhead at earlier node {self.label(at)} on edge to {self.label(other)}")
            return False
        if current != CIRCLE or self.fixed[key][slot]:
            self._conflict(f"mark at {self.label(at)} on edge to {self.label(other)} is {current}, "
                           f"refused {mark}")
            return False
        self.marks[key][slot] = mark
        if fix:
            self.fixed[key][slot] = True
        return True

    def _conflict(self, message: str):
        if message not in self.conflicts:
            self.conflicts.append(message)
            logger.warning(f"Orientation conflict: {message}")

    def in_window(self, node: Node) -> bool:
        return 0 <= node[1] <= self.tau_max

    def is_parent(self, a: Node, b: Node) -> bool:
        return self.adjacent(a, b) and self.mark(a, b) == TAIL and self.mark(b, a) == ARROW


def _initial_marks(window: _Window, knowledge: Knowledge):
    names = window.names
    for key in list(window.marks):
        window.marks[key] = [CIRCLE, ARROW if key[2] > 0 else CIRCLE]
        window.fixed[key] = [False, key[2] > 0]
    for cause, effect in knowledge.index_pairs(names, 0):
        u, j = (cause, 0), (effect, 0)
        if window.adjacent(u, j):
            window.set_mark(u, j, ARROW, fix=True)
    for lag in range(window.tau_max + 1):
        for cause, effect in knowledge.index_pairs(names, lag, required=True):
            window.set_mark((cause, lag), (effect, 0), TAIL, fix=True)
            window.set_mark((effect, 0), (cause, lag), ARROW, fix=True)


def _required_keys(window: _Window, knowledge: Knowledge) -> Set[EdgeKey]:
    keys = set()
    for lag in range(window.tau_max + 1):
        for cause, effect in knowledge.index_pairs(window.names, lag, required=True):
            keys.add(window.canon((cause, lag), (effect, 0))[0])
    return keys


class _Search:
    def __init__(self, window: _Window, tester: CiTester, alpha: float, required: Set[EdgeKey],
                 max_cond_dim: Optional[int], workers: int):
        self.window = window
        self.tester = tester
        self.alpha = alpha
        self.required = required
        self.max_cond_dim = max_cond_dim
        self.workers = workers
        self.sepsets: Dict[EdgeKey, FrozenSet[Node]] = {}
        self.statistic: Dict[EdgeKey, float] = {}
        self.p_value: Dict[EdgeKey, float] = {}
        self.n_tests = 0
        self._lock = threading.Lock()

    @staticmethod
    def endpoints(key: EdgeKey) -> Tuple[Node, Node]:
        source, target, lag = key
        return (source, lag), (target, 0)

    def lagged_parents(self, node: Node) -> Set[Node]:
        return {p for p in self.window.neighbors(node) if p[1] > node[1] and self.window.is_parent(p, node)}

    def _record(self, key: EdgeKey, outcome: CiOutcome):
        stat, p = outcome.statistic, outcome.p_value
        with self._lock:
            self.n_tests += 1
            if not np.isnan(stat) and (key not in self.statistic or abs(stat) > abs(self.statistic[key])):
                self.statistic[key] = float(stat)
            if not np.isnan(p):
                self.p_value[key] = float(min(p, self.p_value.get(key, 1.0)))

    def _test_edge(self, key: EdgeKey, level: int, base: FrozenSet[Node],
                   pool: List[Node]) -> Optional[FrozenSet[Node]]:
        x, y = self.endpoints(key)
        for subset in itertools.combinations(pool, level):
            z = tuple(sorted(base | set(subset)))
            outcome = self.tester.run(x, y, z)
            self._record(key, outcome)
            if key not in self.required and outcome.independent(self.alpha):
                return frozenset(z)
        return None

    def skeleton(self, mci: bool):
        """PC-stable removal by increasing conditioning cardinality."""
        window = self.window
        level = 0
        while self.max_cond_dim is None or level <= self.max_cond_dim:
            jobs = []
            for key in sorted(window.marks):
                x, y = self.endpoints(key)
                base: Set[Node] = set()
                if mci:
                    base = (self.lagged_parents(x) | self.lagged_parents(y)) - {x, y}
                pool = sorted((set(window.neighbors(x)) | set(window.neighbors(y))) - {x, y} - base)
                if len(pool) >= level:
                    jobs.append((key, frozenset(base), pool))
            if not jobs:
                break

            def run(job):
                key, base, pool = job
                return key, self._test_edge(key, level, base, pool)

            if self.workers > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool_exec:
                    results = list(pool_exec.map(run, jobs))
            else:
                results = [run(job) for job in jobs]
            removed = 0
            for key, sepset in results:
                if sepset is not None:
                    window.remove(key)
                    self.sepsets[key] = sepset
                    removed += 1
            logger.debug(f"Skeleton level {level}{' (mci)' if mci else ''}: {len(jobs)} edges tested, "
                         f"{removed} removed")
            level += 1

    def sepset(self, a: Node, b: Node) -> Optional[FrozenSet[Node]]:
        """Recorded separating set for a translated pair, shifted into place."""
        key, _ = self.window.canon(a, b)
        stored = self.sepsets.get(key)
        if stored is None:
            return None
        shift = min(a[1], b[1])
        return frozenset((v, lag + shift) for v, lag in stored)


def _orient_colliders(window: _Window, search: _Search):
    arrows = []
    for c in window.nodes:
        neighbors = window.neighbors(c)
        for a, b in itertools.combinations(neighbors, 2):
            if window.adjacent(a, b):
                continue
            sepset = search.sepset(a, b)
            if sepset is not None and c not in sepset:
                arrows.append((c, a))
                arrows.append((c, b))
    for at, other in arrows:
        window.set_mark(at, other, ARROW)


def _rule1(window: _Window) -> bool:
    """A *-> B o-* C with A, C nonadjacent: B --> C."""
    changed = False
    for b in window.nodes:
        for a in window.neighbors(b):
            if window.mark(b, a) != ARROW:
                continue
            for c in window.neighbors(b):
                if c == a or window.adjacent(a, c) or window.mark(b, c) != CIRCLE:
                    continue
                if window.set_mark(b, c, TAIL):
                    window.set_mark(c, b, ARROW)
                    changed = True
    return changed


def _rule2(window: _Window) -> bool:
    """A -> B *-> C or A *-> B -> C, with A *-o C: arrowhead at C."""
    changed = False
    for a in window.nodes:
        for c in window.neighbors(a):
            if window.mark(c, a) != CIRCLE:
                continue
            for b in window.neighbors(a):
                if b == c or not window.adjacent(b, c):
                    continue
                first = window.is_parent(a, b) and window.mark(c, b) == ARROW
                second = window.mark(b, a) == ARROW and window.is_parent(b, c)
                if (first or second) and window.set_mark(c, a, ARROW):
                    changed = True
    return changed


def _rule3(window: _Window) -> bool:
    """A *-> B <-* C, A *-o D o-* C, A, C nonadjacent, D *-o B: arrowhead at B on D--B."""
    changed = False
    for b in window.nodes:
        for d in window.neighbors(b):
            if window.mark(b, d) != CIRCLE:
                continue
            into_b = [x for x in window.neighbors(b) if x != d and window.mark(b, x) == ARROW]
            for a, c in itertools.combinations(into_b, 2):
                if window.adjacent(a, c):
                    continue
                if not (window.adjacent(a, d) and window.adjacent(c, d)):
                    continue
                if window.mark(d, a) == CIRCLE and window.mark(d, c) == CIRCLE:
                    if window.set_mark(b, d, ARROW):
                        changed = True
    return changed


def _rule4(window: _Window, search: _Search) -> bool:
    """Discriminating paths for B with B o-* C."""
    changed = False
    for c in window.nodes:
        for b in window.neighbors(c):
            if window.mark(b, c) != CIRCLE:
                continue
            for a in window.neighbors(b):
                if a == c or not window.is_parent(a, c) or window.mark(a, b) != ARROW:
                    continue
                d = _discriminating_end(window, a, b, c)
                if d is None:
                    continue
                sepset = search.sepset(d, c)
                if sepset is None:
                    continue
                if b in sepset:
                    if window.set_mark(b, c, TAIL):
                        window.set_mark(c, b, ARROW)
                        changed = True
                else:
                    results = [window.set_mark(b, c, ARROW), window.set_mark(c, b, ARROW),
                               window.set_mark(b, a, ARROW), window.set_mark(a, b, ARROW)]
                    changed = changed or any(results)
    return changed


def _discriminating_end(window: _Window, a: Node, b: Node, c: Node) -> Optional[Node]:
    """Walk back from collider-parent a towards an endpoint not adjacent to c."""
    visited = {a, b, c}
    frontier = [a]
    while frontier:
        nxt = []
        for v in frontier:
            for d in window.neighbors(v):
                if d in visited or window.mark(v, d) != ARROW:
                    continue
                visited.add(d)
                if not window.adjacent(d, c):
                    return d
                if window.mark(d, v) == ARROW and window.is_parent(d, c):
                    nxt.append(d)
        frontier = nxt
    return None


def _orient(window: _Window, search: _Search, knowledge: Knowledge):
    _initial_marks(window, knowledge)
    _orient_colliders(window, search)
    iterations = 0
    while True:
        iterations += 1
        changed = _rule1(window)
        changed = _rule2(window) or changed
        changed = _rule3(window) or changed
        changed = _rule4(window, search) or changed
        if not changed:
            break
    logger.debug(f"Orientation reached a fixpoint after {iterations} sweeps")


def discover(ds: Optional[TimeSeriesDataset], tau_max: int = DEFAULT_TAU_MAX, alpha: float = DEFAULT_ALPHA,
             tester: Optional[CiTester] = None, knowledge: Optional[Knowledge] = None,
             prelim_iters: int = 1, max_cond_dim: Optional[int] = None, workers: int = 1) -> TimeSeriesPAG:
    """
    Estimate a time-series PAG.

    Args:
        ds: dataset; may be None when a tester carrying variable names is supplied
        tau_max: largest lag in the window (>= 1)
        alpha: significance level
        tester: CI tester; partial correlation on ds by default
        knowledge: forbidden/required triples
        prelim_iters: refinement passes conditioning on identified lagged parents
        max_cond_dim: cap on the searched conditioning cardinality
        workers: concurrent CI tests within a skeleton level

    Returns:
        TimeSeriesPAG with per-edge strongest statistic and minimal p-value
    """
    if tau_max < 1:
        raise GraphError(f"tau_max must be >= 1, got {tau_max}")
    if prelim_iters < 0:
        raise GraphError(f"prelim_iters must be >= 0, got {prelim_iters}")
    if tester is None:
        if ds is None:
            raise GraphError("either a dataset or a tester is required")
        tester = PartialCorrelationTester(ds, tau_max)
    names = ds.variable_names if ds is not None else tester.variable_names
    knowledge = knowledge or Knowledge.empty()
    knowledge.check_names(names)
    if knowledge.max_lag() > tau_max:
        logger.info(f"Knowledge beyond tau_max={tau_max} is ignored")

    n = len(names)
    window = _Window(n, tau_max, names)
    for i, j in itertools.combinations(range(n), 2):
        window.marks[(i, j, 0)] = []
    for lag in range(1, tau_max + 1):
        for i in range(n):
            for j in range(n):
                window.marks[(i, j, lag)] = []
    for lag in range(1, tau_max + 1):
        for cause, effect in knowledge.index_pairs(names, lag):
            window.remove((cause, effect, lag))

    required = _required_keys(window, knowledge)
    for key in required:
        if key not in window.marks:
            raise KnowledgeError(f"required edge {key} is also forbidden")
    search = _Search(window, tester, alpha, required, max_cond_dim, workers)

    search.skeleton(mci=False)
    _orient(window, search, knowledge)
    for iteration in range(prelim_iters):
        search.skeleton(mci=True)
        _orient(window, search, knowledge)
        logger.debug(f"Refinement pass {iteration + 1} done: {len(window.marks)} edges")

    edges = tuple(PagEdge(i, j, lag, marks[0], marks[1], search.statistic.get((i, j, lag), 0.0),
                          search.p_value.get((i, j, lag), 1.0))
                  for (i, j, lag), marks in sorted(window.marks.items()))
    logger.info(f"LPCMCI tau_max={tau_max} alpha={alpha}: {len(edges)} edges after "
                f"{search.n_tests} CI tests, {len(window.conflicts)} orientation conflicts")
    return TimeSeriesPAG(tuple(names), tau_max, edges)
