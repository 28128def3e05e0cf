"""
Graphs Service
Lagged DAGs, time-series PAGs and summary graphs, with collapse, export,
comparison and structural distance.

JSON documents carry ``"schema": "market-causality/graph@1"`` and a ``kind`` of
``lagged_dag``, ``pag`` or ``summary``.
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import graphviz
import networkx as nx
import numpy as np

from services.errors import GraphError

logger = logging.getLogger(__name__)

SCHEMA = 'market-causality/graph@1'

TAIL = 'tail'
ARROW = 'arrow'
CIRCLE = 'circle'
MARKS = (TAIL, ARROW, CIRCLE)

_LEFT = {TAIL: '-', ARROW: '<', CIRCLE: 'o'}
_RIGHT = {TAIL: '-', ARROW: '>', CIRCLE: 'o'}
_DOT_MARK = {TAIL: 'none', ARROW: 'normal', CIRCLE: 'odot'}


def link_string(mark_source: str, mark_target: str) -> str:
    """Render end marks as '-->', 'o->', 'o-o', '<->', '<--' or '<-o'."""
    return f"{_LEFT[mark_source]}-{_RIGHT[mark_target]}"


@dataclass(frozen=True, eq=False)
class LaggedDag:
    """matrices[lag][effect, cause]; weight 0 means no edge."""

    variable_names: Tuple[str, ...]
    matrices: np.ndarray

    def __post_init__(self):
        matrices = np.array(self.matrices, dtype=float)
        n = len(self.variable_names)
        if matrices.ndim != 3 or matrices.shape[1:] != (n, n) or matrices.shape[0] < 1:
            raise GraphError(f"adjacency must have shape (lags, {n}, {n}), got {matrices.shape}")
        if np.any(np.diag(matrices[0]) != 0):
            raise GraphError("lag-0 adjacency has a self-loop")
        graph = nx.DiGraph((j, i) for i, j in zip(*np.nonzero(matrices[0])))
        if not nx.is_directed_acyclic_graph(graph):
            raise GraphError("lag-0 adjacency is cyclic")
        matrices.setflags(write=False)
        object.__setattr__(self, 'variable_names', tuple(self.variable_names))
        object.__setattr__(self, 'matrices', matrices)

    @property
    def max_lag(self) -> int:
        return self.matrices.shape[0] - 1

    def edges(self) -> Iterator[Tuple[int, int, int, float]]:
        """(cause, effect, lag, weight) for every nonzero entry."""
        for lag, effect, cause in zip(*np.nonzero(self.matrices)):
            yield int(cause), int(effect), int(lag), float(self.matrices[lag, effect, cause])


@dataclass(frozen=True)
class PagEdge:
    """
    Edge between (source, t - lag) and (target, t). Lag-0 edges are stored with
    source < target.
    """

    source: int
    target: int
    lag: int
    mark_source: str
    mark_target: str
    statistic: float = 0.0
    p_value: float = 1.0

    @property
    def link(self) -> str:
        return link_string(self.mark_source, self.mark_target)


@dataclass(frozen=True)
class TimeSeriesPAG:
    variable_names: Tuple[str, ...]
    tau_max: int
    edges: Tuple[PagEdge, ...]

    def __post_init__(self):
        n = len(self.variable_names)
        seen = set()
        for e in self.edges:
            if e.mark_source not in MARKS or e.mark_target not in MARKS:
                raise GraphError(f"unknown end mark in {e}")
            if not (0 <= e.source < n and 0 <= e.target < n and 0 <= e.lag <= self.tau_max):
                raise GraphError(f"edge outside the window: {e}")
            if e.lag == 0 and e.source >= e.target:
                raise GraphError(f"lag-0 edge must be stored with source < target: {e}")
            if e.lag > 0 and e.mark_source == ARROW:
                raise GraphError(f"arrowhead at the earlier node of {e}")
            key = (e.source, e.target, e.lag)
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
        object.__setattr__(self, 'variable_names', tuple(self.variable_names))
        object.__setattr__(self, 'edges', tuple(sorted(self.edges, key=lambda e: (e.lag, e.source, e.target))))

    def edge(self, source: int, target: int, lag: int) -> Optional[PagEdge]:
        """Edge between (source, t - lag) and (target, t), marks oriented that way."""
        if lag == 0 and source > target:
            found = self.edge(target, source, 0)
            if found is None:
                return None
            return PagEdge(source, target, 0, found.mark_target, found.mark_source,
                           found.statistic, found.p_value)
        for e in self.edges:
            if (e.source, e.target, e.lag) == (source, target, lag):
                return e
        return None

    def window_edges(self) -> Iterator[Tuple[Tuple[int, int], Tuple[int, int], str, str]]:
        """Every translated copy inside the window as ((var, lag), (var, lag), mark, mark)."""
        for e in self.edges:
            for shift in range(self.tau_max - e.lag + 1):
                yield (e.source, e.lag + shift), (e.target, shift), e.mark_source, e.mark_target

    def links(self) -> List[Dict[str, Any]]:
        return [{'source': self.variable_names[e.source], 'target': self.variable_names[e.target],
                 'lag': e.lag, 'link': e.link, 'statistic': e.statistic, 'p_value': e.p_value}
                for e in self.edges]


@dataclass(frozen=True)
class SummaryEdge:
    cause: str
    effect: str
    strength: float
    lags: Tuple[int, ...]
    contemporaneous: bool
    mark_cause: str = TAIL
    mark_effect: str = ARROW

    @property
    def sign(self) -> int:
        return int(np.sign(self.strength))


@dataclass(frozen=True)
class SummaryGraph:
    variable_names: Tuple[str, ...]
    edges: Tuple[SummaryEdge, ...]
    source_kind: str = 'lagged_dag'

    def edge(self, cause: str, effect: str) -> Optional[SummaryEdge]:
        for e in self.edges:
            if (e.cause, e.effect) == (cause, effect):
                return e
        return None

    def pairs(self) -> Dict[Tuple[str, str], SummaryEdge]:
        return {(e.cause, e.effect): e for e in self.edges}


Graph = Union[LaggedDag, TimeSeriesPAG, SummaryGraph]


def _summary_edge(cause: str, effect: str, contributions: List[Tuple[int, float, str, str]]) -> SummaryEdge:
    ranked = sorted(contributions, key=lambda c: (-abs(c[1]), c[0]))
    lag, strength, mark_cause, mark_effect = ranked[0]
    lags = tuple(c[0] for c in ranked)
    contemporaneous = lags == (0,)
    return SummaryEdge(cause, effect, float(strength), () if contemporaneous else lags,
                       contemporaneous, mark_cause, mark_effect)


def collapse(model: Graph) -> SummaryGraph:
    """
    One edge per ordered pair of distinct variables. The displayed strength and
    sign come from the strongest lag; lags are listed by descending |strength|,
    ties by ascending lag. Edges seen only at lag 0 carry no lag labels.
    """
    if isinstance(model, SummaryGraph):
        return model
    names = model.variable_names
    grouped: Dict[Tuple[int, int], List[Tuple[int, float, str, str]]] = {}
    if isinstance(model, LaggedDag):
        kind = 'lagged_dag'
        for cause, effect, lag, weight in model.edges():
            if cause != effect:
                grouped.setdefault((cause, effect), []).append((lag, weight, TAIL, ARROW))
    elif isinstance(model, TimeSeriesPAG):
        kind = 'pag'
        for e in model.edges:
            if e.source == e.target:
                continue
            if e.lag == 0 and e.mark_source == ARROW and e.mark_target != ARROW:
                key, marks = (e.target, e.source), (e.mark_target, e.mark_source)
            else:
                key, marks = (e.source, e.target), (e.mark_source, e.mark_target)
            grouped.setdefault(key, []).append((e.lag, e.statistic) + marks)
    else:
        raise GraphError(f"cannot collapse {type(model).__name__}")
    edges = tuple(_summary_edge(names[c], names[e], grouped[(c, e)]) for c, e in sorted(grouped))
    return SummaryGraph(tuple(names), edges, kind)


def varlingam_to_lpcmci_form(model) -> SummaryGraph:
    """Summary graph of a standardized VAR-LiNGAM model."""
    if not getattr(model, 'standardized', False):
        raise GraphError("VAR-LiNGAM model must be fitted on standardized data")
    return collapse(model.to_lagged_dag())


@dataclass(frozen=True)
class StructuralDistance:
    hamming: int
    precision: float
    recall: float
    false_positive_rate: float
    true_positives: int
    false_positives: int
    false_negatives: int


def structural_distance(a: LaggedDag, b: LaggedDag, threshold: float = 0.0) -> StructuralDistance:
    """Compare a (estimate) against b (truth) after binarizing |w| > threshold."""
    if a.variable_names != b.variable_names or a.matrices.shape != b.matrices.shape:
        raise GraphError(f"cannot compare graphs of shapes {a.matrices.shape} and {b.matrices.shape}")
    candidates = np.ones(a.matrices.shape, dtype=bool)
    np.fill_diagonal(candidates[0], False)
    est = (np.abs(a.matrices) > threshold) & candidates
    truth = (np.abs(b.matrices) > threshold) & candidates
    tp = int((est & truth).sum())
    fp = int((est & ~truth).sum())
    fn = int((~est & truth).sum())
    negatives = int((candidates & ~truth).sum())
    return StructuralDistance(
        hamming=fp + fn,
        precision=tp / (tp + fp) if tp + fp else 1.0,
        recall=tp / (tp + fn) if tp + fn else 1.0,
        false_positive_rate=fp / negatives if negatives else 0.0,
        true_positives=tp, false_positives=fp, false_negatives=fn,
    )


def compare_summaries(a: SummaryGraph, b: SummaryGraph) -> Dict[str, Any]:
    """Adjacencies shared by two summary graphs and whether direction and sign agree."""
    def adjacency(g: SummaryGraph) -> Dict[Tuple[str, str], List[SummaryEdge]]:
        out: Dict[Tuple[str, str], List[SummaryEdge]] = {}
        for e in g.edges:
            out.setdefault(tuple(sorted((e.cause, e.effect))), []).append(e)
        return out

    adj_a, adj_b = adjacency(a), adjacency(b)
    shared = []
    for pair in sorted(set(adj_a) & set(adj_b)):
        dirs_a = sorted((e.cause, e.effect) for e in adj_a[pair])
        dirs_b = sorted((e.cause, e.effect) for e in adj_b[pair])
        top_a = max(adj_a[pair], key=lambda e: abs(e.strength))
        top_b = max(adj_b[pair], key=lambda e: abs(e.strength))
        shared.append({'pair': list(pair), 'a': [list(d) for d in dirs_a], 'b': [list(d) for d in dirs_b],
                       'direction_agrees': dirs_a == dirs_b, 'sign_agrees': top_a.sign == top_b.sign})
    return {
        'shared': shared,
        'only_a': [list(p) for p in sorted(set(adj_a) - set(adj_b))],
        'only_b': [list(p) for p in sorted(set(adj_b) - set(adj_a))],
    }


def to_document(graph: Graph) -> Dict[str, Any]:
    if isinstance(graph, LaggedDag):
        return {'schema': SCHEMA, 'kind': 'lagged_dag', 'variables': list(graph.variable_names),
                'matrices': graph.matrices.tolist()}
    if isinstance(graph, TimeSeriesPAG):
        return {'schema': SCHEMA, 'kind': 'pag', 'variables': list(graph.variable_names),
                'tau_max': graph.tau_max,
                'edges': [{'source': e.source, 'target': e.target, 'lag': e.lag,
                           'mark_source': e.mark_source, 'mark_target': e.mark_target,
                           'statistic': e.statistic, 'p_value': e.p_value} for e in graph.edges]}
    if isinstance(graph, SummaryGraph):
        return {'schema': SCHEMA, 'kind': 'summary', 'variables': list(graph.variable_names),
                'source_kind': graph.source_kind,
                'edges': [{'cause': e.cause, 'effect': e.effect, 'strength': e.strength,
                           'sign': e.sign, 'lags': list(e.lags), 'contemporaneous': e.contemporaneous,
                           'mark_cause': e.mark_cause, 'mark_effect': e.mark_effect}
                          for e in graph.edges]}
    raise GraphError(f"cannot serialize {type(graph).__name__}")


def from_document(doc: Dict[str, Any]) -> Graph:
    if doc.get('schema') != SCHEMA:
        raise GraphError(f"unsupported graph schema {doc.get('schema')!r}")
    names = tuple(doc['variables'])
    kind = doc.get('kind')
    if kind == 'lagged_dag':
        return LaggedDag(names, np.array(doc['matrices'], dtype=float).reshape(-1, len(names), len(names)))
    if kind == 'pag':
        return TimeSeriesPAG(names, int(doc['tau_max']),
                             tuple(PagEdge(e['source'], e['target'], e['lag'], e['mark_source'],
                                           e['mark_target'], e['statistic'], e['p_value'])
                                   for e in doc['edges']))
    if kind == 'summary':
        return SummaryGraph(names, tuple(SummaryEdge(e['cause'], e['effect'], e['strength'],
                                                     tuple(e['lags']), e['contemporaneous'],
                                                     e['mark_cause'], e['mark_effect'])
                                         for e in doc['edges']), doc.get('source_kind', 'lagged_dag'))
    raise GraphError(f"unknown graph kind {kind!r}")


def from_json(text: str) -> Graph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphError(f"invalid graph JSON: {e}") from e
    return from_document(doc)


def _colour(strength: float, scale: float) -> str:
    """Red for positive, blue for negative; opacity follows |strength| / scale."""
    intensity = abs(strength) / scale if scale > 0 else 1.0
    alpha = int(round(64 + 191 * min(1.0, intensity)))
    base = 'ff0000' if strength > 0 else '0000ff'
    return f"#{base}{alpha:02x}"


def _node_id(var: int, lag: int) -> str:
    return f"v{var}_l{lag}"


def _node_label(name: str, lag: int) -> str:
    return f"{name}(t)" if lag == 0 else f"{name}(t-{lag})"


def _dot(graph: Graph) -> str:
    names = graph.variable_names
    dot = graphviz.Digraph('causal_graph', graph_attr={'rankdir': 'LR'}, node_attr={'shape': 'ellipse'})
    if isinstance(graph, LaggedDag):
        edges = list(graph.edges())
        scale = max((abs(w) for *_, w in edges), default=0.0)
        nodes = {(e, 0) for _, e, _, _ in edges} | {(c, lag) for c, _, lag, _ in edges}
        for var, lag in sorted(nodes):
            dot.node(_node_id(var, lag), _node_label(names[var], lag))
        for cause, effect, lag, weight in edges:
            dot.edge(_node_id(cause, lag), _node_id(effect, 0), label=f"{weight:.3f}",
                     color=_colour(weight, scale))
    elif isinstance(graph, TimeSeriesPAG):
        scale = max((abs(e.statistic) for e in graph.edges), default=0.0)
        nodes = {(e.source, e.lag) for e in graph.edges} | {(e.target, 0) for e in graph.edges}
        for var, lag in sorted(nodes):
            dot.node(_node_id(var, lag), _node_label(names[var], lag))
        for e in graph.edges:
            dot.edge(_node_id(e.source, e.lag), _node_id(e.target, 0), dir='both',
                     arrowtail=_DOT_MARK[e.mark_source], arrowhead=_DOT_MARK[e.mark_target],
                     label=f"{e.statistic:.3f}", color=_colour(e.statistic, scale))
    elif isinstance(graph, SummaryGraph):
        scale = max((abs(e.strength) for e in graph.edges), default=0.0)
        index = {n: i for i, n in enumerate(names)}
        for i, name in enumerate(names):
            dot.node(_node_id(i, 0), name)
        for e in graph.edges:
            attrs = {'dir': 'both', 'arrowtail': _DOT_MARK[e.mark_cause],
                     'arrowhead': _DOT_MARK[e.mark_effect], 'color': _colour(e.strength, scale)}
            if e.lags:
                attrs['label'] = ', '.join(str(lag) for lag in e.lags)
            dot.edge(_node_id(index[e.cause], 0), _node_id(index[e.effect], 0), **attrs)
    else:
        raise GraphError(f"cannot export {type(graph).__name__}")
    return dot.source


def export(graph: Graph, fmt: str) -> str:
    """
    Serialize a graph.

    Args:
        graph: LaggedDag, TimeSeriesPAG or SummaryGraph
        fmt: 'dot' or 'json'

    Returns:
        Text document
    """
    if fmt == 'json':
        return json.dumps(to_document(graph), sort_keys=True, indent=2)
    if fmt == 'dot':
        return _dot(graph)
    raise GraphError(f"unknown export format '{fmt}', expected 'dot' or 'json'")
