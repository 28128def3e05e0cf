"""
Tests for graph types, collapse, comparison, distance and export
"""

import json

import numpy as np
import pytest

from services import graphs
from services.errors import GraphError
from services.graphs import (ARROW, CIRCLE, TAIL, LaggedDag, PagEdge, SummaryGraph, TimeSeriesPAG, collapse,
                             compare_summaries, export, from_json, link_string, structural_distance,
                             varlingam_to_lpcmci_form)

pytestmark = pytest.mark.unit

NAMES = ('a', 'b', 'c')


def dag(*entries, lags=1):
    """entries are (cause, effect, lag, weight) over NAMES."""
    matrices = np.zeros((lags + 1, 3, 3))
    for cause, effect, lag, weight in entries:
        matrices[lag, NAMES.index(effect), NAMES.index(cause)] = weight
    return LaggedDag(NAMES, matrices)


class FakeModel:
    def __init__(self, graph, standardized):
        self.graph = graph
        self.standardized = standardized

    def to_lagged_dag(self):
        return self.graph


class TestLaggedDag:

    def test_rejects_cycle(self):
        with pytest.raises(GraphError, match='cyclic'):
            dag(('a', 'b', 0, 0.5), ('b', 'a', 0, 0.5))

    def test_rejects_self_loop(self):
        with pytest.raises(GraphError):
            dag(('a', 'a', 0, 0.5))

    def test_lagged_self_effect_allowed(self):
        assert list(dag(('a', 'a', 1, 0.5)).edges()) == [(0, 0, 1, 0.5)]

    def test_shape_mismatch(self):
        with pytest.raises(GraphError):
            LaggedDag(NAMES, np.zeros((1, 2, 2)))


class TestPag:

    def test_link_strings(self):
        assert link_string(TAIL, ARROW) == '-->'
        assert link_string(CIRCLE, ARROW) == 'o->'
        assert link_string(CIRCLE, CIRCLE) == 'o-o'
        assert link_string(ARROW, ARROW) == '<->'
        assert link_string(ARROW, TAIL) == '<--'

    def test_lag0_edge_lookup_either_way(self):
        pag = TimeSeriesPAG(NAMES, 1, (PagEdge(0, 1, 0, CIRCLE, ARROW),))
        assert pag.edge(0, 1, 0).link == 'o->'
        assert pag.edge(1, 0, 0).link == '<-o'
        assert pag.edge(0, 2, 0) is None

    def test_no_arrow_into_the_past(self):
        with pytest.raises(GraphError):
            TimeSeriesPAG(NAMES, 1, (PagEdge(0, 1, 1, ARROW, ARROW),))

    def test_window_copies(self):
        pag = TimeSeriesPAG(NAMES, 2, (PagEdge(0, 1, 1, TAIL, ARROW),))
        copies = list(pag.window_edges())
        assert copies == [((0, 1), (1, 0), TAIL, ARROW), ((0, 2), (1, 1), TAIL, ARROW)]


class TestCollapse:

    def test_lags_ordered_by_strength(self):
        summary = collapse(dag(('a', 'b', 0, 0.2), ('a', 'b', 1, 0.5)))
        edge = summary.edge('a', 'b')
        assert edge.lags == (1, 0)
        assert edge.strength == pytest.approx(0.5)
        assert not edge.contemporaneous
        assert len(summary.edges) == 1

    def test_empty(self):
        assert collapse(dag()).edges == ()

    def test_negative_sign(self):
        edge = collapse(dag(('a', 'c', 1, -0.4), ('a', 'c', 2, 0.1), lags=2)).edge('a', 'c')
        assert edge.sign == -1
        assert '#0000ff' in export(collapse(dag(('a', 'c', 1, -0.4))), 'dot')

    def test_contemporaneous_only(self):
        edge = collapse(dag(('b', 'c', 0, 0.3))).edge('b', 'c')
        assert edge.contemporaneous
        assert edge.lags == ()

    def test_self_effects_dropped(self):
        assert collapse(dag(('a', 'a', 1, 0.9))).edges == ()

    def test_idempotent(self):
        summary = collapse(dag(('a', 'b', 1, 0.3), ('c', 'b', 0, -0.2)))
        assert collapse(summary) == summary

    def test_pag_collapse_keeps_marks(self):
        pag = TimeSeriesPAG(NAMES, 1, (PagEdge(0, 1, 0, ARROW, TAIL, 0.4, 0.0),
                                       PagEdge(2, 1, 1, CIRCLE, ARROW, -0.3, 0.0)))
        summary = collapse(pag)
        # stored a <-- b reads as b --> a
        assert summary.edge('b', 'a').mark_effect == ARROW
        assert summary.edge('c', 'b').mark_cause == CIRCLE
        assert summary.source_kind == 'pag'

    def test_varlingam_form_requires_standardized(self):
        graph = dag(('a', 'b', 1, 0.3))
        with pytest.raises(GraphError):
            varlingam_to_lpcmci_form(FakeModel(graph, standardized=False))
        summary = varlingam_to_lpcmci_form(FakeModel(graph, standardized=True))
        assert [(e.cause, e.effect) for e in summary.edges] == [('a', 'b')]

    def test_lag1_only_model_has_no_contemporaneous_edges(self):
        summary = varlingam_to_lpcmci_form(FakeModel(dag(('a', 'b', 1, 0.3), ('c', 'a', 1, 0.2)), True))
        assert all(e.lags == (1,) and not e.contemporaneous for e in summary.edges)


class TestStructuralDistance:

    def test_identical(self):
        g = dag(('a', 'b', 0, 0.3), ('c', 'a', 1, 0.4))
        d = structural_distance(g, g)
        assert (d.hamming, d.precision, d.recall) == (0, 1.0, 1.0)

    def test_empty_estimate(self):
        truth = dag(('a', 'b', 0, 0.3), ('c', 'a', 1, 0.4), ('b', 'b', 1, 0.2))
        d = structural_distance(dag(), truth)
        assert d.recall == 0.0
        assert d.hamming == 3

    def test_matches_entrywise_count(self):
        g = np.random.default_rng(0)
        for _ in range(10):
            a = g.normal(size=(2, 3, 3)) * (g.random((2, 3, 3)) < 0.4)
            b = g.normal(size=(2, 3, 3)) * (g.random((2, 3, 3)) < 0.4)
            a[0] = np.tril(a[0], k=-1)
            b[0] = np.tril(b[0], k=-1)
            d = structural_distance(LaggedDag(NAMES, a), LaggedDag(NAMES, b), threshold=0.1)
            expected = sum((abs(a[k, i, j]) > 0.1) != (abs(b[k, i, j]) > 0.1)
                           for k in range(2) for i in range(3) for j in range(3) if k or i != j)
            assert d.hamming == expected

    def test_shape_mismatch(self):
        with pytest.raises(GraphError):
            structural_distance(dag(), dag(lags=2))


class TestCompare:

    def test_shared_and_exclusive(self):
        a = collapse(dag(('a', 'b', 1, 0.3), ('a', 'c', 0, 0.2)))
        b = collapse(dag(('a', 'b', 0, -0.4), ('b', 'c', 1, 0.2)))
        result = compare_summaries(a, b)
        assert result['shared'][0]['pair'] == ['a', 'b']
        assert result['shared'][0]['direction_agrees'] is True
        assert result['shared'][0]['sign_agrees'] is False
        assert result['only_a'] == [['a', 'c']]
        assert result['only_b'] == [['b', 'c']]


class TestExport:

    @pytest.mark.parametrize('graph', [
        dag(('a', 'b', 0, 0.3), ('c', 'a', 1, -0.4)),
        TimeSeriesPAG(NAMES, 2, (PagEdge(0, 1, 0, CIRCLE, ARROW, 0.2, 0.01),
                                 PagEdge(2, 0, 2, TAIL, ARROW, 0.3, 0.0))),
        collapse(dag(('a', 'b', 1, 0.3))),
    ])
    def test_json_round_trip(self, graph):
        parsed = from_json(export(graph, 'json'))
        assert type(parsed) is type(graph)
        assert graphs.to_document(parsed) == graphs.to_document(graph)

    def test_pag_dot_attributes(self):
        pag = TimeSeriesPAG(NAMES, 1, (PagEdge(0, 1, 1, CIRCLE, ARROW, 0.3, 0.0),))
        source = export(pag, 'dot')
        assert 'arrowtail=odot' in source
        assert 'arrowhead=normal' in source
        assert 'dir=both' in source

    def test_positive_edges_red(self):
        assert '#ff0000' in export(dag(('a', 'b', 1, 0.3)), 'dot')

    def test_empty_graph(self):
        doc = json.loads(export(SummaryGraph(NAMES, ()), 'json'))
        assert doc['edges'] == []
        assert doc['schema'] == graphs.SCHEMA
        assert 'digraph' in export(dag(), 'dot')

    def test_unknown_format(self):
        with pytest.raises(GraphError):
            export(dag(), 'png')

    def test_bad_schema(self):
        with pytest.raises(GraphError):
            from_json(json.dumps({'schema': 'other@1', 'kind': 'summary', 'variables': []}))
