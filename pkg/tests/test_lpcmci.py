"""
Tests for LPCMCI discovery, the d-separation oracle and the sample tester
"""

import numpy as np
import pytest

from services.errors import GraphError, StatTestError
from services.graphs import ARROW, CIRCLE, TAIL, collapse
from services.knowledge import Knowledge
from services.lpcmci import PartialCorrelationTester, discover, make_dsep_oracle
from services.synthbench import generate, suite


def links_of(pag):
    """{(source, target, lag): link} with names."""
    names = pag.variable_names
    return {(names[e.source], names[e.target], e.lag): e.link for e in pag.edges}


def oracle_pag(links, variables, latents=(), tau_max=1, **kwargs):
    tester = make_dsep_oracle(links, variables, latents, tau_max=tau_max)
    return discover(None, tau_max=tau_max, tester=tester, **kwargs)


@pytest.mark.unit
class TestDsepOracle:

    def test_chain_screened_off(self):
        oracle = make_dsep_oracle([('X', 'Z', 0), ('Z', 'Y', 0)], ['X', 'Y', 'Z'])
        assert oracle.run((0, 0), (1, 0), [(2, 0)]).independent(0.05)
        assert not oracle.run((0, 0), (1, 0), []).independent(0.05)

    def test_collider(self):
        oracle = make_dsep_oracle([('X', 'Z', 0), ('Y', 'Z', 0)], ['X', 'Y', 'Z'])
        assert not oracle.run((0, 0), (1, 0), [(2, 0)]).independent(0.05)
        assert oracle.run((0, 0), (1, 0), []).independent(0.05)

    def test_lagged_paths_are_unrolled(self):
        oracle = make_dsep_oracle([('X', 'X', 1), ('X', 'Y', 1)], ['X', 'Y'], tau_max=2)
        assert not oracle.run((0, 2), (1, 0), []).independent(0.05)
        assert oracle.run((0, 2), (1, 0), [(0, 1)]).independent(0.05)

    def test_latent_confounder(self):
        oracle = make_dsep_oracle([('L', 'X', 0), ('L', 'Y', 0)], ['X', 'Y'], latents=['L'])
        assert not oracle.run((0, 0), (1, 0), []).independent(0.05)

    def test_rejects_bad_truths(self):
        with pytest.raises(GraphError):
            make_dsep_oracle([('X', 'Y', 0), ('Y', 'X', 0)], ['X', 'Y'])
        with pytest.raises(GraphError):
            make_dsep_oracle([('X', 'W', 0)], ['X', 'Y'])
        with pytest.raises(GraphError):
            make_dsep_oracle([('X', 'Y', -1)], ['X', 'Y'])


@pytest.mark.unit
class TestCanonicalStructures:
    """The oracle tester recovers the true PAG on canonical structures."""

    def test_chain(self):
        pag = oracle_pag([('X', 'Y', 0), ('Y', 'Z', 0)], ['X', 'Y', 'Z'])
        assert links_of(pag) == {('X', 'Y', 0): 'o-o', ('Y', 'Z', 0): 'o-o'}

    def test_fork(self):
        pag = oracle_pag([('Y', 'X', 0), ('Y', 'Z', 0)], ['X', 'Y', 'Z'])
        assert links_of(pag) == {('X', 'Y', 0): 'o-o', ('Y', 'Z', 0): 'o-o'}

    def test_collider(self):
        pag = oracle_pag([('X', 'Z', 0), ('Y', 'Z', 0)], ['X', 'Y', 'Z'])
        assert links_of(pag) == {('X', 'Z', 0): 'o->', ('Y', 'Z', 0): 'o->'}

    def test_hidden_confounder(self):
        links = [('L', 'X', 0), ('L', 'Y', 0), ('X', 'X', 1), ('Y', 'Y', 1)]
        pag = oracle_pag(links, ['X', 'Y'], latents=['L'])
        assert links_of(pag) == {('X', 'Y', 0): '<->', ('X', 'X', 1): '-->', ('Y', 'Y', 1): '-->'}

    def test_hidden_confounder_with_direct_edge(self):
        links = [('L', 'X', 0), ('L', 'Y', 0), ('X', 'Y', 1)]
        pag = oracle_pag(links, ['X', 'Y'], latents=['L'])
        assert links_of(pag) == {('X', 'Y', 0): 'o->', ('X', 'Y', 1): 'o->'}

    def test_lagged_chain(self):
        pag = oracle_pag([('X', 'Y', 1), ('Y', 'Z', 1)], ['X', 'Y', 'Z'])
        assert links_of(pag) == {('X', 'Y', 1): 'o->', ('Y', 'Z', 1): 'o->'}

    def test_contemporaneous_and_lagged_mix(self):
        pag = oracle_pag([('X', 'Y', 1), ('Y', 'Z', 0)], ['X', 'Y', 'Z'])
        assert links_of(pag) == {('X', 'Y', 1): 'o->', ('Y', 'Z', 0): '-->'}

    def test_two_independent_pairs(self):
        pag = oracle_pag([('A', 'B', 0), ('C', 'D', 0)], ['A', 'B', 'C', 'D'])
        assert links_of(pag) == {('A', 'B', 0): 'o-o', ('C', 'D', 0): 'o-o'}

    def test_bare_latent_pair_is_unoriented(self):
        pag = oracle_pag([('L', 'X', 0), ('L', 'Y', 0)], ['X', 'Y'], latents=['L'])
        assert links_of(pag) == {('X', 'Y', 0): 'o-o'}


@pytest.mark.unit
class TestInvariants:

    def test_no_arrowhead_into_the_past(self):
        pag = oracle_pag([('X', 'Y', 1), ('Y', 'X', 2), ('X', 'X', 1)], ['X', 'Y'], tau_max=2)
        for edge in pag.edges:
            if edge.lag > 0:
                assert edge.mark_source != ARROW
                assert edge.mark_target == ARROW

    def test_workers_do_not_change_result(self):
        links = [('X', 'Y', 1), ('Y', 'Z', 0), ('Z', 'Z', 1)]
        tester = make_dsep_oracle(links, ['X', 'Y', 'Z'], tau_max=2)
        serial = discover(None, tau_max=2, tester=tester)
        parallel = discover(None, tau_max=2, tester=tester, workers=4)
        assert serial == parallel

    def test_refinement_passes_keep_oracle_result(self):
        links = [('X', 'Y', 1), ('Y', 'Z', 0)]
        without = oracle_pag(links, ['X', 'Y', 'Z'], prelim_iters=0)
        with_two = oracle_pag(links, ['X', 'Y', 'Z'], prelim_iters=2)
        assert links_of(without) == links_of(with_two)

    def test_alpha_does_not_change_oracle_result(self):
        links = [('X', 'Y', 1), ('Y', 'Z', 0), ('Z', 'Z', 1)]
        skeletons = []
        for alpha in (0.001, 0.05, 0.5):
            found = links_of(oracle_pag(links, ['X', 'Y', 'Z'], tau_max=2, alpha=alpha))
            skeletons.append(set(found))
        assert skeletons[0] <= skeletons[1] <= skeletons[2]
        assert skeletons[0] == skeletons[2]

    def test_parameter_checks(self):
        tester = make_dsep_oracle([('X', 'Y', 0)], ['X', 'Y'])
        with pytest.raises(GraphError):
            discover(None, tau_max=0, tester=tester)
        with pytest.raises(GraphError):
            discover(None)


@pytest.mark.unit
class TestKnowledge:

    def test_lag0_forbidden_puts_arrow_at_cause(self):
        knowledge = Knowledge(forbidden={('X', 'Y', 0)})
        pag = oracle_pag([('X', 'Y', 0)], ['X', 'Y'], knowledge=knowledge)
        edge = pag.edge(0, 1, 0)
        assert edge.mark_source == ARROW
        assert edge.mark_target == CIRCLE

    def test_lagged_forbidden_removes_edge(self):
        knowledge = Knowledge(forbidden={('X', 'Y', 1)})
        pag = oracle_pag([('X', 'Y', 1), ('Y', 'Z', 0)], ['X', 'Y', 'Z'], knowledge=knowledge)
        assert ('X', 'Y', 1) not in links_of(pag)

    def test_required_edge_never_removed(self):
        knowledge = Knowledge(required={('A', 'C', 0)})
        pag = oracle_pag([('A', 'B', 0), ('C', 'D', 0)], ['A', 'B', 'C', 'D'], knowledge=knowledge)
        edge = pag.edge(0, 2, 0)
        assert (edge.mark_source, edge.mark_target) == (TAIL, ARROW)

    def test_required_edge_against_index_order(self):
        knowledge = Knowledge(required={('C', 'A', 0)})
        pag = oracle_pag([('A', 'B', 0), ('C', 'D', 0)], ['A', 'B', 'C', 'D'], knowledge=knowledge)
        edge = pag.edge(2, 0, 0)
        assert (edge.mark_source, edge.mark_target) == (TAIL, ARROW)
        assert pag.edge(0, 2, 0).link == '<--'

    def test_unknown_names(self):
        from services.errors import KnowledgeError
        with pytest.raises(KnowledgeError):
            oracle_pag([('X', 'Y', 0)], ['X', 'Y'], knowledge=Knowledge(forbidden={('X', 'Q', 0)}))


@pytest.mark.unit
class TestPartialCorrelationTester:

    def test_needs_enough_rows(self, make_dataset, rng):
        with pytest.raises(StatTestError):
            PartialCorrelationTester(make_dataset(rng.normal(size=(60, 3))), 2)

    def test_lag_alignment(self, make_dataset, rng):
        x = rng.normal(size=500)
        y = np.concatenate([[0.0], x[:-1]]) + 0.1 * rng.normal(size=500)
        tester = PartialCorrelationTester(make_dataset(np.column_stack([x, y]), ['x', 'y']), 1)
        assert tester.run((0, 1), (1, 0), ()).statistic > 0.9
        assert abs(tester.run((0, 0), (1, 0), ()).statistic) < 0.2

    def test_symmetric_and_cached(self, make_dataset, rng):
        tester = PartialCorrelationTester(make_dataset(rng.normal(size=(300, 3))), 1)
        a = tester.run((0, 0), (1, 1), [(2, 0)])
        b = tester.run((1, 1), (0, 0), [(2, 0)])
        assert a == b

    def test_pag_from_data_is_valid(self, make_dataset, rng):
        pag = discover(make_dataset(rng.normal(size=(400, 3))), tau_max=1)
        assert pag.tau_max == 1
        assert len(collapse(pag).edges) <= 6


@pytest.mark.slow
def test_bond_structure_recovered_from_samples():
    truth = suite('bonds')[0]
    hits = 0
    for seed in range(20):
        found = links_of(discover(generate(truth, 5000, seed=seed), tau_max=2, alpha=0.05))
        hits += all(found.get(('Close_US10Y', 'Close_JGBF', lag), '').endswith('>') for lag in (1, 2))
    assert hits >= 18
