"""
Tests for domain-knowledge constraints
"""

import pytest

from services.errors import KnowledgeError
from services.knowledge import Knowledge, load_knowledge, make_market_knowledge

pytestmark = pytest.mark.unit

US = ['Close_SP', 'Close_US10Y']
JP = ['Close_Nikkei', 'Close_JGBF', 'Close_JGB']


class TestMarketKnowledge:

    def test_six_forbidden_triples(self):
        knowledge = make_market_knowledge(US, JP)
        assert len(knowledge.forbidden) == 6
        assert knowledge.forbids('Close_SP', 'Close_Nikkei', 0)
        assert not knowledge.forbids('Close_Nikkei', 'Close_SP', 0)
        assert not knowledge.forbids('Close_SP', 'Close_Nikkei', 1)

    def test_empty_us_list(self):
        knowledge = make_market_knowledge([], JP)
        assert not knowledge
        assert knowledge == Knowledge.empty()

    def test_overlap(self):
        with pytest.raises(KnowledgeError, match='Close_JGB'):
            make_market_knowledge(US + ['Close_JGB'], JP)


class TestValidation:

    def test_forbidden_and_required(self):
        with pytest.raises(KnowledgeError, match='both'):
            Knowledge(forbidden={('a', 'b', 0)}, required={('a', 'b', 0)})

    def test_lag0_self_edge(self):
        with pytest.raises(KnowledgeError):
            Knowledge(required={('a', 'a', 0)})

    def test_lagged_self_edge_allowed(self):
        assert Knowledge(required={('a', 'a', 1)}).requires('a', 'a', 1)

    def test_required_cycle(self):
        with pytest.raises(KnowledgeError, match='cycle'):
            Knowledge(required={('a', 'b', 0), ('b', 'c', 0), ('c', 'a', 0)})

    def test_negative_lag(self):
        with pytest.raises(KnowledgeError):
            Knowledge(forbidden={('a', 'b', -1)})

    def test_unknown_names(self):
        with pytest.raises(KnowledgeError, match='zz'):
            Knowledge(forbidden={('a', 'zz', 0)}).check_names(['a', 'b'])


class TestDocuments:

    def test_from_document_forms(self):
        knowledge = Knowledge.from_document({
            'forbidden': [{'cause': 'a', 'effect': 'b', 'lag': 1}, ['b', 'c']],
            'required': [['c', 'a', 2]],
            'market': {'us': ['u'], 'jp': ['j']},
        })
        assert knowledge.forbidden == {('a', 'b', 1), ('b', 'c', 0), ('u', 'j', 0)}
        assert knowledge.required == {('c', 'a', 2)}

    def test_unknown_keys(self):
        with pytest.raises(KnowledgeError, match='unknown'):
            Knowledge.from_document({'allowed': []})

    def test_document_round_trip(self):
        knowledge = Knowledge(forbidden={('a', 'b', 0)}, required={('b', 'c', 1)})
        assert Knowledge.from_document(knowledge.to_document()) == knowledge

    def test_index_pairs(self):
        knowledge = Knowledge(forbidden={('a', 'b', 0), ('c', 'a', 0), ('a', 'c', 1)})
        assert knowledge.index_pairs(['a', 'b', 'c'], 0) == [(0, 1), (2, 0)]
        assert knowledge.index_pairs(['a', 'b', 'c'], 1) == [(0, 2)]
        assert knowledge.max_lag() == 1

    def test_load_missing_file(self, tmp_path):
        path = str(tmp_path / 'missing.yaml')
        with pytest.raises(KnowledgeError, match='missing.yaml'):
            load_knowledge(path)

    def test_load_file(self, tmp_path):
        path = tmp_path / 'knowledge.yaml'
        path.write_text("market:\n  us: [Close_SP]\n  jp: [Close_Nikkei]\nrequired:\n  - [Close_JGBF, Close_JGB, 0]\n")
        knowledge = load_knowledge(str(path))
        assert knowledge.forbids('Close_SP', 'Close_Nikkei')
        assert knowledge.requires('Close_JGBF', 'Close_JGB')

    def test_bundled_sample(self, sample_dir):
        import os
        knowledge = load_knowledge(os.path.join(sample_dir, 'market_knowledge.yaml'))
        assert knowledge == make_market_knowledge(US, JP)
