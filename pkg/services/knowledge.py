"""
Domain Knowledge
Forbidden and required (cause, effect, lag) triples shared by the estimators.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import yaml

from services.errors import KnowledgeError

logger = logging.getLogger(__name__)

Triple = Tuple[str, str, int]


def _as_triple(entry: Any) -> Triple:
    if isinstance(entry, Mapping):
        try:
            cause, effect, lag = entry['cause'], entry['effect'], entry.get('lag', 0)
        except KeyError as e:
            raise KnowledgeError(f"knowledge entry {dict(entry)} is missing {e}") from e
    elif isinstance(entry, (list, tuple)) and len(entry) in (2, 3):
        cause, effect = entry[0], entry[1]
        lag = entry[2] if len(entry) == 3 else 0
    else:
        raise KnowledgeError(f"malformed knowledge entry: {entry!r}")
    if isinstance(lag, bool) or not isinstance(lag, int) or lag < 0:
        raise KnowledgeError(f"knowledge lag must be a non-negative integer, got {lag!r}")
    return str(cause), str(effect), int(lag)


@dataclass(frozen=True)
class Knowledge:
    forbidden: FrozenSet[Triple] = field(default_factory=frozenset)
    required: FrozenSet[Triple] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, 'forbidden', frozenset(_as_triple(t) for t in self.forbidden))
        object.__setattr__(self, 'required', frozenset(_as_triple(t) for t in self.required))
        both = self.forbidden & self.required
        if both:
            raise KnowledgeError(f"triples both forbidden and required: {sorted(both)}")
        for cause, effect, lag in self.forbidden | self.required:
            if lag == 0 and cause == effect:
                raise KnowledgeError(f"self-edge at lag 0 is not allowed: {cause}")
        instantaneous = nx.DiGraph((c, e) for c, e, lag in self.required if lag == 0)
        if not nx.is_directed_acyclic_graph(instantaneous):
            raise KnowledgeError("required lag-0 edges contain a cycle")

    @classmethod
    def empty(cls) -> 'Knowledge':
        return cls()

    def __bool__(self) -> bool:
        return bool(self.forbidden or self.required)

    def forbids(self, cause: str, effect: str, lag: int = 0) -> bool:
        return (cause, effect, lag) in self.forbidden

    def requires(self, cause: str, effect: str, lag: int = 0) -> bool:
        return (cause, effect, lag) in self.required

    def at_lag(self, lag: int) -> 'Knowledge':
        return Knowledge(frozenset(t for t in self.forbidden if t[2] == lag),
                         frozenset(t for t in self.required if t[2] == lag))

    def max_lag(self) -> int:
        return max((t[2] for t in self.forbidden | self.required), default=0)

    def variables(self) -> FrozenSet[str]:
        return frozenset(v for t in self.forbidden | self.required for v in t[:2])

    def check_names(self, names: Sequence[str]):
        """Raise KnowledgeError when a triple mentions a variable outside names."""
        unknown = sorted(self.variables() - set(names))
        if unknown:
            raise KnowledgeError(f"knowledge mentions unknown variables: {', '.join(unknown)}")

    def index_pairs(self, names: Sequence[str], lag: int, required: bool = False) -> List[Tuple[int, int]]:
        """(cause index, effect index) pairs at lag, restricted to known names."""
        index = {n: i for i, n in enumerate(names)}
        triples = self.required if required else self.forbidden
        return sorted((index[c], index[e]) for c, e, l in triples
                      if l == lag and c in index and e in index)

    def merge(self, other: 'Knowledge') -> 'Knowledge':
        return Knowledge(self.forbidden | other.forbidden, self.required | other.required)

    def to_document(self) -> Dict[str, List[Dict[str, Any]]]:
        def rows(triples: Iterable[Triple]):
            return [{'cause': c, 'effect': e, 'lag': l} for c, e, l in sorted(triples)]
        return {'forbidden': rows(self.forbidden), 'required': rows(self.required)}

    @classmethod
    def from_document(cls, doc: Optional[Mapping[str, Any]]) -> 'Knowledge':
        """
        Build knowledge from a parsed document.

        Accepted keys: ``forbidden`` and ``required`` (lists of
        ``{cause, effect, lag}`` mappings or ``[cause, effect, lag]`` lists)
        and ``market`` (``{us: [...], jp: [...]}``), which expands through
        make_market_knowledge.
        """
        if doc is None:
            return cls.empty()
        if not isinstance(doc, Mapping):
            raise KnowledgeError("knowledge document must be a mapping")
        unknown = set(doc) - {'forbidden', 'required', 'market'}
        if unknown:
            raise KnowledgeError(f"unknown knowledge keys: {', '.join(sorted(unknown))}")
        knowledge = cls(frozenset(_as_triple(t) for t in doc.get('forbidden') or []),
                        frozenset(_as_triple(t) for t in doc.get('required') or []))
        market = doc.get('market')
        if market:
            knowledge = knowledge.merge(make_market_knowledge(market.get('us') or [],
                                                              market.get('jp') or []))
        return knowledge


def load_knowledge(path: str) -> Knowledge:
    if not os.path.isfile(path):
        raise KnowledgeError(f"knowledge file not found: {path}")
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise KnowledgeError(f"cannot parse knowledge file {path}: {e}") from e
    knowledge = Knowledge.from_document(doc)
    logger.info(f"Loaded knowledge from {path}: {len(knowledge.forbidden)} forbidden, "
                f"{len(knowledge.required)} required")
    return knowledge


def make_market_knowledge(us_vars: Sequence[str], jp_vars: Sequence[str]) -> Knowledge:
    """Forbid every same-day edge from a US market variable into a Japanese one."""
    overlap = sorted(set(us_vars) & set(jp_vars))
    if overlap:
        raise KnowledgeError(f"variables listed as both US and JP: {', '.join(overlap)}")
    return Knowledge(frozenset((u, j, 0) for u in us_vars for j in jp_vars))
