"""Inception: candidate etypes/properties from CQs, and dataset schema matching."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from .ingest import DatasetSchema
from .metrics import coverage
from .model import Category, CompetencyQuery, ElementKind, ElementSet
from .textsim import edit_similarity, jaccard, name_similarity

T = TypeVar("T")


def _empty_sets(kind: ElementKind) -> dict[Category, ElementSet]:
    return {c: ElementSet(kind) for c in Category}


@dataclass(frozen=True)
class CandidateSet:
    """Candidate etypes and properties, each filed under its most reusable category.

    ``pairs`` keeps the (etype, property) ownership that the flat property
    sets lose; ``*_provenance`` lists the CQ ids each member comes from.
    """

    etypes: Mapping[Category, ElementSet] = field(default_factory=lambda: _empty_sets(ElementKind.ETYPES))
    properties: Mapping[Category, ElementSet] = field(default_factory=lambda: _empty_sets(ElementKind.PROPERTIES))
    pairs: Mapping[tuple[str, str], Category] = field(default_factory=dict)
    etype_provenance: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    property_provenance: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    pair_provenance: Mapping[tuple[str, str], tuple[int, ...]] = field(default_factory=dict)

    def all_etypes(self) -> ElementSet:
        out = ElementSet(ElementKind.ETYPES)
        for s in self.etypes.values():
            out = out | s
        return out

    def all_properties(self) -> ElementSet:
        out = ElementSet(ElementKind.PROPERTIES)
        for s in self.properties.values():
            out = out | s
        return out

    def etype_category(self, etype: str) -> Category | None:
        for cat, s in self.etypes.items():
            if etype in s.members:
                return cat
        return None

    def property_category(self, prop: str) -> Category | None:
        for cat, s in self.properties.items():
            if prop in s.members:
                return cat
        return None

    def owners(self, prop: str) -> list[str]:
        return sorted(et for et, p in self.pairs if p == prop)

    def etypes_of_cq(self, cq_id: int) -> set[str]:
        return {e for e, ids in self.etype_provenance.items() if cq_id in ids}

    def properties_of_cq(self, cq_id: int) -> set[str]:
        return {p for p, ids in self.property_provenance.items() if cq_id in ids}

    def is_empty(self) -> bool:
        return not self.etype_provenance


def collect_candidates(cqs: Iterable[CompetencyQuery]) -> CandidateSet:
    etype_cats: dict[str, Category] = {}
    prop_cats: dict[str, Category] = {}
    pair_cats: dict[tuple[str, str], Category] = {}
    etype_prov: dict[str, set[int]] = {}
    prop_prov: dict[str, set[int]] = {}
    pair_prov: dict[tuple[str, str], set[int]] = {}

    def note(cats, prov, key, cq):
        cats[key] = min(cats.get(key, cq.category), cq.category)
        prov.setdefault(key, set()).add(cq.id)

    for cq in cqs:
        for et in cq.target_etypes:
            note(etype_cats, etype_prov, et, cq)
        for et, prop in cq.required_properties:
            note(prop_cats, prop_prov, prop, cq)
            note(pair_cats, pair_prov, (et, prop), cq)

    etypes = {c: ElementSet(ElementKind.ETYPES, frozenset(e for e, k in etype_cats.items() if k is c)) for c in Category}
    props = {c: ElementSet(ElementKind.PROPERTIES, frozenset(p for p, k in prop_cats.items() if k is c)) for c in Category}
    return CandidateSet(
        etypes=etypes,
        properties=props,
        pairs=dict(sorted(pair_cats.items())),
        etype_provenance={k: tuple(sorted(v)) for k, v in sorted(etype_prov.items())},
        property_provenance={k: tuple(sorted(v)) for k, v in sorted(prop_prov.items())},
        pair_provenance={k: tuple(sorted(v)) for k, v in sorted(pair_prov.items())},
    )


@dataclass(frozen=True)
class MatchPair:
    attribute: str
    etype: str
    property: str
    score: float


@dataclass(frozen=True)
class SchemaMatch:
    dataset_id: str
    pairs: tuple[MatchPair, ...]
    cov_etypes: Fraction
    cov_properties: Fraction

    def matched_properties(self) -> ElementSet:
        return ElementSet(ElementKind.PROPERTIES, frozenset(p.property for p in self.pairs))

    def matched_etypes(self) -> ElementSet:
        return ElementSet(ElementKind.ETYPES, frozenset(p.etype for p in self.pairs))

    def pair_for(self, attribute: str) -> MatchPair | None:
        for p in self.pairs:
            if p.attribute == attribute:
                return p
        return None


def best_property(attribute: str, candidates: Iterable[str]) -> tuple[str, float] | None:
    """Highest-similarity candidate for an attribute name.

    Ties on the score go to the higher token Jaccard, then the higher edit
    similarity, then the lexicographically smallest name.
    """
    ranked = sorted(
        candidates,
        key=lambda p: (
            -name_similarity(attribute, p),
            -jaccard(attribute, p),
            -edit_similarity(attribute, p),
            p,
        ),
    )
    if not ranked:
        return None
    return ranked[0], name_similarity(attribute, ranked[0])


def match_schema(schema: DatasetSchema, cands: CandidateSet, threshold: float = 0.5) -> SchemaMatch:
    all_props = cands.all_properties()
    pairs = []
    for attr in schema.attributes:
        best = best_property(attr.name, all_props.members)
        if best is None or best[1] < threshold:
            continue
        prop, score = best
        owners = cands.owners(prop)
        etype = attr.etype_hint if attr.etype_hint in owners else owners[0]
        pairs.append(MatchPair(attr.name, etype, prop, score))
    matched_p = ElementSet(ElementKind.PROPERTIES, frozenset(p.property for p in pairs))
    matched_e = ElementSet(ElementKind.ETYPES, frozenset(p.etype for p in pairs))
    return SchemaMatch(
        dataset_id=schema.dataset_id,
        pairs=tuple(pairs),
        cov_etypes=coverage(cands.all_etypes(), matched_e),
        cov_properties=coverage(all_props, matched_p),
    )


def order_by_category(
    items: Sequence[T], category: Callable[[T], Category] = lambda x: x.category
) -> tuple[list[T], list[T], list[T]]:
    """Split into (Common, Core, Contextual) batches, keeping input order within each."""
    batches: tuple[list[T], list[T], list[T]] = ([], [], [])
    for item in items:
        batches[int(category(item))].append(item)
    return batches
