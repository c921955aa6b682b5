"""Modeling: dataset selection and construction of the ETG model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import ModelingError
from .inception import CandidateSet, SchemaMatch
from .ingest import DatasetSchema
from .model import (
    ETG,
    Category,
    CompetencyQuery,
    ElementKind,
    ElementSet,
    EType,
    PropertyDef,
    PropertyKind,
    Relation,
    validate_etg,
)
from .textsim import name_similarity

log = logging.getLogger(__name__)

# (dataset id, attribute) -> (etype, property)
AttributeMapping = Mapping[tuple[str, str], tuple[str, str]]


@dataclass(frozen=True)
class ModelingDecision:
    kept_datasets: tuple[str, ...] = ()
    dropped_datasets: tuple[tuple[str, str], ...] = ()
    extension_etypes: ElementSet = ElementSet(ElementKind.ETYPES)
    extension_properties: ElementSet = ElementSet(ElementKind.PROPERTIES)
    # attributes wired in as extensions: (dataset, attribute) -> (etype, property)
    extension_mapping: Mapping[tuple[str, str], tuple[str, str]] = field(default_factory=dict)


def select_datasets(
    matches: Sequence[SchemaMatch], cands: CandidateSet, theta_a_cov: float = 0.7
) -> ModelingDecision:
    """Keep a dataset when its coverage clears the bar, or when it brings a
    Core/Contextual property that no better-covering kept dataset provides."""
    ordered = sorted(matches, key=lambda m: (-m.cov_properties, m.dataset_id))
    provided: set[str] = set()
    kept, dropped = [], []
    for m in ordered:
        props = m.matched_properties().members
        if not props:
            dropped.append((m.dataset_id, "no overlap with purpose"))
            continue
        fresh = sorted(
            p for p in props - provided if cands.property_category(p) in (Category.CORE, Category.CONTEXTUAL)
        )
        if m.cov_properties >= Fraction(str(theta_a_cov)):
            kept.append(m.dataset_id)
        elif fresh:
            kept.append(m.dataset_id)
        else:
            dropped.append((m.dataset_id, "no Core or Contextual property beyond higher-coverage datasets"))
            continue
        provided |= props
    order = [m.dataset_id for m in matches]
    return ModelingDecision(
        kept_datasets=tuple(sorted(kept, key=order.index)),
        dropped_datasets=tuple(sorted(dropped, key=lambda d: order.index(d[0]))),
    )


def _merge_types(types: Sequence[str]) -> str:
    distinct = set(types)
    if len(distinct) == 1:
        return distinct.pop()
    if distinct == {"integer", "decimal"}:
        return "decimal"
    return "string"


def _property_datatypes(
    matches: Sequence[SchemaMatch], schemas: Mapping[str, DatasetSchema], kept: set[str]
) -> dict[str, str]:
    best: dict[str, tuple[float, list[str]]] = {}
    for m in matches:
        if m.dataset_id not in kept:
            continue
        schema = schemas[m.dataset_id]
        for pair in m.pairs:
            attr = schema.attribute(pair.attribute)
            score, types = best.get(pair.property, (-1.0, []))
            if pair.score > score:
                best[pair.property] = (pair.score, [attr.inferred_type])
            elif pair.score == score:
                types.append(attr.inferred_type)
    return {p: _merge_types(t) for p, (_, t) in best.items()}


def _context_score(attr_name: str, etype_id: str, props) -> float:
    scores = [name_similarity(attr_name, etype_id)]
    scores.extend(name_similarity(attr_name, p) for p in props)
    return max(scores)


def build_etg_model(
    cands: CandidateSet,
    matches: Sequence[SchemaMatch],
    schemas: Mapping[str, DatasetSchema],
    *,
    cqs: Sequence[CompetencyQuery] = (),
    decision: ModelingDecision | None = None,
    relations: Sequence[Relation] = (),
    threshold: float = 0.5,
    allow_new_etypes: bool = False,
    display_names: Mapping[str, str] | None = None,
    name: str = "etg-model",
) -> tuple[ETG, ModelingDecision]:
    """Turn CQ candidates (plus dataset suggestions) into an ETG model.

    Every candidate etype becomes an etype carrying its candidate properties.
    Each CQ naming several etypes yields ``has_<target>`` links from its first
    etype to the others. Unmatched attributes of kept datasets whose name is
    close enough to a candidate etype's context (or whose annotation hints that
    etype) become extension properties; hints naming an unknown etype create a
    new etype only when ``allow_new_etypes`` is set.
    """
    if cands.is_empty():
        raise ModelingError("nothing to model: the candidate set is empty")
    display_names = display_names or {}
    if decision is None:
        decision = ModelingDecision(kept_datasets=tuple(m.dataset_id for m in matches))
    kept = set(decision.kept_datasets)
    datatypes = _property_datatypes(matches, schemas, kept)

    props: dict[str, dict[str, PropertyDef]] = {}
    categories: dict[str, Category] = {}
    for cat, members in cands.etypes.items():
        for et in members.members:
            categories[et] = cat
            props[et] = {}
    for (et, prop), cat in cands.pairs.items():
        props[et][prop] = PropertyDef(prop, PropertyKind.DATA, cat, datatype=datatypes.get(prop, "string"))

    # dataset-suggested extensions
    ext_etypes: set[str] = set()
    ext_props: set[str] = set()
    ext_mapping: dict[tuple[str, str], tuple[str, str]] = {}
    candidate_ids = sorted(props)
    for m in sorted(matches, key=lambda m: m.dataset_id):
        if m.dataset_id not in kept:
            continue
        matched = {p.attribute for p in m.pairs}
        for attr in schemas[m.dataset_id].attributes:
            if attr.name in matched:
                continue
            target = None
            if attr.etype_hint in props:
                target = attr.etype_hint
            elif attr.etype_hint and allow_new_etypes:
                target = attr.etype_hint
                if target not in props:
                    props[target] = {}
                    categories[target] = Category.CONTEXTUAL
                    ext_etypes.add(target)
            elif attr.etype_hint is None:
                scored = [
                    (_context_score(attr.name, et, [p for (e, p) in cands.pairs if e == et]), et)
                    for et in candidate_ids
                ]
                scored.sort(key=lambda s: (-s[0], s[1]))
                if scored and scored[0][0] >= threshold:
                    target = scored[0][1]
            if target is None:
                continue
            category = attr.category if attr.annotated else Category.CONTEXTUAL
            if attr.name not in props[target]:
                props[target][attr.name] = PropertyDef(
                    attr.name, PropertyKind.DATA, category, datatype=attr.inferred_type
                )
                ext_props.add(attr.name)
            ext_mapping[(m.dataset_id, attr.name)] = (target, attr.name)

    # object properties: CQ co-occurrence, then explicit relations
    for cq in sorted(cqs, key=lambda c: c.id):
        if len(cq.target_etypes) < 2:
            continue
        source = cq.target_etypes[0]
        for target in cq.target_etypes[1:]:
            if target == source:
                continue
            link = f"has_{target}"
            existing = props[source].get(link)
            if existing is None or cq.category < existing.category:
                props[source][link] = PropertyDef(link, PropertyKind.OBJECT, cq.category, range_etype=target)
    for rel in relations:
        for end in (rel.source, rel.target):
            if end not in props:
                raise ModelingError(f"relation {rel.name}: etype {end!r} is not in the model")
        if rel.name in props[rel.source] and props[rel.source][rel.name].is_data:
            raise ModelingError(f"relation {rel.name} clashes with a data property of {rel.source}")
        props[rel.source][rel.name] = PropertyDef(
            rel.name, PropertyKind.OBJECT, categories[rel.source], range_etype=rel.target
        )

    etypes = tuple(
        EType(
            id=et,
            name=display_names.get(et, et),
            category=categories[et],
            properties=tuple(props[et][p] for p in sorted(props[et])),
        )
        for et in sorted(props)
    )
    etg = ETG(name, etypes)
    violations = validate_etg(etg)
    if violations:
        raise ModelingError("ETG model is invalid: " + "; ".join(map(str, violations)))
    decision = ModelingDecision(
        kept_datasets=decision.kept_datasets,
        dropped_datasets=decision.dropped_datasets,
        extension_etypes=ElementSet(ElementKind.ETYPES, frozenset(ext_etypes)),
        extension_properties=ElementSet(ElementKind.PROPERTIES, frozenset(ext_props)),
        extension_mapping=dict(sorted(ext_mapping.items())),
    )
    log.info("ETG model: %d etypes, %d extension properties", len(etypes), len(ext_props))
    return etg, decision


def attribute_mapping(matches: Sequence[SchemaMatch], decision: ModelingDecision) -> dict:
    """(dataset, attribute) -> (etype, property) for every attribute the model relies on."""
    kept = set(decision.kept_datasets)
    out = {}
    for m in matches:
        if m.dataset_id in kept:
            for p in m.pairs:
                out[(m.dataset_id, p.attribute)] = (p.etype, p.property)
    out.update(decision.extension_mapping)
    return dict(sorted(out.items()))
