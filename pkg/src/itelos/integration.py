"""Data integration: rows to entities, entity matching and merging, EG quality."""
from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass, replace
from decimal import Decimal
from typing import Any, Iterable, Mapping, Sequence

import networkx as nx

from .errors import ItelosError, MappingError
from .ingest import Dataset
from .model import DEFAULT_BASE_URI, EG, ETG, Entity, entity_uri, validate_eg
from .textsim import canon

log = logging.getLogger(__name__)

POLICIES = ("keep-first", "keep-last")


@dataclass(frozen=True)
class LinkRule:
    property: str
    target_etype: str
    key: tuple[str, ...]


@dataclass(frozen=True)
class MappingSpec:
    """How the rows of one dataset become entities of one etype."""

    dataset_id: str
    target_etype: str
    attribute_map: Mapping[str, str]
    key: tuple[str, ...]
    link_rules: tuple[LinkRule, ...] = ()

    def problems(self, etg: ETG) -> list[str]:
        out = []
        if not self.key:
            out.append(f"{self.dataset_id} -> {self.target_etype}: empty key")
        etype = etg.etype(self.target_etype)
        if etype is None:
            return out + [f"{self.dataset_id}: target etype {self.target_etype!r} is not in the ETG"]
        for attr, prop in self.attribute_map.items():
            p = etype.property(prop)
            if p is None or not p.is_data:
                out.append(f"{self.dataset_id}: {attr} -> {etype.id}.{prop} is not a data property")
        for rule in self.link_rules:
            p = etype.property(rule.property)
            if p is None or p.is_data:
                out.append(f"{self.dataset_id}: {etype.id}.{rule.property} is not an object property")
            elif p.range_etype != rule.target_etype:
                out.append(
                    f"{self.dataset_id}: {etype.id}.{rule.property} ranges over {p.range_etype}, "
                    f"not {rule.target_etype}"
                )
            if not rule.key:
                out.append(f"{self.dataset_id}: link {rule.property} has an empty key")
        return out

    def used_attributes(self) -> tuple[str, ...]:
        """Key and link-key attributes, which cleaning must pass through."""
        seen = dict.fromkeys(self.key)
        for rule in self.link_rules:
            seen.update(dict.fromkeys(rule.key))
        return tuple(seen)

    def renamed(self, renames: Mapping[str, str]) -> "MappingSpec":
        """The same spec with etype ids translated, e.g. after ontology adoption."""
        return replace(
            self,
            target_etype=renames.get(self.target_etype, self.target_etype),
            link_rules=tuple(replace(r, target_etype=renames.get(r.target_etype, r.target_etype)) for r in self.link_rules),
        )


def mapping_from_dict(raw: Mapping) -> MappingSpec:
    try:
        rules = tuple(
            LinkRule(canon(r["property"]), canon(r["target_etype"]), tuple(r["key"])) for r in raw.get("link_rules", ())
        )
        return MappingSpec(
            dataset_id=raw["dataset"],
            target_etype=canon(raw["target_etype"]),
            attribute_map={a: canon(p) for a, p in raw.get("attribute_map", {}).items()},
            key=tuple(raw["key"]),
            link_rules=rules,
        )
    except (KeyError, TypeError) as exc:
        raise MappingError(f"malformed mapping entry {raw!r}: {exc}") from exc


def load_mappings_json(text: str) -> list[MappingSpec]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MappingError(f"mappings are not valid JSON: {exc}") from exc
    if isinstance(data, Mapping):
        data = data.get("mappings", [])
    if not isinstance(data, list):
        raise MappingError("mappings must be a list of entries")
    return [mapping_from_dict(m) for m in data]


def mapping_to_dict(spec: MappingSpec) -> dict:
    return {
        "dataset": spec.dataset_id,
        "target_etype": spec.target_etype,
        "attribute_map": dict(spec.attribute_map),
        "key": list(spec.key),
        "link_rules": [{"property": r.property, "target_etype": r.target_etype, "key": list(r.key)} for r in spec.link_rules],
    }


def typed_value(cell: str, datatype: str) -> Any:
    """Typed value of a cleaned cell."""
    if datatype == "integer":
        return int(cell)
    if datatype == "decimal":
        return Decimal(cell)
    if datatype == "date":
        return dt.date.fromisoformat(cell)
    if datatype == "boolean":
        return cell == "true"
    return cell


def _check_policy(policy: str) -> None:
    if policy not in POLICIES:
        raise ValueError(f"unknown merge policy {policy!r}; expected one of {POLICIES}")


def _merge_into(
    existing: Entity, incoming: Entity, policy: str, source: str, conflicts: list
) -> Entity:
    values = dict(existing.values)
    for prop, value in sorted(incoming.values.items()):
        if prop not in values:
            values[prop] = value
        elif values[prop] != value:
            conflicts.append((existing.id, prop, values[prop], value, source))
            if policy == "keep-last":
                values[prop] = value
    return Entity(existing.id, existing.etype, values, existing.links | incoming.links)


@dataclass(frozen=True)
class MappedRows:
    entities: tuple[Entity, ...]
    conflicts: tuple = ()
    skipped_rows: int = 0


def map_rows(
    ds: Dataset,
    spec: MappingSpec,
    etg: ETG,
    *,
    policy: str = "keep-first",
    base_uri: str = DEFAULT_BASE_URI,
) -> MappedRows:
    """One entity per distinct key tuple of a cleaned dataset.

    Links point at the URN the target entity would get from the rule's key
    values; whether that entity exists is settled once integration is done.
    """
    _check_policy(policy)
    problems = spec.problems(etg)
    if problems:
        raise MappingError("; ".join(problems))
    etype = etg.etype(spec.target_etype)
    columns = {}
    for attr in list(spec.attribute_map) + list(spec.used_attributes()):
        a = ds.schema.attribute(attr)
        if a is None:
            raise MappingError(f"{spec.dataset_id}: attribute {attr!r} not in dataset")
        columns[attr] = a.raw_name

    by_id: dict[str, Entity] = {}
    conflicts: list = []
    skipped = 0
    for row in ds.rows:
        key = [row.get(columns[k], "").strip() for k in spec.key]
        if not all(key):
            skipped += 1
            continue
        uri = entity_uri(etype.id, key, base_uri)
        values = {}
        for attr, prop in spec.attribute_map.items():
            cell = row.get(columns[attr], "").strip()
            if not cell:
                continue
            datatype = etype.property(prop).datatype
            try:
                values[prop] = typed_value(cell, datatype)
            except ValueError as exc:
                raise MappingError(f"{spec.dataset_id}: {attr}={cell!r} is not a cleaned {datatype}") from exc
        links = set()
        for rule in spec.link_rules:
            target_key = [row.get(columns[k], "").strip() for k in rule.key]
            if all(target_key):
                links.add((rule.property, entity_uri(rule.target_etype, target_key, base_uri)))
        entity = Entity(uri, etype.id, values, frozenset(links))
        if uri in by_id:
            entity = _merge_into(by_id[uri], entity, policy, spec.dataset_id, conflicts)
        by_id[uri] = entity
    if skipped:
        log.warning("%s: %d rows skipped for empty key cells", spec.dataset_id, skipped)
    return MappedRows(tuple(by_id[k] for k in sorted(by_id)), tuple(conflicts), skipped)


def match_and_merge(eg: EG, incoming: Iterable[Entity], policy: str = "keep-first", *, source: str = "") -> EG:
    """Fold entities into ``eg``; equal ids are the same real-world entity."""
    _check_policy(policy)
    entities = dict(eg.entities)
    conflicts = list(eg.conflicts)
    for ent in incoming:
        if eg.schema.etype(ent.etype) is None:
            raise MappingError(f"entity {ent.id}: etype {ent.etype!r} is not in the schema")
        if ent.id in entities:
            entities[ent.id] = _merge_into(entities[ent.id], ent, policy, source, conflicts)
        else:
            entities[ent.id] = ent
    return EG(eg.schema, dict(sorted(entities.items())), tuple(conflicts))


@dataclass(frozen=True)
class EgQualityReport:
    # "etype.property" -> fraction of that etype's entities lacking a value
    missing_value_ratio: Mapping[str, float]
    connected_components: int
    contradiction_count: int
    entities_merged: int = 0
    entity_count: int = 0
    link_count: int = 0
    dangling_links_pruned: int = 0
    skipped_rows: int = 0

    def to_dict(self) -> dict:
        return {
            "missing_value_ratio": {k: round(v, 6) for k, v in sorted(self.missing_value_ratio.items())},
            "connected_components": self.connected_components,
            "contradiction_count": self.contradiction_count,
            "entities_merged": self.entities_merged,
            "entity_count": self.entity_count,
            "link_count": self.link_count,
            "dangling_links_pruned": self.dangling_links_pruned,
            "skipped_rows": self.skipped_rows,
        }


def compute_eg_quality(eg: EG, **counters: int) -> EgQualityReport:
    """Quality figures of an EG. Etypes without entities get no missing-value entries."""
    by_etype: dict[str, list[Entity]] = {}
    for ent in eg.entities.values():
        by_etype.setdefault(ent.etype, []).append(ent)
    missing = {}
    for etype in eg.schema.etypes:
        members = by_etype.get(etype.id, [])
        if not members:
            continue
        for p in etype.data_properties:
            lacking = sum(1 for e in members if p.name not in e.values)
            missing[f"{etype.id}.{p.name}"] = lacking / len(members)
    graph = nx.Graph()
    graph.add_nodes_from(eg.entities)
    links = 0
    for ent in eg.entities.values():
        for _, target in ent.links:
            links += 1
            if target in eg.entities:
                graph.add_edge(ent.id, target)
    return EgQualityReport(
        missing_value_ratio=dict(sorted(missing.items())),
        connected_components=nx.number_connected_components(graph),
        contradiction_count=len(eg.conflicts),
        entity_count=len(eg.entities),
        link_count=links,
        **counters,
    )


def _prune_dangling(eg: EG) -> tuple[EG, int]:
    pruned = 0
    entities = {}
    for key, ent in eg.entities.items():
        kept = frozenset(l for l in ent.links if l[1] in eg.entities)
        pruned += len(ent.links) - len(kept)
        entities[key] = ent if len(kept) == len(ent.links) else replace(ent, links=kept)
    return EG(eg.schema, entities, eg.conflicts), pruned


def integrate(
    etg: ETG,
    datasets: Sequence[tuple[Dataset, MappingSpec]],
    policy: str = "keep-first",
    *,
    base_uri: str = DEFAULT_BASE_URI,
    eg: EG | None = None,
) -> tuple[EG, EgQualityReport]:
    """Fold datasets into an EG in the given order.

    Pass ``eg`` to continue integrating into an existing graph. Links whose
    target never materializes are dropped at the end and counted.
    """
    _check_policy(policy)
    eg = eg or EG(etg)
    merged = 0
    skipped = 0
    for index, (ds, spec) in enumerate(datasets):
        try:
            mapped = map_rows(ds, spec, etg, policy=policy, base_uri=base_uri)
            merged += sum(1 for e in mapped.entities if e.id in eg.entities)
            skipped += mapped.skipped_rows
            eg = EG(eg.schema, eg.entities, eg.conflicts + mapped.conflicts)
            eg = match_and_merge(eg, mapped.entities, policy, source=spec.dataset_id)
        except ItelosError as exc:
            raise MappingError(f"dataset #{index} ({spec.dataset_id} -> {spec.target_etype}): {exc}") from exc
    eg, pruned = _prune_dangling(eg)
    violations = validate_eg(eg)
    if violations:
        raise MappingError("integrated EG is invalid: " + "; ".join(map(str, violations[:5])))
    report = compute_eg_quality(eg, entities_merged=merged, dangling_links_pruned=pruned, skipped_rows=skipped)
    log.info("integrated %d entities (%d merged, %d conflicts)", report.entity_count, merged, report.contradiction_count)
    return eg, report
