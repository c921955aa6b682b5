"""Shared domain types: etype graphs, entity graphs, competency queries, purposes.

All containers are frozen dataclasses. Dict-valued fields are treated as
read-only once an instance exists; helpers that "modify" a value return a
new instance via :func:`dataclasses.replace`.
"""
from __future__ import annotations

import datetime as dt
import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Iterable, Mapping

from .textsim import canon

DEFAULT_BASE_URI = "urn:eg:"

DATATYPES = ("string", "integer", "decimal", "boolean", "date")
COMPARATORS = ("=", "<", ">", "contains")


class Category(enum.IntEnum):
    """Reusability category; lower values are more reusable and processed first."""

    COMMON = 0
    CORE = 1
    CONTEXTUAL = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value: "str | Category") -> "Category":
        if isinstance(value, Category):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown category {value!r}") from None


class PropertyKind(str, enum.Enum):
    DATA = "data"
    OBJECT = "object"


@dataclass(frozen=True)
class PropertyDef:
    name: str
    kind: PropertyKind
    category: Category = Category.CONTEXTUAL
    datatype: str | None = None
    range_etype: str | None = None

    @classmethod
    def data(cls, name: str, datatype: str = "string", category: Category = Category.CONTEXTUAL) -> "PropertyDef":
        return cls(canon(name), PropertyKind.DATA, category, datatype=datatype)

    @classmethod
    def link(cls, name: str, range_etype: str, category: Category = Category.CONTEXTUAL) -> "PropertyDef":
        return cls(canon(name), PropertyKind.OBJECT, category, range_etype=canon(range_etype))

    @property
    def is_data(self) -> bool:
        return self.kind is PropertyKind.DATA


@dataclass(frozen=True)
class EType:
    id: str
    name: str
    category: Category
    properties: tuple[PropertyDef, ...] = ()
    # "model" or "ontology:<source-id>"
    provenance: str = "model"

    @property
    def property_names(self) -> frozenset[str]:
        return frozenset(p.name for p in self.properties)

    @property
    def data_properties(self) -> tuple[PropertyDef, ...]:
        return tuple(p for p in self.properties if p.is_data)

    @property
    def object_properties(self) -> tuple[PropertyDef, ...]:
        return tuple(p for p in self.properties if not p.is_data)

    # defined after the decorated members: this name shadows the builtin in the class body
    def property(self, name: str) -> PropertyDef | None:
        for p in self.properties:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class ETG:
    name: str
    etypes: tuple[EType, ...] = ()

    def etype(self, etype_id: str) -> EType | None:
        for e in self.etypes:
            if e.id == etype_id:
                return e
        return None

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.etypes)


@dataclass(frozen=True)
class Entity:
    id: str
    etype: str
    values: Mapping[str, Any] = field(default_factory=dict)
    links: frozenset[tuple[str, str]] = frozenset()


Conflict = tuple  # (entity-id, property, existing value, incoming value, incoming source)


@dataclass(frozen=True)
class EG:
    schema: ETG
    entities: Mapping[str, Entity] = field(default_factory=dict)
    conflicts: tuple[Conflict, ...] = ()


@dataclass(frozen=True)
class Filter:
    etype: str
    property: str
    comparator: str
    literal: Any


@dataclass(frozen=True)
class CompetencyQuery:
    id: int
    question: str
    action: str
    category: Category
    target_etypes: tuple[str, ...]
    required_properties: tuple[tuple[str, str], ...] = ()
    filters: tuple[Filter, ...] = ()

    def problems(self) -> list[str]:
        out = []
        if not self.target_etypes:
            out.append(f"CQ {self.id}: target_etypes is empty")
        targets = set(self.target_etypes)
        for et, prop in self.required_properties:
            if et not in targets:
                out.append(f"CQ {self.id}: required property {et}.{prop} is not on a target etype")
        for f in self.filters:
            if f.etype not in targets:
                out.append(f"CQ {self.id}: filter on {f.etype}.{f.property} is not on a target etype")
            if f.comparator not in COMPARATORS:
                out.append(f"CQ {self.id}: unsupported comparator {f.comparator!r}")
        return out

    def renamed(self, renames: Mapping[str, str]) -> "CompetencyQuery":
        """The same CQ with etype ids translated, e.g. after ontology adoption."""
        def r(et: str) -> str:
            return renames.get(et, et)

        return replace(
            self,
            target_etypes=tuple(r(et) for et in self.target_etypes),
            required_properties=tuple((r(et), p) for et, p in self.required_properties),
            filters=tuple(replace(f, etype=r(f.etype)) for f in self.filters),
        )


@dataclass(frozen=True)
class GateThresholds:
    theta_a_cov: float = 0.7
    theta_b_ext_min: float = 0.1
    theta_b_ext_max: float = 0.6
    theta_c_spr: float = 0.2
    theta_d_core: float = 1.0
    theta_d_all: float = 0.8
    etr_match: float = 0.5

    def problems(self) -> list[str]:
        out = [
            f"threshold {k}={v} outside [0, 1]"
            for k, v in vars(self).items()
            if not 0.0 <= v <= 1.0
        ]
        if self.theta_b_ext_min > self.theta_b_ext_max:
            out.append("theta_b_ext_min exceeds theta_b_ext_max")
        return out


@dataclass(frozen=True)
class Relation:
    source: str
    target: str
    name: str


@dataclass(frozen=True)
class Purpose:
    description: str
    cqs: tuple[CompetencyQuery, ...]
    dataset_refs: tuple[str, ...] = ()
    ontology_refs: tuple[str, ...] = ()
    thresholds: GateThresholds = GateThresholds()
    mappings_ref: str | None = None
    relations: tuple[Relation, ...] = ()
    keep_model_terminology: bool = False
    allow_new_etypes: bool = False
    etr_weights: tuple[float, float] = (0.5, 0.5)
    spr_scope: str = "all"
    default_category: Category | None = None


class ElementKind(str, enum.Enum):
    ETYPES = "etypes"
    PROPERTIES = "properties"


@dataclass(frozen=True)
class ElementSet:
    kind: ElementKind
    members: frozenset[str] = frozenset()

    @classmethod
    def of(cls, kind: "ElementKind | str", members: Iterable[str] = ()) -> "ElementSet":
        return cls(ElementKind(kind), frozenset(canon(m) for m in members))

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members))

    def __or__(self, other: "ElementSet") -> "ElementSet":
        if other.kind is not self.kind:
            raise ValueError(f"cannot combine {self.kind.value} with {other.kind.value}")
        return ElementSet(self.kind, self.members | other.members)


def etg_elements(etg: ETG) -> tuple[ElementSet, ElementSet]:
    """Etype ids and data-property names of an ETG, as element sets.

    Object properties are left out: they are synthesized links, not
    knowledge contributed by CQs, datasets or ontologies.
    """
    etypes = ElementSet.of(ElementKind.ETYPES, etg.ids)
    props = ElementSet.of(
        ElementKind.PROPERTIES, (p.name for e in etg.etypes for p in e.data_properties)
    )
    return etypes, props


def key_hash(values: Iterable[str]) -> str:
    payload = json.dumps([str(v) for v in values], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def entity_uri(etype: str, key_values: Iterable[str], base_uri: str = DEFAULT_BASE_URI) -> str:
    return f"{base_uri}{canon(etype)}:{key_hash(key_values)}"


# --- validation ---------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    subject: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.subject}: [{self.rule}] {self.message}"


def _value_conforms(value: Any, datatype: str | None) -> bool:
    if datatype == "string":
        return isinstance(value, str)
    if datatype == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if datatype == "decimal":
        # integer is a subtype of decimal
        return isinstance(value, Decimal) or (isinstance(value, int) and not isinstance(value, bool))
    if datatype == "boolean":
        return isinstance(value, bool)
    if datatype == "date":
        return isinstance(value, dt.date) and not isinstance(value, dt.datetime)
    return False


def validate_etg(etg: ETG) -> list[Violation]:
    out: list[Violation] = []
    seen: set[str] = set()
    for e in etg.etypes:
        if e.id in seen:
            out.append(Violation(e.id, "unique-etype-id", "duplicate etype id"))
        seen.add(e.id)
    ids = set(etg.ids)
    for e in etg.etypes:
        names: set[str] = set()
        for p in e.properties:
            subject = f"{e.id}.{p.name}"
            if p.name in names:
                out.append(Violation(subject, "unique-property", "duplicate property name"))
            names.add(p.name)
            if p.is_data:
                if p.datatype not in DATATYPES:
                    out.append(Violation(subject, "data-datatype", f"invalid datatype {p.datatype!r}"))
                if p.range_etype is not None:
                    out.append(Violation(subject, "data-no-range", "data property has a range etype"))
            else:
                if p.datatype is not None:
                    out.append(Violation(subject, "object-no-datatype", "object property has a datatype"))
                if not p.range_etype:
                    out.append(Violation(subject, "object-range", "object property has no range etype"))
                elif p.range_etype not in ids:
                    out.append(
                        Violation(subject, "object-range", f"range etype {p.range_etype!r} is not in the ETG")
                    )
    return out


def validate_eg(eg: EG) -> list[Violation]:
    out: list[Violation] = []
    for key, ent in eg.entities.items():
        if key != ent.id:
            out.append(Violation(ent.id, "entity-id", f"stored under mismatching key {key!r}"))
        etype = eg.schema.etype(ent.etype)
        if etype is None:
            out.append(Violation(ent.id, "entity-etype", f"etype {ent.etype!r} is not in the schema"))
            continue
        for prop_name, value in ent.values.items():
            prop = etype.property(prop_name)
            if prop is None or not prop.is_data:
                out.append(
                    Violation(ent.id, "value-property", f"{prop_name!r} is not a data property of {etype.id}")
                )
            elif not _value_conforms(value, prop.datatype):
                out.append(
                    Violation(ent.id, "value-datatype", f"{prop_name}={value!r} does not conform to {prop.datatype}")
                )
        for prop_name, target in ent.links:
            prop = etype.property(prop_name)
            if prop is None or prop.is_data:
                out.append(
                    Violation(ent.id, "link-property", f"{prop_name!r} is not an object property of {etype.id}")
                )
                continue
            target_ent = eg.entities.get(target)
            if target_ent is None:
                out.append(Violation(ent.id, "link-target", f"{prop_name} -> {target} does not resolve"))
            elif target_ent.etype != prop.range_etype:
                out.append(
                    Violation(
                        ent.id,
                        "link-range",
                        f"{prop_name} -> {target} has etype {target_ent.etype}, expected {prop.range_etype}",
                    )
                )
    return out
