"""Readers and writers for purpose files, CSV datasets, ETG JSON and N-Triples."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Mapping

from .errors import DatasetError, NTriplesError, PurposeError, SchemaError
from .model import (
    COMPARATORS,
    DEFAULT_BASE_URI,
    EG,
    ETG,
    Category,
    CompetencyQuery,
    Entity,
    EType,
    Filter,
    GateThresholds,
    PropertyDef,
    PropertyKind,
    Purpose,
    Relation,
    validate_eg,
    validate_etg,
)
from .textsim import canon

# --- purpose -------------------------------------------------------------

_THRESHOLD_KEYS = tuple(GateThresholds.__dataclass_fields__)


def _pair(raw: Any, what: str, cq_id: Any) -> tuple[str, str]:
    if isinstance(raw, Mapping):
        raw = [raw.get("etype"), raw.get("property")]
    if not isinstance(raw, (list, tuple)) or len(raw) != 2 or not all(isinstance(x, str) for x in raw):
        raise PurposeError(f"CQ {cq_id}: malformed {what} entry {raw!r}")
    return canon(raw[0]), canon(raw[1])


def _filter(raw: Any, cq_id: Any) -> Filter:
    if isinstance(raw, Mapping):
        raw = [raw.get("etype"), raw.get("property"), raw.get("comparator"), raw.get("literal")]
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise PurposeError(f"CQ {cq_id}: malformed filter {raw!r}")
    etype, prop, comparator, literal = raw
    if comparator not in COMPARATORS:
        raise PurposeError(f"CQ {cq_id}: unsupported comparator {comparator!r}")
    return Filter(canon(etype), canon(prop), comparator, literal)


def _cq(raw: Any) -> CompetencyQuery:
    if not isinstance(raw, Mapping):
        raise PurposeError(f"CQ entry must be an object, got {type(raw).__name__}")
    cq_id = raw.get("id")
    if not isinstance(cq_id, int) or isinstance(cq_id, bool):
        raise PurposeError(f"CQ id must be an integer, got {cq_id!r}")
    try:
        category = Category.parse(raw.get("category", ""))
    except ValueError as exc:
        raise PurposeError(f"CQ {cq_id}: {exc}") from None
    cq = CompetencyQuery(
        id=cq_id,
        question=str(raw.get("question", "")),
        action=str(raw.get("action", "")),
        category=category,
        target_etypes=tuple(canon(t) for t in raw.get("target_etypes", [])),
        required_properties=tuple(_pair(p, "required_properties", cq_id) for p in raw.get("required_properties", [])),
        filters=tuple(_filter(f, cq_id) for f in raw.get("filters", [])),
    )
    problems = cq.problems()
    if problems:
        raise PurposeError("; ".join(problems))
    return cq


def etype_display_names(text: str) -> dict[str, str]:
    """Original spelling of every etype named in a purpose file, keyed by canonical id."""
    data = json.loads(text)
    names: dict[str, str] = {}
    for raw in data.get("cqs", []):
        for t in raw.get("target_etypes", []):
            names.setdefault(canon(t), t)
    for rel in data.get("relations", []):
        for t in (rel.get("from"), rel.get("to")):
            if isinstance(t, str):
                names.setdefault(canon(t), t)
    return names


def parse_purpose(text: str) -> Purpose:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PurposeError(exc.msg, (exc.lineno, exc.colno)) from None
    if not isinstance(data, Mapping):
        raise PurposeError("purpose file must contain a JSON object")

    cqs = tuple(_cq(c) for c in data.get("cqs", []))
    ids = [c.id for c in cqs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise PurposeError(f"duplicate CQ id(s): {dupes}")
    if not any(c.category is Category.CORE for c in cqs):
        raise PurposeError("no Core CQ: at least one CQ must be categorized Core")

    raw_th = data.get("thresholds", {}) or {}
    unknown = sorted(set(raw_th) - set(_THRESHOLD_KEYS))
    if unknown:
        raise PurposeError(f"unknown threshold(s): {unknown}")
    thresholds = GateThresholds(**{k: float(v) for k, v in raw_th.items()})
    problems = thresholds.problems()
    if problems:
        raise PurposeError("; ".join(problems))

    relations = []
    for rel in data.get("relations", []):
        try:
            relations.append(Relation(canon(rel["from"]), canon(rel["to"]), canon(rel["name"])))
        except (KeyError, TypeError):
            raise PurposeError(f"malformed relation {rel!r}") from None

    extensions = data.get("extensions", {}) or {}
    weights = tuple(float(w) for w in data.get("etr_weights", (0.5, 0.5)))
    if len(weights) != 2 or abs(sum(weights) - 1.0) > 1e-9:
        raise PurposeError(f"etr_weights must be two numbers summing to 1, got {list(weights)}")
    spr_scope = data.get("spr_scope", "all")
    if spr_scope not in ("all", "selected"):
        raise PurposeError(f"spr_scope must be 'all' or 'selected', got {spr_scope!r}")
    default_category = data.get("default_category")
    try:
        default_category = Category.parse(default_category) if default_category else None
    except ValueError as exc:
        raise PurposeError(str(exc)) from None

    return Purpose(
        description=str(data.get("description", "")),
        cqs=cqs,
        dataset_refs=tuple(data.get("datasets", [])),
        ontology_refs=tuple(data.get("ontologies", [])),
        thresholds=thresholds,
        mappings_ref=data.get("mappings"),
        relations=tuple(relations),
        keep_model_terminology=bool(data.get("keep_model_terminology", False)),
        allow_new_etypes=bool(extensions.get("new_etypes", False)),
        etr_weights=weights,  # type: ignore[arg-type]
        spr_scope=spr_scope,
        default_category=default_category,
    )


# --- CSV datasets -------------------------------------------------------


@dataclass(frozen=True)
class Attribute:
    name: str
    raw_name: str
    inferred_type: str
    category: Category
    description: str = ""
    etype_hint: str | None = None
    annotated: bool = True


@dataclass(frozen=True)
class DatasetSchema:
    dataset_id: str
    attributes: tuple[Attribute, ...]

    def attribute(self, name: str) -> Attribute | None:
        c = canon(name)
        for a in self.attributes:
            if a.name == c or a.raw_name == name:
                return a
        return None


@dataclass(frozen=True)
class Dataset:
    schema: DatasetSchema
    rows: tuple[dict[str, str], ...] = field(default_factory=tuple)


_INT = re.compile(r"^[+-]?\d+$")
_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_DMY_DATE = re.compile(r"^(\d{2})/(\d{2})/(\d{4})$")
_BOOLEANS = {"true": True, "false": False, "1": True, "0": False}


def parse_date(cell: str) -> dt.date | None:
    """Parse ``YYYY-MM-DD`` or ``DD/MM/YYYY``; None when neither applies."""
    cell = cell.strip()
    m = _ISO_DATE.match(cell)
    try:
        if m:
            return dt.date(int(m[1]), int(m[2]), int(m[3]))
        m = _DMY_DATE.match(cell)
        if m:
            return dt.date(int(m[3]), int(m[2]), int(m[1]))
    except ValueError:
        return None
    return None


def parse_decimal(cell: str) -> Decimal | None:
    try:
        value = Decimal(cell.strip())
    except InvalidOperation:
        return None
    return value if value.is_finite() else None


def parse_integer(cell: str) -> int | None:
    cell = cell.strip()
    return int(cell) if _INT.match(cell) else None


def parse_boolean(cell: str) -> bool | None:
    return _BOOLEANS.get(cell.strip().lower())


def infer_type(cells) -> str:
    values = [c.strip() for c in cells if c.strip()]
    if not values:
        return "string"
    if all(parse_integer(v) is not None for v in values):
        return "integer"
    if all(parse_decimal(v) is not None for v in values):
        return "decimal"
    if all(parse_date(v) is not None for v in values):
        return "date"
    if all(parse_boolean(v) is not None for v in values):
        return "boolean"
    return "string"


def load_dataset_csv(
    text: str,
    annotations: Mapping[str, Mapping[str, Any]] | None = None,
    *,
    dataset_id: str = "dataset",
    default_category: Category | None = None,
) -> Dataset:
    """Parse CSV text into a typed, annotated :class:`Dataset`.

    ``annotations`` maps a raw column name to ``{"category", "etype_hint",
    "description"}``. Columns without an annotation take ``default_category``;
    when that is unset too the load fails.
    """
    if not text.strip():
        raise DatasetError(f"{dataset_id}: empty input")
    annotations = annotations or {}
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError(f"{dataset_id}: empty input") from None
    raw_rows = []
    for index, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"{dataset_id}: row {index} has {len(row)} cells, header has {len(header)}")
        raw_rows.append(row)

    names = [canon(h) for h in header]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DatasetError(f"{dataset_id}: duplicate column names after canonicalization: {dupes}")

    attributes = []
    for col, raw_name in enumerate(header):
        note = annotations.get(raw_name)
        if note is None:
            if default_category is None:
                raise DatasetError(f"{dataset_id}: column {raw_name!r} has no annotation and no default category")
            category, hint, desc, annotated = default_category, None, "", False
        else:
            try:
                category = Category.parse(note.get("category", ""))
            except ValueError as exc:
                raise DatasetError(f"{dataset_id}: column {raw_name!r}: {exc}") from None
            hint = note.get("etype_hint")
            desc = note.get("description", "")
            annotated = True
        attributes.append(
            Attribute(
                name=names[col],
                raw_name=raw_name,
                inferred_type=infer_type(r[col] for r in raw_rows),
                category=category,
                description=desc,
                etype_hint=canon(hint) if hint else None,
                annotated=annotated,
            )
        )
    rows = tuple(dict(zip(header, r)) for r in raw_rows)
    return Dataset(DatasetSchema(dataset_id, tuple(attributes)), rows)


def load_dataset_file(path: str | Path, default_category: Category | None = None) -> Dataset:
    """Load ``x.csv`` together with its ``x.annotations.json`` sidecar, if present."""
    path = Path(path)
    sidecar = path.with_name(path.stem + ".annotations.json")
    annotations = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    return load_dataset_csv(
        path.read_text(encoding="utf-8"),
        annotations,
        dataset_id=path.stem,
        default_category=default_category,
    )


def dataset_to_csv(ds: Dataset) -> str:
    header = [a.raw_name for a in ds.schema.attributes]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in ds.rows:
        writer.writerow([row.get(h, "") for h in header])
    return buf.getvalue()


# --- ETG JSON -----------------------------------------------------------


def etg_to_dict(etg: ETG) -> dict:
    etypes = []
    for e in etg.etypes:
        props = []
        for p in e.properties:
            entry: dict[str, Any] = {"name": p.name, "kind": p.kind.value}
            if p.is_data:
                entry["datatype"] = p.datatype
            else:
                entry["range"] = p.range_etype
            entry["category"] = p.category.label
            props.append(entry)
        etypes.append(
            {
                "id": e.id,
                "name": e.name,
                "category": e.category.label,
                "provenance": e.provenance,
                "properties": props,
            }
        )
    return {"name": etg.name, "etypes": etypes}


def etg_from_dict(data: Mapping) -> ETG:
    try:
        etypes = []
        for raw in data["etypes"]:
            props = []
            for rp in raw.get("properties", []):
                kind = PropertyKind(rp.get("kind", "data"))
                category = Category.parse(rp.get("category", raw.get("category", "Common")))
                if kind is PropertyKind.DATA:
                    props.append(PropertyDef(canon(rp["name"]), kind, category, datatype=rp.get("datatype", "string")))
                else:
                    rng = rp.get("range")
                    props.append(PropertyDef(canon(rp["name"]), kind, category, range_etype=canon(rng) if rng else None))
            etypes.append(
                EType(
                    id=canon(raw["id"]),
                    name=raw.get("name", raw["id"]),
                    category=Category.parse(raw.get("category", "Common")),
                    properties=tuple(props),
                    provenance=raw.get("provenance", "model"),
                )
            )
        return ETG(str(data.get("name", "")), tuple(etypes))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed ETG document: {exc!r}") from None


def load_etg_json(text: str, *, provenance: str | None = None) -> ETG:
    """Parse an ETG document and reject it if it violates ETG invariants.

    ``provenance`` overrides the per-etype provenance recorded in the file,
    which is how reference ontologies are tagged on load.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"ETG JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    etg = etg_from_dict(data)
    if provenance is not None:
        etg = ETG(etg.name, tuple(EType(e.id, e.name, e.category, e.properties, provenance) for e in etg.etypes))
    violations = validate_etg(etg)
    if violations:
        raise SchemaError(f"ETG {etg.name!r} is invalid", violations)
    return etg


def save_etg_json(etg: ETG) -> str:
    return json.dumps(etg_to_dict(etg), indent=2, ensure_ascii=False) + "\n"


def load_ontology_file(path: str | Path) -> ETG:
    path = Path(path)
    etg = load_etg_json(path.read_text(encoding="utf-8"), provenance=f"ontology:{path.stem}")
    return etg if etg.name else ETG(path.stem, etg.etypes)


# --- N-Triples ----------------------------------------------------------

RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
XSD = "http://www.w3.org/2001/XMLSchema#"
_XSD_BY_DATATYPE = {
    "string": "string",
    "integer": "integer",
    "decimal": "decimal",
    "boolean": "boolean",
    "date": "date",
}
_DATATYPE_BY_XSD = {v: k for k, v in _XSD_BY_DATATYPE.items()}

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t", "\b": "\\b", "\f": "\\f"}


def _escape(text: str) -> str:
    out = []
    for ch in text:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


_UNESCAPE = re.compile(r'\\(?:u([0-9A-Fa-f]{4})|U([0-9A-Fa-f]{8})|([tbnrf"\'\\]))')
_SIMPLE = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


def _unescape(text: str) -> str:
    def sub(m: re.Match) -> str:
        if m[1] or m[2]:
            return chr(int(m[1] or m[2], 16))
        return _SIMPLE[m[3]]

    return _UNESCAPE.sub(sub, text)


def etype_uri(etype_id: str, base_uri: str = DEFAULT_BASE_URI) -> str:
    return f"{base_uri}schema:{etype_id}"


def property_uri(etype_id: str, prop: str, base_uri: str = DEFAULT_BASE_URI) -> str:
    return f"{base_uri}schema:{etype_id}:{prop}"


def lexical_form(value: Any, datatype: str) -> str:
    if datatype == "boolean":
        return "true" if value else "false"
    if datatype == "date":
        return value.isoformat()
    return str(value)


def serialize_eg_ntriples(eg: EG, base_uri: str = DEFAULT_BASE_URI) -> str:
    lines = []
    for ent in eg.entities.values():
        etype = eg.schema.etype(ent.etype)
        if etype is None:
            raise SchemaError(f"entity {ent.id} has unknown etype {ent.etype!r}")
        subj = f"<{ent.id}>"
        lines.append(f"{subj} <{RDF_TYPE}> <{etype_uri(etype.id, base_uri)}> .")
        for prop_name, value in ent.values.items():
            prop = etype.property(prop_name)
            if prop is None:
                raise SchemaError(f"entity {ent.id} has value for unknown property {prop_name!r}")
            literal = _escape(lexical_form(value, prop.datatype))
            xsd = _XSD_BY_DATATYPE[prop.datatype]
            lines.append(f'{subj} <{property_uri(etype.id, prop_name, base_uri)}> "{literal}"^^<{XSD}{xsd}> .')
        for prop_name, target in ent.links:
            lines.append(f"{subj} <{property_uri(etype.id, prop_name, base_uri)}> <{target}> .")
    lines.sort()
    return "".join(line + "\n" for line in lines)


_TRIPLE = re.compile(
    r'^<([^>\s]+)>\s+<([^>\s]+)>\s+(?:<([^>\s]+)>|"((?:[^"\\]|\\.)*)"(?:\^\^<([^>\s]+)>|@[A-Za-z0-9-]+)?)\s*\.\s*$'
)


def _typed_value(lexical: str, datatype: str):
    if datatype == "string":
        return lexical
    if datatype == "integer":
        return parse_integer(lexical)
    if datatype == "decimal":
        return parse_decimal(lexical)
    if datatype == "boolean":
        return {"true": True, "false": False, "1": True, "0": False}.get(lexical)
    if datatype == "date":
        m = _ISO_DATE.match(lexical)
        return parse_date(lexical) if m else None
    return None


def parse_eg_ntriples(text: str, schema: ETG, base_uri: str = DEFAULT_BASE_URI) -> EG:
    types: dict[str, str] = {}
    facts: list[tuple[int, str, str, str, str | None, Any]] = []
    etype_prefix = f"{base_uri}schema:"

    # only LF (optionally after CR) ends a line; splitlines() would also break on U+0085 and U+2028
    for lineno, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip(" \t\r")
        if not stripped or stripped.startswith("#"):
            continue
        m = _TRIPLE.match(stripped)
        if not m:
            raise NTriplesError("malformed triple", lineno)
        subj, pred, obj_iri, lexical, dtype_iri = m.groups()
        if pred == RDF_TYPE:
            if obj_iri is None or not obj_iri.startswith(etype_prefix):
                raise NTriplesError(f"rdf:type object {obj_iri or lexical!r} is not an etype URI", lineno)
            etype_id = obj_iri[len(etype_prefix):]
            if schema.etype(etype_id) is None:
                raise NTriplesError(f"etype {etype_id!r} is not in the schema", lineno)
            if types.setdefault(subj, etype_id) != etype_id:
                raise NTriplesError(f"entity {subj} has more than one rdf:type", lineno)
            continue
        if not pred.startswith(etype_prefix) or ":" not in pred[len(etype_prefix):]:
            raise NTriplesError(f"predicate {pred!r} is not a property URI", lineno)
        etype_id, prop_name = pred[len(etype_prefix):].split(":", 1)
        etype = schema.etype(etype_id)
        prop = etype.property(prop_name) if etype else None
        if prop is None:
            raise NTriplesError(f"property {etype_id}.{prop_name} is not in the schema", lineno)
        if obj_iri is not None:
            if prop.is_data:
                raise NTriplesError(f"data property {prop_name} has an IRI object", lineno)
            facts.append((lineno, subj, etype_id, prop_name, obj_iri, None))
        else:
            if not prop.is_data:
                raise NTriplesError(f"object property {prop_name} has a literal object", lineno)
            if dtype_iri is None:
                dtype = "string"
            elif dtype_iri.startswith(XSD):
                dtype = _DATATYPE_BY_XSD.get(dtype_iri[len(XSD):])
            else:
                dtype = None
            if dtype is None:
                raise NTriplesError(f"unsupported literal datatype {dtype_iri!r}", lineno)
            # integer literals are accepted for decimal properties
            if dtype != prop.datatype and not (dtype == "integer" and prop.datatype == "decimal"):
                raise NTriplesError(f"literal datatype {dtype} does not match {prop_name}: {prop.datatype}", lineno)
            value = _typed_value(_unescape(lexical), prop.datatype)
            if value is None:
                raise NTriplesError(f"invalid {prop.datatype} literal {lexical!r}", lineno)
            facts.append((lineno, subj, etype_id, prop_name, None, value))

    values: dict[str, dict[str, Any]] = {s: {} for s in types}
    links: dict[str, set[tuple[str, str]]] = {s: set() for s in types}
    for lineno, subj, etype_id, prop_name, target, value in facts:
        if types.get(subj) != etype_id:
            raise NTriplesError(f"subject {subj} is not typed as {etype_id}", lineno)
        if target is not None:
            links[subj].add((prop_name, target))
        else:
            if prop_name in values[subj]:
                raise NTriplesError(f"{subj} has more than one value for {prop_name}", lineno)
            values[subj][prop_name] = value

    entities = {
        s: Entity(s, types[s], dict(sorted(values[s].items())), frozenset(links[s])) for s in sorted(types)
    }
    eg = EG(schema, entities)
    violations = validate_eg(eg)
    if violations:
        raise SchemaError("parsed EG does not conform to its schema", violations)
    return eg
