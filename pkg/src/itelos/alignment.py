"""Knowledge alignment: ontology ranking, entity type recognition, final ETG, dataset cleaning."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import ComplianceError, MappingError
from .ingest import Attribute, Dataset, DatasetSchema, parse_boolean, parse_date, parse_decimal, parse_integer
from .model import ETG, Category, EType, PropertyDef, validate_etg
from .textsim import name_similarity

log = logging.getLogger(__name__)


def property_jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    """Jaccard over property-name sets; two empty sets count as identical."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def recognition_score(model_etype: EType, onto_etype: EType, weights: tuple[float, float] = (0.5, 0.5)) -> float:
    w_name, w_prop = weights
    return w_name * name_similarity(model_etype.id, onto_etype.id) + w_prop * property_jaccard(
        model_etype.property_names, onto_etype.property_names
    )


# model etype id -> [(ontology etype id, score)] sorted by score desc, id asc
PredictionVector = Mapping[str, tuple[tuple[str, float], ...]]


def etype_recognition(model: ETG, ontology: ETG, weights: tuple[float, float] = (0.5, 0.5)) -> PredictionVector:
    if len(weights) != 2 or abs(sum(weights) - 1.0) > 1e-9 or min(weights) < 0:
        raise ValueError(f"weights must be two non-negative numbers summing to 1, got {weights}")
    out = {}
    for m in model.etypes:
        scored = [(o.id, recognition_score(m, o, weights)) for o in ontology.etypes]
        scored.sort(key=lambda s: (-s[1], s[0]))
        out[m.id] = tuple(scored)
    return out


@dataclass(frozen=True)
class OntologyScore:
    ontology_id: str
    etype_overlap: int
    sharability: Mapping[str, float]
    aggregate: float
    # model etype -> (ontology etype, score) for matches at or above threshold
    matches: Mapping[str, tuple[str, float]] = field(default_factory=dict)


def rank_ontologies(
    model: ETG,
    ontologies: Sequence[ETG],
    *,
    threshold: float = 0.5,
    weights: tuple[float, float] = (0.5, 0.5),
) -> list[OntologyScore]:
    scores = []
    for onto in ontologies:
        predictions = etype_recognition(model, onto, weights)
        matches = {}
        sharability = {}
        for m in model.etypes:
            ranked = predictions[m.id]
            if not ranked or ranked[0][1] < threshold:
                continue
            onto_id, score = ranked[0]
            matches[m.id] = (onto_id, score)
            onto_etype = onto.etype(onto_id)
            names = onto_etype.property_names
            shared = len(names & m.property_names)
            sharability[onto_id] = shared / len(names) if names else 0.0
        aggregate = sum(sharability.values()) / len(sharability) if sharability else 0.0
        scores.append(OntologyScore(onto.name, len(matches), sharability, aggregate, matches))
    scores.sort(key=lambda s: (-s.etype_overlap, -s.aggregate, s.ontology_id))
    return scores


@dataclass(frozen=True)
class Origin:
    source: str  # "model" or "ontology"
    ontology: str | None = None
    etype: str | None = None

    def __str__(self) -> str:
        return "model" if self.source == "model" else f"ontology({self.ontology}, {self.etype})"


MODEL = Origin("model")


@dataclass(frozen=True)
class AlignmentProvenance:
    """Where every etype and property of the final ETG came from.

    ``matches`` records ETR matches even when the model terminology is kept;
    ``renamed`` maps model etype ids to the final ids they were adopted as.
    """

    etypes: Mapping[str, Origin]
    properties: Mapping[tuple[str, str], Origin]
    matches: Mapping[str, tuple[str, str, float]] = field(default_factory=dict)
    renamed: Mapping[str, str] = field(default_factory=dict)
    adopted_fraction: Mapping[str, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "etypes": {k: str(v) for k, v in sorted(self.etypes.items())},
            "properties": {f"{e}.{p}": str(v) for (e, p), v in sorted(self.properties.items())},
            "matches": {
                k: {"ontology": o, "etype": e, "score": round(s, 6)} for k, (o, e, s) in sorted(self.matches.items())
            },
            "renamed": dict(sorted(self.renamed.items())),
            "adopted_fraction": {k: round(v, 6) for k, v in sorted(self.adopted_fraction.items())},
            "warnings": list(self.warnings),
        }


def check_compliance(etg: ETG, mapping, renamed: Mapping[str, str] | None = None) -> list[tuple[str, str, str, str]]:
    """Attributes whose (etype, property) target no longer exists in ``etg``."""
    renamed = renamed or {}
    orphans = []
    for (ds, attr), (et, prop) in sorted(mapping.items()):
        etype = etg.etype(renamed.get(et, et))
        target = etype.property(prop) if etype else None
        if target is None or not target.is_data:
            orphans.append((ds, attr, et, prop))
    return orphans


def generate_final_etg(
    model: ETG,
    ranking: Sequence[OntologyScore],
    predictions: Mapping[str, PredictionVector],
    mapping: Mapping[tuple[str, str], tuple[str, str]],
    ontologies: Mapping[str, ETG],
    *,
    threshold: float = 0.5,
    keep_model_terminology: bool = False,
    name: str | None = None,
) -> tuple[ETG, AlignmentProvenance]:
    """Adopt etypes from the top-ranked ontology into the model.

    Common and Core etypes whose best prediction in the top ontology reaches
    ``threshold`` take the ontology etype's id and name, and gain its
    properties (model datatypes win on conflict). Contextual etypes stay as
    modeled. With ``keep_model_terminology`` nothing is renamed or merged but
    the matches are still recorded. Raises :class:`ComplianceError` when a
    dataset attribute in ``mapping`` is left without a target.
    """
    etype_origin = {e.id: MODEL for e in model.etypes}
    prop_origin = {(e.id, p.name): MODEL for e in model.etypes for p in e.properties}
    matches: dict[str, tuple[str, str, float]] = {}
    renamed: dict[str, str] = {}
    warnings: list[str] = []
    adopted_count = {c: 0 for c in (Category.COMMON, Category.CORE)}
    eligible_count = {c: 0 for c in (Category.COMMON, Category.CORE)}

    top = ranking[0] if ranking else None
    onto = ontologies.get(top.ontology_id) if top else None
    new_etypes = {e.id: e for e in model.etypes}
    order = [e.id for e in model.etypes]

    if onto is not None:
        vector = predictions[top.ontology_id]
        taken: set[str] = set()
        # Common before Core, then by id, so the more reusable etype claims a shared target first
        for m in sorted(model.etypes, key=lambda e: (e.category, e.id)):
            if m.category is Category.CONTEXTUAL:
                continue
            eligible_count[m.category] += 1
            ranked = vector.get(m.id, ())
            if not ranked or ranked[0][1] < threshold:
                continue
            onto_id, score = ranked[0]
            matches[m.id] = (onto.name, onto_id, score)
            if keep_model_terminology:
                continue
            if onto_id in taken or (onto_id != m.id and onto_id in new_etypes):
                warnings.append(f"{m.id}: ontology etype {onto_id} already in use; kept model etype")
                continue
            taken.add(onto_id)
            source = onto.etype(onto_id)
            merged = {p.name: p for p in m.properties}
            for p in source.properties:
                mine = merged.get(p.name)
                if mine is None:
                    merged[p.name] = replace(p, category=m.category)
                    prop_origin[(onto_id, p.name)] = Origin("ontology", onto.name, onto_id)
                else:
                    if (mine.kind, mine.datatype) != (p.kind, p.datatype):
                        warnings.append(
                            f"{m.id}.{p.name}: model {mine.datatype or mine.range_etype} kept over "
                            f"ontology {p.datatype or p.range_etype}"
                        )
                    prop_origin[(onto_id, p.name)] = prop_origin.pop((m.id, p.name))
            for p in m.properties:
                if (m.id, p.name) in prop_origin:
                    prop_origin[(onto_id, p.name)] = prop_origin.pop((m.id, p.name))
            del new_etypes[m.id]
            order[order.index(m.id)] = onto_id
            new_etypes[onto_id] = EType(
                onto_id, source.name, m.category, tuple(merged[k] for k in sorted(merged)), f"ontology:{onto.name}"
            )
            etype_origin.pop(m.id)
            etype_origin[onto_id] = Origin("ontology", onto.name, onto_id)
            renamed[m.id] = onto_id
            adopted_count[m.category] += 1

    # ranges pointing at renamed etypes; ontology properties whose range is not in the final ETG are dropped
    final_ids = set(new_etypes)
    etypes = []
    for e in (new_etypes[i] for i in order):
        props = []
        for p in e.properties:
            if not p.is_data:
                rng = renamed.get(p.range_etype, p.range_etype)
                if rng not in final_ids:
                    warnings.append(f"{e.id}.{p.name}: range {rng} not in final ETG; property dropped")
                    prop_origin.pop((e.id, p.name), None)
                    continue
                p = replace(p, range_etype=rng)
            props.append(p)
        etypes.append(replace(e, properties=tuple(props)))
    final = ETG(name or model.name, tuple(etypes))

    orphans = check_compliance(final, mapping, renamed)
    if orphans:
        raise ComplianceError(orphans)
    violations = validate_etg(final)
    if violations:
        raise ComplianceError([("<etg>", str(v), "", "") for v in violations])

    fraction = {
        c.label: (adopted_count[c] / eligible_count[c] if eligible_count[c] else 0.0) for c in adopted_count
    }
    provenance = AlignmentProvenance(
        etypes=dict(sorted(etype_origin.items())),
        properties=dict(sorted(prop_origin.items())),
        matches=dict(sorted(matches.items())),
        renamed=dict(sorted(renamed.items())),
        adopted_fraction=fraction,
        warnings=tuple(warnings),
    )
    return final, provenance


# --- dataset cleaning ---------------------------------------------------


@dataclass(frozen=True)
class CleaningReport:
    dataset_id: str
    rejections: Mapping[str, int]
    dropped_attributes: tuple[str, ...] = ()

    @property
    def total_rejections(self) -> int:
        return sum(self.rejections.values())


def clean_cell(cell: str, datatype: str) -> str | None:
    """Re-encode one cell for ``datatype``; None when it cannot be converted."""
    text = cell.strip()
    if datatype == "string":
        return text
    if datatype == "integer":
        value = parse_integer(text)
        return None if value is None else str(value)
    if datatype == "decimal":
        value = parse_decimal(text)
        return None if value is None else str(value)
    if datatype == "boolean":
        value = parse_boolean(text)
        return None if value is None else ("true" if value else "false")
    if datatype == "date":
        value = parse_date(text)
        return None if value is None else value.isoformat()
    raise ValueError(f"unknown datatype {datatype!r}")


def clean_dataset(
    ds: Dataset,
    etg: ETG,
    mapping: Mapping[str, tuple[str, str]],
    keep: Iterable[str] = (),
) -> tuple[Dataset, CleaningReport]:
    """Conform a dataset to the ETG.

    ``mapping`` sends attribute names (raw or canonical) to (etype, property).
    Attributes listed in ``keep`` (entity keys) are passed through trimmed;
    everything else without a mapping is dropped.
    """
    resolved: dict[str, tuple[Attribute, PropertyDef]] = {}
    for attr_name, (et, prop) in mapping.items():
        attr = ds.schema.attribute(attr_name)
        if attr is None:
            raise MappingError(f"{ds.schema.dataset_id}: mapping names unknown attribute {attr_name!r}")
        etype = etg.etype(et)
        target = etype.property(prop) if etype else None
        if target is None:
            raise MappingError(f"{ds.schema.dataset_id}: mapping targets absent property {et}.{prop}")
        if not target.is_data:
            raise MappingError(f"{ds.schema.dataset_id}: {et}.{prop} is an object property")
        resolved[attr.raw_name] = (attr, target)
    passthrough = {}
    for name in keep:
        attr = ds.schema.attribute(name)
        if attr is None:
            raise MappingError(f"{ds.schema.dataset_id}: key attribute {name!r} not in dataset")
        if attr.raw_name not in resolved:
            passthrough[attr.raw_name] = attr

    rejections = {raw: 0 for raw in resolved}
    rows = []
    for row in ds.rows:
        out = {}
        for raw, (attr, target) in resolved.items():
            cell = row.get(raw, "")
            if not cell.strip():
                out[raw] = ""
                continue
            cleaned = clean_cell(cell, target.datatype)
            if cleaned is None:
                rejections[raw] += 1
                cleaned = ""
            out[raw] = cleaned
        for raw in passthrough:
            out[raw] = row.get(raw, "").strip()
        rows.append(out)

    attributes = []
    for a in ds.schema.attributes:
        if a.raw_name in resolved:
            attributes.append(replace(a, inferred_type=resolved[a.raw_name][1].datatype))
        elif a.raw_name in passthrough:
            attributes.append(a)
    dropped = tuple(a.raw_name for a in ds.schema.attributes if a.raw_name not in resolved and a.raw_name not in passthrough)
    cleaned = Dataset(DatasetSchema(ds.schema.dataset_id, tuple(attributes)), tuple(rows))
    report = CleaningReport(ds.schema.dataset_id, dict(sorted(rejections.items())), dropped)
    if report.total_rejections:
        log.warning("%s: %d cells rejected during cleaning", ds.schema.dataset_id, report.total_rejections)
    return cleaned, report
