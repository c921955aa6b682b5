"""Set-overlap metrics, the four phase gates, and CQ execution over an EG.

Metric values are exact :class:`fractions.Fraction` objects; reports render
them as decimals.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

from .errors import GateInputError, QueryError
from .ingest import parse_boolean, parse_date, parse_decimal, parse_integer
from .model import (
    EG,
    ETG,
    Category,
    CompetencyQuery,
    ElementSet,
    Entity,
    Filter,
    GateThresholds,
    etg_elements,
)


def _check_kind(a: ElementSet, b: ElementSet) -> None:
    if a.kind is not b.kind:
        raise ValueError(f"element set kinds differ: {a.kind.value} vs {b.kind.value}")


def coverage(a: ElementSet, b: ElementSet) -> Fraction:
    """|a & b| / |a|; an empty ``a`` is vacuously covered."""
    _check_kind(a, b)
    if not a.members:
        return Fraction(1)
    return Fraction(len(a.members & b.members), len(a.members))


def extensiveness(a: ElementSet, b: ElementSet) -> Fraction:
    """Share of the union contributed by ``b`` alone; 0 when both are empty."""
    _check_kind(a, b)
    union = len(a.members | b.members)
    if union == 0:
        return Fraction(0)
    return Fraction(len(b.members) - len(a.members & b.members), union)


def sparsity(a: ElementSet, b: ElementSet) -> Fraction:
    """Symmetric difference over union; 0 when both are empty."""
    _check_kind(a, b)
    union = len(a.members | b.members)
    if union == 0:
        return Fraction(0)
    return Fraction(len(a.members) + len(b.members) - 2 * len(a.members & b.members), union)


def as_decimal(value: Fraction, places: int = 6) -> float:
    return round(float(value), places)


# --- gates --------------------------------------------------------------


class Phase(str, enum.Enum):
    A_INCEPTION = "A_inception"
    B_MODELING = "B_modeling"
    C_ALIGNMENT = "C_alignment"
    D_INTEGRATION = "D_integration"

    @classmethod
    def parse(cls, value: "str | Phase") -> "Phase":
        if isinstance(value, Phase):
            return value
        short = {"a": cls.A_INCEPTION, "b": cls.B_MODELING, "c": cls.C_ALIGNMENT, "d": cls.D_INTEGRATION}
        try:
            return short.get(str(value).lower()) or cls(value)
        except ValueError:
            raise ValueError(f"unknown phase {value!r}") from None


PURPOSE_REVISION = "purpose revision"
_BACKTRACK = {
    Phase.A_INCEPTION: PURPOSE_REVISION,
    Phase.B_MODELING: Phase.A_INCEPTION.value,
    Phase.C_ALIGNMENT: Phase.B_MODELING.value,
    Phase.D_INTEGRATION: Phase.C_ALIGNMENT.value,
}


@dataclass(frozen=True)
class Verdict:
    name: str
    observed: Fraction
    required: str
    passed: bool


@dataclass(frozen=True)
class GateReport:
    phase: Phase
    metric_values: Mapping[str, Fraction]
    verdicts: tuple[Verdict, ...]
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def backtrack_to(self) -> str | None:
        return None if self.passed else _BACKTRACK[self.phase]

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "metric_values": {
                k: {"value": as_decimal(v), "exact": str(v)} for k, v in sorted(self.metric_values.items())
            },
            "verdicts": [
                {
                    "name": v.name,
                    "observed": as_decimal(v.observed),
                    "required": v.required,
                    "passed": v.passed,
                }
                for v in self.verdicts
            ],
            "overall": "pass" if self.passed else "fail",
            "backtrack_to": self.backtrack_to,
            "notes": list(self.notes),
        }


def _at_least(name: str, value: Fraction, threshold: float) -> Verdict:
    bound = Fraction(str(threshold))
    return Verdict(name, value, f">= {threshold}", value >= bound)


def _within(name: str, value: Fraction, low: float, high: float) -> Verdict:
    ok = Fraction(str(low)) <= value <= Fraction(str(high))
    return Verdict(name, value, f"in [{low}, {high}]", ok)


def _require(inputs: Mapping[str, Any], phase: Phase, *keys: str) -> list:
    missing = [k for k in keys if k not in inputs]
    if missing:
        raise GateInputError(f"gate {phase.value} is missing inputs: {missing}")
    return [inputs[k] for k in keys]


def run_gate(phase: "Phase | str", inputs: Mapping[str, Any], thresholds: GateThresholds) -> GateReport:
    """Evaluate one phase gate.

    Inputs per phase:

    * A: ``cq_etypes``, ``cq_properties``, ``dataset_etypes``, ``dataset_properties``
    * B: ``cq_etypes``, ``cq_properties``, ``model`` (ETG)
    * C: ``etg`` (final ETG), ``ontologies`` (list of ETG), ``orphans`` (compliance failures)
    * D: ``eg``, ``cqs``

    Etype-level and property-level sets are judged separately; the gate
    fails if either level fails.
    """
    phase = Phase.parse(phase)
    metrics: dict[str, Fraction] = {}
    verdicts: list[Verdict] = []
    notes: list[str] = []

    if phase is Phase.A_INCEPTION:
        cq_e, cq_p, ds_e, ds_p = _require(
            inputs, phase, "cq_etypes", "cq_properties", "dataset_etypes", "dataset_properties"
        )
        for level, a, b in (("etypes", cq_e, ds_e), ("properties", cq_p, ds_p)):
            name = f"cov_{level}"
            metrics[name] = coverage(a, b)
            verdicts.append(_at_least(name, metrics[name], thresholds.theta_a_cov))

    elif phase is Phase.B_MODELING:
        cq_e, cq_p, model = _require(inputs, phase, "cq_etypes", "cq_properties", "model")
        model_e, model_p = etg_elements(model)
        for level, a, b in (("etypes", cq_e, model_e), ("properties", cq_p, model_p)):
            name = f"ext_{level}"
            metrics[name] = extensiveness(a, b)
            verdicts.append(_within(name, metrics[name], thresholds.theta_b_ext_min, thresholds.theta_b_ext_max))
            missing = sorted(a.members - b.members)
            if missing:
                notes.append(f"model lacks CQ {level}: {missing}")
                verdicts.append(Verdict(f"cq_{level}_in_model", coverage(a, b), "== 1", False))

    elif phase is Phase.C_ALIGNMENT:
        etg, ontologies, orphans = _require(inputs, phase, "etg", "ontologies", "orphans")
        final_e, final_p = etg_elements(etg)
        for onto in ontologies:
            onto_e, onto_p = etg_elements(onto)
            for level, a, b in (("etypes", final_e, onto_e), ("properties", final_p, onto_p)):
                name = f"spr_{level}[{onto.name}]"
                metrics[name] = sparsity(a, b)
                verdicts.append(_at_least(name, metrics[name], thresholds.theta_c_spr))
        if not ontologies:
            notes.append("no reference ontologies; sparsity not evaluated")
        compliant = Fraction(0 if orphans else 1)
        metrics["dataset_compliance"] = compliant
        verdicts.append(Verdict("dataset_compliance", compliant, "== 1", not orphans))
        for ds, attr, et, prop in orphans:
            notes.append(f"orphaned attribute {ds}.{attr} (was {et}.{prop})")

    else:
        eg, cqs = _require(inputs, phase, "eg", "cqs")
        results = {cq.id: execute_cq(eg, cq) for cq in cqs}
        core = [cq for cq in cqs if cq.category is Category.CORE]
        answer_core = Fraction(sum(results[c.id].answerable for c in core), len(core)) if core else Fraction(1)
        answer_all = Fraction(sum(r.answerable for r in results.values()), len(cqs)) if cqs else Fraction(1)
        metrics["answerable_core"] = answer_core
        metrics["answerable_all"] = answer_all
        verdicts.append(_at_least("answerable_core", answer_core, thresholds.theta_d_core))
        verdicts.append(_at_least("answerable_all", answer_all, thresholds.theta_d_all))
        for cq_id, r in sorted(results.items()):
            notes.append(f"CQ {cq_id}: answerable={r.answerable} rows={r.row_count}")

    return GateReport(phase, metrics, tuple(verdicts), tuple(notes))


# --- CQ execution -------------------------------------------------------


@dataclass(frozen=True)
class CqResult:
    cq_id: int
    answerable: bool
    rows: tuple[tuple[str, Mapping[str, Any]], ...] = ()
    reasons: tuple[str, ...] = field(default=(), compare=False)

    @property
    def row_count(self) -> int:
        return len(self.rows)


def _coerce_literal(f: Filter, datatype: str) -> Any:
    lit = f.literal
    if datatype == "string":
        return str(lit)
    text = str(lit).lower() if isinstance(lit, bool) else str(lit)
    parsed = {
        "integer": parse_integer,
        "decimal": parse_decimal,
        "boolean": parse_boolean,
        "date": parse_date,
    }[datatype](text)
    if parsed is None:
        raise QueryError(f"filter {f.etype}.{f.property} {f.comparator} {lit!r}: literal is not a valid {datatype}")
    return parsed


def _compile_filter(f: Filter, datatype: str):
    if f.comparator in ("<", ">") and datatype not in ("integer", "decimal", "date"):
        raise QueryError(f"filter {f.etype}.{f.property} {f.comparator}: ordering is undefined for {datatype}")
    if f.comparator == "contains" and datatype != "string":
        raise QueryError(f"filter {f.etype}.{f.property} contains: requires a string property, got {datatype}")
    literal = _coerce_literal(f, datatype)

    def check(entity: Entity) -> bool:
        if f.property not in entity.values:
            return False
        value = entity.values[f.property]
        if f.comparator == "=":
            return value == literal
        if f.comparator == "<":
            return value < literal
        if f.comparator == ">":
            return value > literal
        return literal in value

    return check


def execute_cq(eg: EG, cq: CompetencyQuery) -> CqResult:
    """Run a CQ: entities of its first target etype with every required value
    present and every filter satisfied (filters on another etype follow one
    object-property hop)."""
    schema: ETG = eg.schema
    reasons = []
    for et in cq.target_etypes:
        if schema.etype(et) is None:
            reasons.append(f"etype {et} not in schema")
    for et, prop in cq.required_properties:
        etype = schema.etype(et)
        if etype is not None and etype.property(prop) is None:
            reasons.append(f"property {et}.{prop} not in schema")
    for f in cq.filters:
        etype = schema.etype(f.etype)
        if etype is not None and etype.property(f.property) is None:
            reasons.append(f"filter property {f.etype}.{f.property} not in schema")
    if reasons:
        return CqResult(cq.id, False, reasons=tuple(reasons))

    main = schema.etype(cq.target_etypes[0])
    required = [p for et, p in cq.required_properties if et == main.id]
    local, remote = [], {}
    for f in cq.filters:
        prop = schema.etype(f.etype).property(f.property)
        if not prop.is_data:
            raise QueryError(f"filter {f.etype}.{f.property}: filters apply to data properties only")
        check = _compile_filter(f, prop.datatype)
        if f.etype == main.id:
            local.append(check)
        else:
            remote.setdefault(f.etype, []).append(check)

    hops = {}
    for et in remote:
        via = sorted(p.name for p in main.object_properties if p.range_etype == et)
        if not via:
            return CqResult(cq.id, False, reasons=(f"no object property links {main.id} to {et}",))
        hops[et] = set(via)

    rows = []
    for ent_id in sorted(eg.entities):
        ent = eg.entities[ent_id]
        if ent.etype != main.id:
            continue
        if any(p not in ent.values for p in required):
            continue
        if not all(check(ent) for check in local):
            continue
        ok = True
        for et, checks in remote.items():
            targets = [eg.entities[t] for p, t in ent.links if p in hops[et] and t in eg.entities]
            if not any(all(c(t) for c in checks) for t in targets):
                ok = False
                break
        if ok:
            rows.append((ent_id, {p: ent.values[p] for p in required}))
    return CqResult(cq.id, True, tuple(rows))
