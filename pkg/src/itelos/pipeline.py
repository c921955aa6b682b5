"""Four-phase orchestration with gates, staged artifacts and resumable state."""
from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .alignment import (
    AlignmentProvenance,
    CleaningReport,
    check_compliance,
    clean_dataset,
    etype_recognition,
    generate_final_etg,
    rank_ontologies,
)
from .errors import ComplianceError, ItelosError, MappingError
from .inception import CandidateSet, SchemaMatch, collect_candidates, match_schema, order_by_category
from .ingest import (
    Dataset,
    etype_display_names,
    load_dataset_file,
    load_etg_json,
    load_ontology_file,
    parse_eg_ntriples,
    parse_purpose,
    save_etg_json,
    serialize_eg_ntriples,
)
from .integration import MappingSpec, integrate, load_mappings_json
from .metrics import GateReport, Phase, execute_cq, run_gate
from .model import DEFAULT_BASE_URI, EG, ETG, ElementKind, ElementSet, Purpose
from .modeling import ModelingDecision, attribute_mapping, build_etg_model, select_datasets

log = logging.getLogger(__name__)

PHASES = (Phase.A_INCEPTION, Phase.B_MODELING, Phase.C_ALIGNMENT, Phase.D_INTEGRATION)
PHASE_DIRS = {
    Phase.A_INCEPTION: "inception",
    Phase.B_MODELING: "model",
    Phase.C_ALIGNMENT: "align",
    Phase.D_INTEGRATION: "integrate",
}
EXIT_OK, EXIT_ERROR, EXIT_GATE = 0, 1, 2


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass
class PipelineState:
    cursor: str | None = None  # last phase whose gate passed
    artifacts: dict[str, str] = field(default_factory=dict)
    gate_history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"cursor": self.cursor, "artifacts": dict(self.artifacts), "gate_history": list(self.gate_history)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineState":
        return cls(data.get("cursor"), dict(data.get("artifacts", {})), list(data.get("gate_history", [])))


@dataclass
class PipelineResult:
    exit_code: int
    state: PipelineState
    message: str = ""
    backtrack_to: str | None = None

    def to_dict(self) -> dict:
        return {
            "exit_code": self.exit_code,
            "message": self.message,
            "backtrack_to": self.backtrack_to,
            **self.state.to_dict(),
        }


class Project:
    """A purpose file together with everything it references, loaded lazily."""

    def __init__(self, purpose_path: str | Path, thresholds: Mapping[str, float] | None = None):
        self.path = Path(purpose_path)
        self.root = self.path.parent
        self.text = self.path.read_text(encoding="utf-8")
        purpose = parse_purpose(self.text)
        if thresholds:
            merged = replace(purpose.thresholds, **{k: float(v) for k, v in thresholds.items()})
            problems = merged.problems()
            if problems:
                raise ItelosError("; ".join(problems))
            purpose = replace(purpose, thresholds=merged)
        self.purpose: Purpose = purpose
        self._datasets: list[Dataset] | None = None
        self._ontologies: list[ETG] | None = None
        self._mappings: list[MappingSpec] | None = None

    @property
    def datasets(self) -> list[Dataset]:
        if self._datasets is None:
            self._datasets = [
                load_dataset_file(self.root / ref, self.purpose.default_category) for ref in self.purpose.dataset_refs
            ]
        return self._datasets

    @property
    def ontologies(self) -> list[ETG]:
        if self._ontologies is None:
            self._ontologies = [load_ontology_file(self.root / ref) for ref in self.purpose.ontology_refs]
        return self._ontologies

    @property
    def mappings(self) -> list[MappingSpec]:
        if self._mappings is None:
            if not self.purpose.mappings_ref:
                raise MappingError("the purpose names no mappings file")
            self._mappings = load_mappings_json((self.root / self.purpose.mappings_ref).read_text(encoding="utf-8"))
        return self._mappings

    def dataset(self, dataset_id: str) -> Dataset:
        for ds in self.datasets:
            if ds.schema.dataset_id == dataset_id:
                return ds
        raise MappingError(f"mapping names unknown dataset {dataset_id!r}")


@dataclass
class Context:
    """In-memory products of the phases run so far."""

    cands: CandidateSet | None = None
    matches: list[SchemaMatch] | None = None
    model: ETG | None = None
    decision: ModelingDecision | None = None
    final: ETG | None = None
    renamed: dict[str, str] = field(default_factory=dict)
    cleaned: list[tuple[Dataset, MappingSpec]] | None = None
    cleaning: list[CleaningReport] = field(default_factory=list)
    eg: EG | None = None


# --- phase bodies -------------------------------------------------------


def _union(sets: Sequence[ElementSet], kind: ElementKind) -> ElementSet:
    out = ElementSet(kind)
    for s in sets:
        out = out | s
    return out


def _inception(project: Project, ctx: Context) -> tuple[dict, dict]:
    ctx.cands = collect_candidates(project.purpose.cqs)
    ctx.matches = [match_schema(ds.schema, ctx.cands) for ds in project.datasets]
    inputs = {
        "cq_etypes": ctx.cands.all_etypes(),
        "cq_properties": ctx.cands.all_properties(),
        "dataset_etypes": _union([m.matched_etypes() for m in ctx.matches], ElementKind.ETYPES),
        "dataset_properties": _union([m.matched_properties() for m in ctx.matches], ElementKind.PROPERTIES),
    }
    c = ctx.cands
    artifact = {
        "candidates": {
            "etypes": {cat.label: sorted(s.members) for cat, s in c.etypes.items()},
            "properties": {cat.label: sorted(s.members) for cat, s in c.properties.items()},
            "pairs": [{"etype": e, "property": p, "category": cat.label} for (e, p), cat in c.pairs.items()],
            "etype_provenance": {k: list(v) for k, v in c.etype_provenance.items()},
        },
        "datasets": [
            {
                "dataset": ds.schema.dataset_id,
                "attributes_by_category": {
                    label: [a.name for a in batch]
                    for label, batch in zip(("Common", "Core", "Contextual"), order_by_category(ds.schema.attributes))
                },
                "matches": [
                    {"attribute": p.attribute, "etype": p.etype, "property": p.property, "score": round(p.score, 6)}
                    for p in m.pairs
                ],
                "cov_etypes": str(m.cov_etypes),
                "cov_properties": str(m.cov_properties),
            }
            for ds, m in zip(project.datasets, ctx.matches)
        ],
    }
    return inputs, {"inception.json": dumps(artifact)}


def _modeling(project: Project, ctx: Context) -> tuple[dict, dict]:
    p = project.purpose
    decision = select_datasets(ctx.matches, ctx.cands, p.thresholds.theta_a_cov)
    schemas = {ds.schema.dataset_id: ds.schema for ds in project.datasets}
    ctx.model, ctx.decision = build_etg_model(
        ctx.cands,
        ctx.matches,
        schemas,
        cqs=p.cqs,
        decision=decision,
        relations=p.relations,
        threshold=p.thresholds.etr_match,
        allow_new_etypes=p.allow_new_etypes,
        display_names=etype_display_names(project.text),
    )
    inputs = {"cq_etypes": ctx.cands.all_etypes(), "cq_properties": ctx.cands.all_properties(), "model": ctx.model}
    d = ctx.decision
    decision_doc = {
        "kept_datasets": list(d.kept_datasets),
        "dropped_datasets": [{"dataset": ds, "reason": why} for ds, why in d.dropped_datasets],
        "extension_etypes": sorted(d.extension_etypes.members),
        "extension_properties": sorted(d.extension_properties.members),
    }
    return inputs, {"etg-model.json": save_etg_json(ctx.model), "decision.json": dumps(decision_doc)}


def _specs_for(project: Project, ctx: Context) -> list[MappingSpec]:
    """Mapping specs of kept datasets, in purpose declaration order, etypes renamed after alignment."""
    order = [ds.schema.dataset_id for ds in project.datasets]
    kept = set(ctx.decision.kept_datasets) if ctx.decision else set(order)
    specs = []
    for spec in project.mappings:
        if spec.dataset_id not in order:
            raise MappingError(f"mapping names unknown dataset {spec.dataset_id!r}")
        if spec.dataset_id in kept:
            specs.append(spec.renamed(ctx.renamed))
    return sorted(specs, key=lambda s: order.index(s.dataset_id))


def _clean_all(project: Project, ctx: Context) -> None:
    ctx.cleaned, ctx.cleaning = [], []
    for spec in _specs_for(project, ctx):
        ds = project.dataset(spec.dataset_id)
        mapping = {attr: (spec.target_etype, prop) for attr, prop in spec.attribute_map.items()}
        cleaned, report = clean_dataset(ds, ctx.final, mapping, keep=spec.used_attributes())
        ctx.cleaned.append((cleaned, spec))
        ctx.cleaning.append(report)


def _alignment(project: Project, ctx: Context) -> tuple[dict, dict]:
    p = project.purpose
    ontologies = project.ontologies
    ranking = rank_ontologies(ctx.model, ontologies, threshold=p.thresholds.etr_match, weights=p.etr_weights)
    predictions = {o.name: etype_recognition(ctx.model, o, p.etr_weights) for o in ontologies}
    mapping = attribute_mapping(ctx.matches, ctx.decision)
    orphans: list = []
    try:
        ctx.final, provenance = generate_final_etg(
            ctx.model,
            ranking,
            predictions,
            mapping,
            {o.name: o for o in ontologies},
            threshold=p.thresholds.etr_match,
            keep_model_terminology=p.keep_model_terminology,
            name="etg-final",
        )
        ctx.renamed = dict(provenance.renamed)
        _clean_all(project, ctx)
    except ComplianceError as exc:
        # reported through the gate, which then fails
        orphans = list(exc.orphans)
        ctx.final = ctx.model
        provenance = AlignmentProvenance({}, {}, warnings=(str(exc),))
    selected = ontologies
    if p.spr_scope == "selected" and ranking:
        selected = [o for o in ontologies if o.name == ranking[0].ontology_id]
    inputs = {"etg": ctx.final, "ontologies": selected, "orphans": orphans}
    ranking_doc = [
        {
            "ontology": s.ontology_id,
            "etype_overlap": s.etype_overlap,
            "aggregate": round(s.aggregate, 6),
            "sharability": {k: round(v, 6) for k, v in sorted(s.sharability.items())},
            "matches": {k: {"etype": e, "score": round(v, 6)} for k, (e, v) in sorted(s.matches.items())},
        }
        for s in ranking
    ]
    hint = []
    if provenance.adopted_fraction.get("Common", 0) or provenance.adopted_fraction.get("Core", 0):
        hint.append("adopted ontology etypes may make further datasets reusable; consider revisiting inception")
    artifacts = {
        "etg-final.json": save_etg_json(ctx.final),
        "provenance.json": dumps(provenance.to_dict()),
        "ranking.json": dumps({"ranking": ranking_doc, "hints": hint}),
        "cleaning.json": dumps(
            [
                {
                    "dataset": r.dataset_id,
                    "target_etype": spec.target_etype,
                    "rejections": dict(r.rejections),
                    "total_rejections": r.total_rejections,
                    "dropped_attributes": list(r.dropped_attributes),
                }
                for r, (_, spec) in zip(ctx.cleaning, ctx.cleaned or [])
            ]
        ),
    }
    return inputs, artifacts


def _integration(project: Project, ctx: Context, policy: str, base_uri: str) -> tuple[dict, dict]:
    if ctx.cleaned is None:
        _clean_all(project, ctx)
    ctx.eg, quality = integrate(ctx.final, ctx.cleaned, policy, base_uri=base_uri)
    cqs = [cq.renamed(ctx.renamed) for cq in project.purpose.cqs]
    results = [execute_cq(ctx.eg, cq) for cq in cqs]
    cq_doc = [
        {"cq": r.cq_id, "answerable": r.answerable, "row_count": r.row_count, "reasons": list(r.reasons)}
        for r in results
    ]
    inputs = {"eg": ctx.eg, "cqs": cqs}
    artifacts = {
        "eg.nt": serialize_eg_ntriples(ctx.eg, base_uri),
        "quality.json": dumps(quality.to_dict()),
        "cq_results.json": dumps(cq_doc),
        "conflicts.json": dumps([[str(x) for x in c] for c in ctx.eg.conflicts]),
    }
    return inputs, artifacts


# --- driver -------------------------------------------------------------


def _load_state(path: Path) -> PipelineState:
    if path.exists():
        return PipelineState.from_dict(json.loads(path.read_text(encoding="utf-8")))
    return PipelineState()


def _resume_from_disk(out: Path, start: Phase, ctx: Context) -> None:
    """Prefer ETG artifacts on disk (possibly edited by hand) when resuming later phases."""
    model_path = out / "model" / "etg-model.json"
    final_path = out / "align" / "etg-final.json"
    if start is Phase.C_ALIGNMENT and model_path.exists():
        ctx.model = load_etg_json(model_path.read_text(encoding="utf-8"))
        log.info("resuming with %s", model_path)
    if start is Phase.D_INTEGRATION:
        if not final_path.exists():
            raise ItelosError(f"cannot resume integration: {final_path} does not exist")
        ctx.final = load_etg_json(final_path.read_text(encoding="utf-8"))
        prov_path = out / "align" / "provenance.json"
        if prov_path.exists():
            ctx.renamed = dict(json.loads(prov_path.read_text(encoding="utf-8")).get("renamed", {}))
        log.info("resuming with %s", final_path)


def run_pipeline(
    purpose_path: str | Path,
    workdir: str | Path,
    *,
    base_uri: str = DEFAULT_BASE_URI,
    policy: str = "keep-first",
    force_phase: "Phase | str | None" = None,
    stop_after: "Phase | str | None" = None,
    thresholds: Mapping[str, float] | None = None,
) -> PipelineResult:
    """Run the phases in order, stopping at the first failing gate.

    ``force_phase`` starts at that phase without re-checking earlier gates;
    earlier phases are recomputed silently, except that ETG artifacts already
    in the workdir are used as they are. ``stop_after`` ends the run once that
    phase's gate passes.
    """
    out = Path(workdir) / "out"
    state_path = out / "state.json"
    state = PipelineState()
    try:
        start = Phase.parse(force_phase) if force_phase else PHASES[0]
        stop = Phase.parse(stop_after) if stop_after else PHASES[-1]
        if PHASES.index(stop) < PHASES.index(start):
            raise ItelosError(f"cannot stop after {stop.value} when starting at {start.value}")
        if force_phase:
            state = _load_state(state_path)
        project = Project(purpose_path, thresholds)
        ctx = Context()
        bodies = {
            Phase.A_INCEPTION: lambda: _inception(project, ctx),
            Phase.B_MODELING: lambda: _modeling(project, ctx),
            Phase.C_ALIGNMENT: lambda: _alignment(project, ctx),
            Phase.D_INTEGRATION: lambda: _integration(project, ctx, policy, base_uri),
        }
        # silent replay of the phases before the starting one; when resuming
        # integration the final ETG comes from disk instead
        for phase in PHASES[: PHASES.index(start)]:
            if phase is not Phase.C_ALIGNMENT:
                bodies[phase]()
        _resume_from_disk(out, start, ctx)

        for phase in PHASES[PHASES.index(start) : PHASES.index(stop) + 1]:
            log.info("phase %s", phase.value)
            inputs, artifacts = bodies[phase]()
            report = run_gate(phase, inputs, project.purpose.thresholds)
            phase_dir = out / PHASE_DIRS[phase]
            for name, text in artifacts.items():
                write_atomic(phase_dir / name, text)
                state.artifacts[name] = str((phase_dir / name).relative_to(out))
            write_atomic(phase_dir / "report.json", dumps(report.to_dict()))
            state.gate_history.append(report.to_dict())
            if not report.passed:
                write_atomic(state_path, dumps(state.to_dict()))
                msg = f"gate {phase.value} failed; backtrack to {report.backtrack_to}"
                log.warning(msg)
                return PipelineResult(EXIT_GATE, state, msg, report.backtrack_to)
            state.cursor = phase.value
        write_atomic(state_path, dumps(state.to_dict()))
        return PipelineResult(EXIT_OK, state, f"completed through {stop.value}")
    except (ItelosError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return PipelineResult(EXIT_ERROR, state, f"{type(exc).__name__}: {exc}")


def gate_report_from_workdir(
    purpose_path: str | Path, workdir: str | Path, phase: "Phase | str", *, base_uri: str = DEFAULT_BASE_URI
) -> GateReport:
    """Re-evaluate one gate from the artifacts already in the workdir."""
    phase = Phase.parse(phase)
    out = Path(workdir) / "out"
    project = Project(purpose_path)
    p = project.purpose
    ctx = Context()
    inputs, _ = _inception(project, ctx)
    if phase is Phase.B_MODELING:
        model = load_etg_json((out / "model" / "etg-model.json").read_text(encoding="utf-8"))
        inputs = {"cq_etypes": ctx.cands.all_etypes(), "cq_properties": ctx.cands.all_properties(), "model": model}
    elif phase is Phase.C_ALIGNMENT:
        _modeling(project, ctx)
        final = load_etg_json((out / "align" / "etg-final.json").read_text(encoding="utf-8"))
        prov = json.loads((out / "align" / "provenance.json").read_text(encoding="utf-8"))
        orphans = check_compliance(final, attribute_mapping(ctx.matches, ctx.decision), prov.get("renamed", {}))
        selected = project.ontologies
        if p.spr_scope == "selected":
            ranking = rank_ontologies(ctx.model, selected, threshold=p.thresholds.etr_match, weights=p.etr_weights)
            selected = [o for o in selected if ranking and o.name == ranking[0].ontology_id]
        inputs = {"etg": final, "ontologies": selected, "orphans": orphans}
    elif phase is Phase.D_INTEGRATION:
        final = load_etg_json((out / "align" / "etg-final.json").read_text(encoding="utf-8"))
        eg = parse_eg_ntriples((out / "integrate" / "eg.nt").read_text(encoding="utf-8"), final, base_uri)
        prov = json.loads((out / "align" / "provenance.json").read_text(encoding="utf-8"))
        inputs = {"eg": eg, "cqs": [cq.renamed(prov.get("renamed", {})) for cq in p.cqs]}
    return run_gate(phase, inputs, p.thresholds)
