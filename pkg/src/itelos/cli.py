"""Command-line entry point: ``itelos run|inception|model|align|integrate|eval|validate``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .alignment import clean_dataset, etype_recognition, generate_final_etg, rank_ontologies
from .errors import ItelosError
from .ingest import (
    load_dataset_file,
    load_etg_json,
    load_ontology_file,
    parse_eg_ntriples,
    parse_purpose,
    save_etg_json,
    serialize_eg_ntriples,
)
from .integration import POLICIES, integrate, load_mappings_json
from .metrics import Phase, run_gate
from .model import DEFAULT_BASE_URI, GateThresholds, validate_eg, validate_etg
from .pipeline import (
    EXIT_ERROR,
    EXIT_GATE,
    EXIT_OK,
    PHASE_DIRS,
    PHASES,
    dumps,
    gate_report_from_workdir,
    run_pipeline,
    write_atomic,
)

log = logging.getLogger("itelos")

PHASE_COMMANDS = {
    "inception": Phase.A_INCEPTION,
    "model": Phase.B_MODELING,
    "align": Phase.C_ALIGNMENT,
    "integrate": Phase.D_INTEGRATION,
}


def _threshold(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or name not in GateThresholds.__dataclass_fields__:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE with NAME a gate threshold, got {text!r}")
    try:
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold value {value!r} is not a number") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--purpose", help="purpose JSON file")
    common.add_argument("--workdir", default=".", help="directory that receives out/ (default: .)")
    common.add_argument("--base-uri", default=DEFAULT_BASE_URI, help="prefix for entity and schema URIs")
    common.add_argument("--force-phase", choices=["a", "b", "c", "d"], help="resume at this phase")
    common.add_argument("--policy", choices=POLICIES, default="keep-first", help="conflict policy when merging")
    common.add_argument(
        "--threshold", action="append", type=_threshold, default=[], metavar="NAME=VALUE",
        help="override a gate threshold from the purpose file (repeatable)",
    )

    parser = argparse.ArgumentParser(prog="itelos", description="Purpose-driven knowledge graph construction.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run all four phases with their gates")
    sub.add_parser("inception", parents=[common], help="phase A: candidates and dataset matching")
    sub.add_parser("model", parents=[common], help="phase B: dataset selection and ETG model")

    align = sub.add_parser("align", parents=[common], help="phase C: ontology alignment and cleaning")
    align.add_argument("--model", help="ETG model JSON (standalone mode)")
    align.add_argument("--ontologies", help="directory of reference ETG JSON files (standalone mode)")
    align.add_argument("--out", help="final ETG output path (standalone mode)")
    align.add_argument("--keep-model-terminology", action="store_true")

    integ = sub.add_parser("integrate", parents=[common], help="phase D: entity graph construction")
    integ.add_argument("--etg", help="final ETG JSON (standalone mode)")
    integ.add_argument("--mappings", help="mappings JSON (standalone mode)")
    integ.add_argument("--data-dir", help="directory holding <dataset>.csv files (default: next to --mappings)")
    integ.add_argument("--out", help="N-Triples output path (standalone mode)")

    ev = sub.add_parser("eval", parents=[common], help="re-run one gate on workdir artifacts")
    ev.add_argument("--phase", required=True, choices=["a", "b", "c", "d"])

    val = sub.add_parser("validate", parents=[common], help="check a purpose, ETG or EG file")
    val.add_argument("--etg", help="ETG JSON to validate (also the schema for --eg)")
    val.add_argument("--eg", help="N-Triples EG to validate against --etg")
    return parser


def _emit(data) -> None:
    sys.stdout.write(dumps(data))


def _need(args, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise ItelosError(f"{args.command} needs {', '.join(missing)}")


def _pipeline(args, start: Phase | None, stop: Phase | None) -> int:
    _need(args, "purpose")
    if start is not None and start is not PHASES[0]:
        previous = PHASES[PHASES.index(start) - 1]
        report = Path(args.workdir) / "out" / PHASE_DIRS[previous] / "report.json"
        if not report.exists() or json.loads(report.read_text(encoding="utf-8"))["overall"] != "pass":
            raise ItelosError(f"phase {previous.value} has not passed in {args.workdir}; run it first")
    result = run_pipeline(
        args.purpose,
        args.workdir,
        base_uri=args.base_uri,
        policy=args.policy,
        force_phase=start,
        stop_after=stop,
        thresholds=dict(args.threshold),
    )
    _emit(result.to_dict())
    if result.exit_code == EXIT_ERROR:
        print(f"itelos: {result.message}", file=sys.stderr)
    return result.exit_code


def _align_standalone(args) -> int:
    _need(args, "model", "ontologies", "out")
    model = load_etg_json(Path(args.model).read_text(encoding="utf-8"))
    ontologies = [load_ontology_file(p) for p in sorted(Path(args.ontologies).glob("*.json"))]
    thresholds = GateThresholds(**dict(args.threshold))
    keep = args.keep_model_terminology
    if args.purpose:
        purpose = parse_purpose(Path(args.purpose).read_text(encoding="utf-8"))
        thresholds = GateThresholds(**{**purpose.thresholds.__dict__, **dict(args.threshold)})
        keep = keep or purpose.keep_model_terminology
    ranking = rank_ontologies(model, ontologies, threshold=thresholds.etr_match)
    predictions = {o.name: etype_recognition(model, o) for o in ontologies}
    final, provenance = generate_final_etg(
        model, ranking, predictions, {}, {o.name: o for o in ontologies},
        threshold=thresholds.etr_match, keep_model_terminology=keep, name=model.name,
    )
    out = Path(args.out)
    write_atomic(out, save_etg_json(final))
    write_atomic(out.with_name(out.stem + ".provenance.json"), dumps(provenance.to_dict()))
    report = run_gate(Phase.C_ALIGNMENT, {"etg": final, "ontologies": ontologies, "orphans": []}, thresholds)
    _emit(report.to_dict())
    return EXIT_OK if report.passed else EXIT_GATE


def _renames_beside(etg_path: Path) -> dict[str, str]:
    """Etype renames from the provenance written next to a final ETG, if any."""
    for candidate in (etg_path.with_name(etg_path.stem + ".provenance.json"), etg_path.with_name("provenance.json")):
        if candidate.exists():
            return dict(json.loads(candidate.read_text(encoding="utf-8")).get("renamed", {}))
    return {}


def _integrate_standalone(args) -> int:
    _need(args, "etg", "mappings", "out")
    etg = load_etg_json(Path(args.etg).read_text(encoding="utf-8"))
    renames = _renames_beside(Path(args.etg))
    mappings_path = Path(args.mappings)
    specs = [s.renamed(renames) for s in load_mappings_json(mappings_path.read_text(encoding="utf-8"))]
    data_dir = Path(args.data_dir) if args.data_dir else mappings_path.parent
    loaded = {}
    cleaned = []
    for spec in specs:
        if spec.dataset_id not in loaded:
            loaded[spec.dataset_id] = load_dataset_file(data_dir / f"{spec.dataset_id}.csv")
        mapping = {a: (spec.target_etype, p) for a, p in spec.attribute_map.items()}
        ds, _ = clean_dataset(loaded[spec.dataset_id], etg, mapping, keep=spec.used_attributes())
        cleaned.append((ds, spec))
    eg, quality = integrate(etg, cleaned, args.policy, base_uri=args.base_uri)
    out = Path(args.out)
    write_atomic(out, serialize_eg_ntriples(eg, args.base_uri))
    write_atomic(out.with_name(out.stem + ".quality.json"), dumps(quality.to_dict()))
    if args.purpose:
        purpose = parse_purpose(Path(args.purpose).read_text(encoding="utf-8"))
        cqs = [cq.renamed(renames) for cq in purpose.cqs]
        report = run_gate(Phase.D_INTEGRATION, {"eg": eg, "cqs": cqs}, purpose.thresholds)
        _emit(report.to_dict())
        return EXIT_OK if report.passed else EXIT_GATE
    _emit(quality.to_dict())
    return EXIT_OK


def _validate(args) -> int:
    problems: list[str] = []
    checked = []
    if args.purpose:
        parse_purpose(Path(args.purpose).read_text(encoding="utf-8"))
        checked.append(args.purpose)
    if args.eg:
        _need(args, "etg")
    if args.etg:
        # load_etg_json already rejects invalid ETGs; validate again for the listing
        etg = load_etg_json(Path(args.etg).read_text(encoding="utf-8"))
        problems += [str(v) for v in validate_etg(etg)]
        checked.append(args.etg)
        if args.eg:
            eg = parse_eg_ntriples(Path(args.eg).read_text(encoding="utf-8"), etg, args.base_uri)
            problems += [str(v) for v in validate_eg(eg)]
            checked.append(args.eg)
    if not checked:
        raise ItelosError("validate needs --purpose, --etg or --eg")
    _emit({"checked": checked, "valid": not problems, "violations": problems})
    return EXIT_OK if not problems else EXIT_ERROR


def _configure_logging() -> None:
    level = os.environ.get("ITELOS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            start = Phase.parse(args.force_phase) if args.force_phase else None
            return _pipeline(args, start, None)
        if args.command == "align" and args.model:
            return _align_standalone(args)
        if args.command == "integrate" and args.etg:
            return _integrate_standalone(args)
        if args.command in PHASE_COMMANDS:
            phase = PHASE_COMMANDS[args.command]
            return _pipeline(args, phase, phase)
        if args.command == "eval":
            _need(args, "purpose")
            report = gate_report_from_workdir(args.purpose, args.workdir, args.phase, base_uri=args.base_uri)
            _emit(report.to_dict())
            return EXIT_OK if report.passed else EXIT_GATE
        return _validate(args)
    except (ItelosError, OSError, ValueError) as exc:
        print(f"itelos: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
