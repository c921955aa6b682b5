from __future__ import annotations

import pytest

from itelos.errors import ModelingError
from itelos.inception import CandidateSet, collect_candidates, match_schema
from itelos.ingest import etype_display_names, load_dataset_csv, load_dataset_file, parse_purpose
from itelos.model import Category, CompetencyQuery, PropertyKind, Relation, validate_etg
from itelos.modeling import attribute_mapping, build_etg_model, select_datasets


@pytest.fixture
def covid(covid_dir):
    text = (covid_dir / "purpose.json").read_text()
    purpose = parse_purpose(text)
    cands = collect_candidates(purpose.cqs)
    datasets = [load_dataset_file(covid_dir / ref) for ref in purpose.dataset_refs]
    matches = [match_schema(d.schema, cands) for d in datasets]
    schemas = {d.schema.dataset_id: d.schema for d in datasets}
    return purpose, text, cands, matches, schemas


def build(covid, **kw):
    purpose, text, cands, matches, schemas = covid
    decision = select_datasets(matches, cands)
    args = dict(cqs=purpose.cqs, decision=decision, relations=purpose.relations,
                allow_new_etypes=True, display_names=etype_display_names(text))
    args.update(kw)
    return build_etg_model(cands, matches, schemas, **args)


def test_dataset_selection(covid):
    _, _, cands, matches, _ = covid
    d = select_datasets(matches, cands)
    assert d.kept_datasets == ("ecdc_covid", "trentino_schools", "school_closures", "italy_projections", "trentino_rsa")
    assert d.dropped_datasets == (("weather", "no overlap with purpose"),)


def test_redundant_low_coverage_dataset_is_dropped(covid):
    _, _, cands, _, _ = covid
    full = load_dataset_csv("restriction_type,closure_start,closure_end\nx,2020-01-01,2020-01-02\n",
                            default_category=Category.CONTEXTUAL, dataset_id="full")
    part = load_dataset_csv("closure_end\n2020-01-02\n", default_category=Category.CONTEXTUAL, dataset_id="part")
    matches = [match_schema(part.schema, cands), match_schema(full.schema, cands)]
    d = select_datasets(matches, cands)
    assert d.kept_datasets == ("full",)
    assert d.dropped_datasets[0][0] == "part"


def test_model_structure(covid):
    etg, decision = build(covid)
    assert validate_etg(etg) == []
    assert etg.ids == ("case_information", "case_projections", "covid_status", "location", "restriction",
                       "rsa_cases", "school")
    assert etg.etype("rsa_cases").name == "RSA_cases"
    cs = etg.etype("covid_status")
    assert cs.property("total_number_of_cases").datatype == "integer"
    assert cs.property("date").datatype == "date"
    assert cs.property("has_location").kind is PropertyKind.OBJECT
    assert etg.etype("case_projections").property("mean_of_est.infections").datatype == "decimal"
    assert etg.etype("restriction").property("has_school").range_etype == "school"
    # uncovered property defaults to string
    assert etg.etype("rsa_cases").property("number_of_home_care_cases").datatype == "string"
    assert decision.extension_etypes.members == {"school"}
    assert decision.extension_properties.members == {"countries_and_territories", "school_name"}
    assert etg.etype("location").property("countries_and_territories").category is Category.CONTEXTUAL


def test_new_etypes_need_the_purpose_flag(covid):
    purpose = covid[0]
    with pytest.raises(ModelingError, match="school"):
        build(covid, allow_new_etypes=False)
    etg, decision = build(covid, allow_new_etypes=False, relations=())
    assert etg.etype("school") is None
    assert ("school_closures", "school_name") not in decision.extension_mapping
    assert purpose.allow_new_etypes


def test_attribute_mapping_covers_matches_and_extensions(covid):
    _, _, cands, matches, _ = covid
    _, decision = build(covid)
    mapping = attribute_mapping(matches, decision)
    assert mapping[("ecdc_covid", "cases")] == ("covid_status", "total_number_of_cases")
    assert mapping[("ecdc_covid", "countries_and_territories")] == ("location", "countries_and_territories")
    assert mapping[("school_closures", "school_name")] == ("school", "school_name")
    assert not any(ds == "weather" for ds, _ in mapping)


def test_empty_candidates_rejected():
    with pytest.raises(ModelingError):
        build_etg_model(CandidateSet(), [], {})


def test_relation_to_unknown_etype_rejected():
    cands = collect_candidates([CompetencyQuery(1, "", "", Category.CORE, ("a",), (("a", "x"),))])
    with pytest.raises(ModelingError, match="not in the model"):
        build_etg_model(cands, [], {}, relations=[Relation("a", "b", "has_b")])


def test_unhinted_attribute_extends_closest_etype():
    cands = collect_candidates([CompetencyQuery(1, "", "", Category.CORE, ("station",), (("station", "name"),))])
    ds = load_dataset_csv("name,station_height\nx,3\n", default_category=Category.COMMON, dataset_id="d")
    m = match_schema(ds.schema, cands)
    etg, decision = build_etg_model(cands, [m], {"d": ds.schema})
    p = etg.etype("station").property("station_height")
    assert p.datatype == "integer" and p.category is Category.CONTEXTUAL
    assert decision.extension_mapping == {("d", "station_height"): ("station", "station_height")}
