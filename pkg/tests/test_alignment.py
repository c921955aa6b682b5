from __future__ import annotations

from functools import lru_cache

import pytest
from hypothesis import given
from hypothesis import strategies as st

from itelos.alignment import (
    clean_cell,
    clean_dataset,
    etype_recognition,
    generate_final_etg,
    property_jaccard,
    rank_ontologies,
    recognition_score,
)
from itelos.errors import ComplianceError, MappingError
from itelos.ingest import load_dataset_csv, load_ontology_file
from itelos.model import ETG, Category, EType, PropertyDef, validate_etg


def _edit_sim(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if min(i, j) == 0:
            return max(i, j)
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return 1 - d(len(a), len(b)) / max(len(a), len(b))


def et(id, *props, category=Category.CORE, links=()):
    ps = tuple(PropertyDef.data(p, category=category) for p in props)
    ps += tuple(PropertyDef.link(n, r, category=category) for n, r in links)
    return EType(id, id.capitalize(), category, ps)


def covid_model_excerpt() -> ETG:
    return ETG(
        "m",
        (
            et("location", "location_type", "countries_and_territories"),
            et("case_information", "date"),
            et("rsa_cases", "date", "number_of_rsa_case", category=Category.CONTEXTUAL),
        ),
    )


@pytest.fixture
def codo(covid_dir):
    return load_ontology_file(covid_dir / "ontologies" / "codo.json")


def test_fixture_recognition_scores(codo):
    pv = etype_recognition(covid_model_excerpt(), codo)
    # no token overlap, so name similarity is the edit-distance ratio; both property sets coincide
    assert pv["location"][0] == ("place", 0.5 * _edit_sim("location", "place") + 0.5 * 1.0)
    assert pv["location"][0][1] == 0.5625
    assert pv["case_information"][0] == ("statistics", 0.5 * _edit_sim("case_information", "statistics") + 0.5)
    assert [o for o, _ in pv["rsa_cases"]] == ["statistics", "place", "patient"]


def test_prediction_vectors_are_sorted_and_total(codo):
    pv = etype_recognition(covid_model_excerpt(), codo)
    for ranked in pv.values():
        assert {o for o, _ in ranked} == set(codo.ids)
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)


def test_recognition_extremes():
    a = et("street", "name", "length")
    assert recognition_score(a, a) == 1.0
    assert recognition_score(a, et("zz", "qq")) == 0.0
    with pytest.raises(ValueError):
        etype_recognition(ETG("x", (a,)), ETG("y", (a,)), (0.7, 0.7))


def test_property_jaccard_conventions():
    assert property_jaccard([], []) == 1.0
    assert property_jaccard(["a"], []) == 0.0


names = st.frozensets(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=5)


@given(names, names)
def test_property_jaccard_symmetric(a, b):
    assert property_jaccard(a, b) == property_jaccard(b, a)


@given(names, names, st.sampled_from(["a", "b", "c", "d", "e"]))
def test_adding_a_shared_property_never_lowers_the_score(m, o, extra):
    model = EType("thing", "T", Category.CORE, tuple(PropertyDef.data(p) for p in sorted(m | {extra})))
    before = EType("item", "I", Category.CORE, tuple(PropertyDef.data(p) for p in sorted(o)))
    after = EType("item", "I", Category.CORE, tuple(PropertyDef.data(p) for p in sorted(o | {extra})))
    assert recognition_score(model, after) >= recognition_score(model, before)


def test_ranking(codo, covid_dir):
    schemaorg = load_ontology_file(covid_dir / "ontologies" / "schemaorg.json")
    ranking = rank_ontologies(covid_model_excerpt(), [schemaorg, codo])
    assert [s.ontology_id for s in ranking] == ["codo", "schemaorg"]
    assert ranking[0].etype_overlap == 2
    assert ranking[0].matches["location"] == ("place", 0.5625)
    assert ranking[0].sharability == {"place": 1.0, "statistics": 1.0}
    assert ranking[1].etype_overlap == 0
    assert rank_ontologies(covid_model_excerpt(), []) == []


def test_ranking_of_identical_ontology():
    model = covid_model_excerpt()
    (score,) = rank_ontologies(model, [model])
    assert score.etype_overlap == len(model.etypes)
    assert score.aggregate == 1.0


def test_keep_terminology_records_matches(codo):
    model = covid_model_excerpt()
    ranking = rank_ontologies(model, [codo])
    final, prov = generate_final_etg(
        model, ranking, {"codo": etype_recognition(model, codo)}, {}, {"codo": codo}, keep_model_terminology=True
    )
    assert final == model
    assert prov.matches == {"case_information": ("codo", "statistics", 0.59375), "location": ("codo", "place", 0.5625)}
    assert set(prov.etypes.values()) == {prov.etypes["location"]} and str(prov.etypes["location"]) == "model"


def test_empty_ranking_keeps_model():
    model = covid_model_excerpt()
    final, prov = generate_final_etg(model, [], {}, {}, {})
    assert final == model
    assert all(str(o) == "model" for o in prov.etypes.values())
    assert set(prov.properties) == {(e.id, p.name) for e in model.etypes for p in e.properties}


def adopt(model, onto, mapping=None):
    ranking = rank_ontologies(model, [onto])
    return generate_final_etg(model, ranking, {onto.name: etype_recognition(model, onto)}, mapping or {}, {onto.name: onto})


def test_common_etype_adopts_property_union():
    model = ETG("m", (et("location", "name", "kind", category=Category.COMMON),))
    ref = ETG("ref", (EType("location", "Location", Category.COMMON, (
        PropertyDef.data("name"), PropertyDef.data("kind"), PropertyDef.data("latitude", "decimal"))),))
    final, prov = adopt(model, ref, {("d", "kind"): ("location", "kind")})
    assert final.etype("location").property_names == {"name", "kind", "latitude"}
    assert final.etype("location").property("latitude").category is Category.COMMON
    assert str(prov.properties[("location", "latitude")]) == "ontology(ref, location)"
    assert str(prov.properties[("location", "name")]) == "model"
    assert prov.adopted_fraction["Common"] == 1.0


def test_adoption_renames_and_rewires_ranges():
    model = ETG("m", (
        et("site", "address", "kind", category=Category.COMMON),
        et("visit", "when", category=Category.CONTEXTUAL, links=[("has_site", "site")]),
    ))
    ref = ETG("ref", (EType("place", "Place", Category.COMMON, (PropertyDef.data("address"), PropertyDef.data("kind", "integer"))),))
    final, prov = adopt(model, ref, {("d", "kind"): ("site", "kind")})
    assert final.ids == ("place", "visit")  # model order, adopted id in place
    assert final.etype("place").name == "Place"
    assert final.etype("place").property("kind").datatype == "string"  # model wins
    assert final.etype("visit").property("has_site").range_etype == "place"
    assert prov.renamed == {"site": "place"}
    assert any("kind" in w for w in prov.warnings)
    assert validate_etg(final) == []


def test_contextual_etypes_are_not_adopted():
    model = ETG("m", (et("place", "address", category=Category.CONTEXTUAL),))
    ref = ETG("ref", (EType("place", "Place", Category.COMMON, (PropertyDef.data("address"), PropertyDef.data("geo"))),))
    final, _ = adopt(model, ref)
    assert final == model


def test_compliance_failure_lists_orphans():
    model = covid_model_excerpt()
    with pytest.raises(ComplianceError) as err:
        generate_final_etg(model, [], {}, {("ds", "foo"): ("location", "foo")}, {})
    assert err.value.orphans == [("ds", "foo", "location", "foo")]


# --- cleaning ---


def test_clean_cell():
    assert clean_cell("31/12/2020", "date") == "2020-12-31"
    assert clean_cell(" 12 ", "integer") == "12"
    assert clean_cell("abc", "integer") is None
    assert clean_cell("TRUE", "boolean") == "true"
    assert clean_cell("2.50", "decimal") == "2.50"
    assert clean_cell("  x ", "string") == "x"


def test_clean_dataset_blanks_and_counts():
    etg = ETG("e", (EType("m", "M", Category.CORE, (PropertyDef.data("when", "date"), PropertyDef.data("n", "integer"))),))
    ds = load_dataset_csv("id,when,n,extra\na,31/12/2020,abc,z\nb,,7,z\n", default_category=Category.CORE)
    cleaned, report = clean_dataset(ds, etg, {"when": ("m", "when"), "n": ("m", "n")}, keep=["id"])
    assert cleaned.rows == ({"when": "2020-12-31", "n": "", "id": "a"}, {"when": "", "n": "7", "id": "b"})
    assert report.rejections == {"n": 1, "when": 0}
    assert report.dropped_attributes == ("extra",)
    assert [a.name for a in cleaned.schema.attributes] == ["id", "when", "n"]
    with pytest.raises(MappingError, match="absent property"):
        clean_dataset(ds, etg, {"n": ("m", "count")})
    with pytest.raises(MappingError, match="unknown attribute"):
        clean_dataset(ds, etg, {"nope": ("m", "n")})
