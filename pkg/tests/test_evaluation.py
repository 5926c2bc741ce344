from __future__ import annotations

import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from consult.agents import DiagnosticReport
from consult.backend import FixtureEntry, ScriptedBackend
from consult.evaluation import (
    ASPECTS,
    EvaluatorParseFailure,
    FiveScores,
    IcdIndexError,
    MatchResult,
    ScoreFormatError,
    aggregate_scores,
    corpus_metrics,
    default_icd_index,
    extract_entities,
    f1,
    icd_index_from_dict,
    normalize_to_icd,
    parse_scores,
    score_histogram,
    score_report,
    set_overlap_metrics,
    turn_histogram,
)
from consult.synthetic import synthetic_cases

from oracles import brute_mean_stderr, brute_metrics, random_corpus

INDEX = icd_index_from_dict({"codes": [
    {"code": "K35", "canonical": "acute appendicitis", "synonyms": ["appendicitis, acute"]},
    {"code": "E11", "canonical": "type 2 diabetes mellitus", "synonyms": ["t2dm"]},
]})
GOOD_REPLY = "Symptoms: 76\nMedical Examinations: 63\nDiagnostic Results: 49\n" \
             "Diagnostic Rationales: 56\nTreatment Plan: 45"


def scripted(*replies):
    return ScriptedBackend([FixtureEntry(None, r) for r in replies])


def five(*values):
    return FiveScores(*values)


# ----------------------------------------------------------------- scoring

def test_score_report_parses(case):
    scores = score_report(DiagnosticReport(), case, scripted(GOOD_REPLY))
    assert scores == five(76, 63, 49, 56, 45)


def test_score_report_out_of_range_thrice(case):
    bad = GOOD_REPLY.replace("76", "150")
    with pytest.raises(EvaluatorParseFailure):
        score_report(DiagnosticReport(), case, scripted(bad, bad, bad))


def test_score_report_recovers_on_retry(case):
    backend = scripted("Looks fine overall.", GOOD_REPLY)
    assert score_report(DiagnosticReport(), case, backend).symptoms == 76


def test_evaluator_prompt_carries_ground_truth_and_report(case):
    seen = []

    class Spy(ScriptedBackend):
        def _complete(self, request):
            seen.append(request.last_user_message())
            return super()._complete(request)

    report = DiagnosticReport(diagnostic_results="Something specific")
    score_report(report, case, Spy([FixtureEntry(None, GOOD_REPLY)]))
    assert case.ground_truth.diagnosis_text in seen[0] and "Something specific" in seen[0]


@pytest.mark.parametrize("text", [
    GOOD_REPLY.rsplit("\n", 1)[0],
    GOOD_REPLY + "\nSymptoms: 1",
    GOOD_REPLY.replace("Symptoms", "Signs"),
    GOOD_REPLY.replace("76", "7.5"),
    GOOD_REPLY.replace("Treatment Plan: 45", "Symptoms: 45"),
])
def test_parse_scores_rejects(text):
    with pytest.raises(ScoreFormatError):
        parse_scores(text)


def test_parse_scores_case_insensitive():
    assert parse_scores(GOOD_REPLY.upper()).treatment_plan == 45


@given(replies=st.lists(st.text(max_size=120), min_size=3, max_size=3))
def test_score_report_never_out_of_range(replies):
    try:
        scores = score_report(DiagnosticReport(), synthetic_cases(1)[0], scripted(*replies))
    except EvaluatorParseFailure:
        return
    assert all(0 <= v <= 100 for v in scores.as_dict().values())


def test_five_scores_range():
    with pytest.raises(ValueError):
        five(101, 0, 0, 0, 0)


# ------------------------------------------------------------- aggregation

def test_aggregate_single_and_pair():
    single = aggregate_scores([five(70, 70, 70, 70, 70)])["symptoms"]
    assert (single.mean, single.stderr, single.n) == (70, 0, 1)
    pair = aggregate_scores([five(60, 50, 50, 50, 50), five(80, 50, 50, 50, 50)])
    assert pair["symptoms"].mean == 70
    assert pair["symptoms"].stderr == pytest.approx(10.0, rel=1e-12)
    assert pair["symptoms"].ci95_low == pytest.approx(70 - 19.6)
    assert pair["medical_examinations"].stderr == 0


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate_scores([])


@given(rows=st.lists(st.tuples(*[st.integers(0, 100)] * 5), min_size=1, max_size=30))
def test_aggregate_matches_oracle(rows):
    agg = aggregate_scores([five(*r) for r in rows])
    for i, aspect in enumerate(ASPECTS):
        mean, stderr = brute_mean_stderr([r[i] for r in rows])
        assert math.isclose(agg[aspect].mean, mean, rel_tol=1e-9, abs_tol=1e-12)
        assert math.isclose(agg[aspect].stderr, stderr, rel_tol=1e-9, abs_tol=1e-12)
        assert agg[aspect].ci95_high == pytest.approx(agg[aspect].mean + 1.96 * agg[aspect].stderr)


# ------------------------------------------------------- extraction, ICD

def test_extract_numbered_list():
    assert extract_entities("1. Acute appendicitis; 2. Type 2 diabetes mellitus", index=INDEX) == \
        ["acute appendicitis", "type 2 diabetes mellitus"]


def test_extract_empty_and_dedup():
    assert extract_entities("", index=INDEX) == []
    assert extract_entities("Acute appendicitis. acute appendicitis.", index=INDEX) == ["acute appendicitis"]


def test_extract_inverted_synonym_survives():
    assert extract_entities("Appendicitis, acute", index=INDEX) == ["appendicitis, acute"]


def test_extract_model_mode():
    backend = scripted("- Acute appendicitis\n- T2DM\n\n- acute appendicitis")
    assert extract_entities("anything", "model", backend) == ["acute appendicitis", "t2dm"]
    with pytest.raises(ValueError):
        extract_entities("x", "model")


def test_normalize():
    assert normalize_to_icd(["acute appendicitis"], INDEX).codes == {"K35"}
    assert normalize_to_icd(["appendicitis, acute", " Acute  Appendicitis "], INDEX).codes == {"K35"}
    out = normalize_to_icd(["florbnitz disease"], INDEX)
    assert out.codes == frozenset() and out.unmatched == ("florbnitz disease",)


def test_normalize_idempotent_on_default_index():
    idx = default_icd_index()
    codes = normalize_to_icd(list(idx.terms), idx).codes
    again = normalize_to_icd([idx.canonical[c] for c in codes], idx).codes
    assert again == codes and len(codes) >= 100


def test_index_validation():
    with pytest.raises(IcdIndexError):
        icd_index_from_dict({"codes": [{"code": "K3", "canonical": "x"}]})
    with pytest.raises(IcdIndexError):
        icd_index_from_dict({"codes": [{"code": "K35", "canonical": "x"}, {"code": "K36", "canonical": "x"}]})


# ----------------------------------------------------------------- metrics

def test_set_overlap_examples():
    assert set_overlap_metrics({"A", "B"}, {"B", "C"}) == {"precision": 0.5, "recall": 0.5}
    assert set_overlap_metrics({"A"}, {"A"}) == {"precision": 1.0, "recall": 1.0}
    assert set_overlap_metrics(set(), {"C"}) == {"precision": 0.0, "recall": 0.0}
    with pytest.raises(ValueError):
        set_overlap_metrics({"A"}, set())


@pytest.mark.parametrize("r, p, expected", [(33.41, 50.61, 40.25), (31.68, 50.92, 39.06),
                                            (22.42, 43.38, 29.56)])
def test_f1_published_rows(r, p, expected):
    assert abs(f1(p, r) - expected) <= 0.02


@given(p=st.floats(0, 1), r=st.floats(0, 1))
def test_f1_properties(p, r):
    v = f1(p, r)
    assert v == f1(r, p)
    assert min(p, r) - 1e-12 <= v <= max(p, r) + 1e-12
    assert math.isclose(f1(100 * p, 100 * r), 100 * v, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(f1(p, p), p, rel_tol=1e-12, abs_tol=1e-12)


def _results(cases):
    return [MatchResult(f"c{i}", frozenset(p), frozenset(t)) for i, (p, t) in enumerate(cases)]


def test_corpus_metrics_worked_example():
    cases = [({"A", "B"}, {"A", "C"}), ({"D"}, {"E", "F"})]
    m = corpus_metrics(_results(cases))
    assert m["micro_precision"] == 1 / 3 and m["micro_recall"] == 1 / 4
    assert m["micro_f1"] == pytest.approx(2 / 7, rel=1e-15)
    assert m["macro_precision"] == m["macro_recall"] == m["macro_f1"] == 0.25


def test_corpus_metrics_perfect_and_single():
    assert set(corpus_metrics(_results([({"A"}, {"A"}), ({"B", "C"}, {"B", "C"})])).values()) == {1.0}
    m = corpus_metrics(_results([({"A", "B"}, {"B", "C", "D"})]))
    for k in ("precision", "recall", "f1"):
        assert m[f"micro_{k}"] == m[f"macro_{k}"]
    with pytest.raises(ValueError):
        corpus_metrics([])


@given(seed=st.integers(0, 2 ** 32))
def test_corpus_metrics_oracle(seed):
    cases = random_corpus(random.Random(seed))
    assert corpus_metrics(_results(cases)) == brute_metrics(cases)


def test_match_result_intersection():
    r = MatchResult("x", frozenset("AB"), frozenset("BC"))
    assert r.intersection_size == 1 and r.to_dict()["intersection_size"] == 1


# ----------------------------------------------------------- distributions

def test_turn_histogram():
    h = turn_histogram([4, 5, 5])
    assert h["histogram"] == {4: 1, 5: 2} and h["mode"] == 5 and h["n"] == 3
    assert turn_histogram([])["histogram"] == {}
    assert turn_histogram([{"turn_count": 7}] * 3)["variance"] == 0


def test_score_histogram():
    h = score_histogram([0, 9, 10, 99, 100])
    assert h["0-9"] == 2 and h["10-19"] == 1 and h["90-100"] == 2
    assert sum(h.values()) == 5
