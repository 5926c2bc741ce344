from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from consult.agents import (
    EMPTY_MEMORY,
    NO_COMPLAINT,
    NOT_AVAILABLE,
    WITHHELD,
    MemoryBank,
    MemoryOrderError,
    NonExaminationAction,
    NonInquiryAction,
    Observation,
    ObservationKind,
    PatientPolicy,
    Prompts,
    choose_action,
    compose_final_report,
    default_disruptions,
    doctor_prompt,
    doctor_select_action,
    examiner_respond,
    memory_append,
    memory_context,
    ordered_test_name,
    parse_report,
    patient_respond,
)
from consult.backend import FixtureEntry, ScriptedBackend
from consult.fsm import ConsultationState, apply_action, initial_state
from consult.taxonomy import Action, Phase, default_taxonomy, parse_action, validate_action

TAX = default_taxonomy()
CC = Action(Phase.INQUIRY, "Chief Complaint", "Do you feel headache?")
CC_TEXT = "<Inquiry>: Chief Complaint. Do you feel headache?"


def scripted(*replies):
    return ScriptedBackend([FixtureEntry(None, r) for r in replies])


# ----------------------------------------------------------------- doctor

def test_doctor_returns_parsed_action():
    action = doctor_select_action(initial_state(), MemoryBank(), TAX,
                                  scripted("<Inquiry>: Chief Complaint. Do you feel headache?"))
    assert action == CC


def test_doctor_falls_back_after_three_garbage_replies():
    state = apply_action(initial_state(), CC, TAX)
    backend = scripted("garbage", "more garbage", "<Nope>: x. y")
    decision = choose_action(state, MemoryBank(), TAX, backend)
    assert decision.fell_back and decision.attempts == 3 and len(decision.errors) == 3
    assert decision.action.phase is Phase.INQUIRY
    assert decision.action.category == "History of Present Illness"
    assert decision.action.utterance == TAX.find(Phase.INQUIRY, "History of Present Illness").hint
    assert backend.remaining == 0


def test_doctor_retries_unknown_category():
    backend = scripted("<Examination>: MRI Scan. Do it.", "<Inquiry>: Chief Complaint. Any pain?")
    decision = choose_action(initial_state(), MemoryBank(), TAX, backend)
    assert decision.attempts == 2 and not decision.fell_back
    assert decision.action.category == "Chief Complaint"
    assert "MRI Scan" in decision.errors[0]


def test_retry_prompt_is_sent():
    seen = []

    class Spy(ScriptedBackend):
        def _complete(self, request):
            seen.append(request.messages)
            return super()._complete(request)

    backend = Spy([FixtureEntry(None, "nonsense"), FixtureEntry("could not be parsed", CC_TEXT)])
    assert choose_action(initial_state(), MemoryBank(), TAX, backend).action == CC
    assert seen[1][-2] == {"role": "assistant", "content": "nonsense"}


def test_doctor_prompt_contents():
    state = apply_action(initial_state(), CC, TAX)
    text = doctor_prompt(state, MemoryBank(), TAX)
    assert EMPTY_MEMORY in text
    assert "1/2 required actions done" in text and "History of Present Illness" in text
    for cat in TAX.categories:
        assert cat.name in text
    assert "<Phase>: Category. utterance" in text
    blocked = apply_action(state, Action(Phase.EXAMINATION, "Physical Examination", "x"), TAX)
    assert blocked.message() in doctor_prompt(state, MemoryBank(), TAX, blocked)


@given(replies=st.lists(st.text(max_size=40), min_size=3, max_size=3))
def test_doctor_output_always_valid(replies):
    action = doctor_select_action(initial_state(), MemoryBank(), TAX, scripted(*replies))
    validate_action(action, TAX)
    assert action.utterance


def test_custom_prompt_directory(tmp_path):
    (tmp_path / "doctor_system.txt").write_text("You are terse.", encoding="utf-8")
    prompts = Prompts(tmp_path)
    assert prompts.render("doctor_system") == "You are terse."
    assert "could not be parsed" in prompts.render("doctor_retry", error="e", grammar="g")


# ---------------------------------------------------------------- patient

def test_patient_scoped_answer(case):
    obs = patient_respond(case, CC)
    assert obs == Observation(ObservationKind.SUBJECTIVE, case.self_report["Chief Complaint"])


def test_patient_no_matching_entry(case):
    obs = patient_respond(case, Action(Phase.INQUIRY, "Personal and Family History", "Smoke?"))
    assert obs.text == NO_COMPLAINT


def test_patient_rejects_other_phases(case):
    with pytest.raises(NonInquiryAction):
        patient_respond(case, Action(Phase.EXAMINATION, "ECG", "Order ECG."))


def test_patient_disruption_rate_one(case):
    obs = patient_respond(case, CC, PatientPolicy(True, 1.0, 7), turn=1)
    assert any(obs.text.endswith(s) for s in default_disruptions())
    assert obs.text.startswith(case.self_report["Chief Complaint"])
    assert patient_respond(case, CC, PatientPolicy(True, 1.0, 7), turn=1) == obs


def test_patient_disruption_rate_zero(case):
    assert patient_respond(case, CC, PatientPolicy(True, 0.0, 7)).text == case.self_report["Chief Complaint"]


def test_patient_redacts_diagnosis(case):
    obs = patient_respond(case, Action(Phase.INQUIRY, "History of Present Illness", "How did it start?"))
    assert "appendicitis" not in obs.text.lower() and WITHHELD in obs.text


def test_patient_paraphrase_is_redacted(case):
    backend = scripted("Honestly it is Acute Appendicitis, I read it online.")
    obs = patient_respond(case, CC, backend=backend)
    assert "appendicitis" not in obs.text.lower()


def test_policy_validation():
    with pytest.raises(ValueError):
        PatientPolicy(True, 1.5)


# --------------------------------------------------------------- examiner

def test_examiner_by_category(cases):
    rec = cases[1]
    obs = examiner_respond(rec, Action(Phase.EXAMINATION, "ECG", "Let's check the heart rhythm."))
    assert obs.kind is ObservationKind.OBJECTIVE and obs.text.startswith("ST elevation")


def test_examiner_by_utterance(case):
    obs = examiner_respond(case, Action(Phase.EXAMINATION, "Laboratory Tests",
                                        "Please order a complete blood count. Thanks."))
    assert obs.text.startswith("WBC 14.2")


def test_examiner_absent(case):
    obs = examiner_respond(case, Action(Phase.EXAMINATION, "Imaging Examination", "Order a CT head."))
    assert obs.text == NOT_AVAILABLE


def test_examiner_rejects_inquiry(case):
    with pytest.raises(NonExaminationAction):
        examiner_respond(case, CC)


@pytest.mark.parametrize("utterance, name", [
    ("Order CBC.", "CBC"),
    ("Perform an ECG now", "ECG now"),
    ("I would like to request the chest X-ray; urgent", "chest X-ray"),
    ("Chest X-ray please.", "Chest X-ray please"),
])
def test_ordered_test_name(utterance, name):
    assert ordered_test_name(Action(Phase.EXAMINATION, "Laboratory Tests", utterance)) == name


def test_examiner_deterministic(case):
    a = Action(Phase.EXAMINATION, "Physical Examination", "Examine the abdomen.")
    assert examiner_respond(case, a) == examiner_respond(case, a)


# ----------------------------------------------------------------- memory

def _state(turn):
    return ConsultationState(Phase.INQUIRY, turn, {}, False, 20)


def test_memory_append_and_order():
    m = memory_append(MemoryBank(), _state(1), CC, Observation(ObservationKind.SUBJECTIVE, "Yes."))
    assert len(m) == 1 and m.entries[0].source == "patient"
    m5 = memory_append(m, _state(5), CC, Observation(ObservationKind.SUBJECTIVE, "Still."))
    with pytest.raises(MemoryOrderError):
        memory_append(m5, _state(3), CC, Observation(ObservationKind.SUBJECTIVE, "x"))


def test_memory_source_matches_phase():
    ecg = Action(Phase.EXAMINATION, "ECG", "Order ECG.")
    m = memory_append(MemoryBank(), _state(1), ecg, Observation(ObservationKind.OBJECTIVE, "Sinus."))
    assert m.entries[0].source == "examiner"
    with pytest.raises(ValueError):
        memory_append(MemoryBank(), _state(1), CC, Observation(ObservationKind.OBJECTIVE, "x"))


def test_memory_context_grouping():
    assert memory_context(MemoryBank()) == EMPTY_MEMORY
    ecg = Action(Phase.EXAMINATION, "ECG", "Order ECG.")
    m = memory_append(MemoryBank(), _state(1), ecg, Observation(ObservationKind.OBJECTIVE, "Sinus."))
    m = memory_append(m, _state(2), CC, Observation(ObservationKind.SUBJECTIVE, "Headache."))
    text = memory_context(m)
    assert text.index("[Inquiry]") < text.index("[Examination]")
    assert "(Chief Complaint, turn 2) Q: Do you feel headache? / A: Headache." in text
    assert memory_context(m) == text


# ----------------------------------------------------------------- report

FULL = """Symptoms: fever
Medical Examinations: CBC
Diagnostic Results: pneumonia
Diagnostic Rationales: crackles
Treatment Plan: antibiotics"""


def test_report_full():
    r = compose_final_report(MemoryBank(), scripted(FULL))
    assert r.diagnostic_results == "pneumonia" and r.missing == ()


def test_report_missing_section_thrice():
    partial = FULL.rsplit("\n", 1)[0]
    backend = scripted(partial, partial, partial)
    r = compose_final_report(MemoryBank(), backend)
    assert r.treatment_plan == "" and r.missing == ("treatment_plan",)
    assert backend.remaining == 0


def test_report_heading_case_and_markdown():
    text = "## SYMPTOMS:\nfever\ncough\n**Medical Examinations**: CBC\nDIAGNOSTIC RESULT: x\n" \
           "diagnostic rationale: y\nTREATMENT PLAN: rest"
    sections = parse_report(text)
    assert sections["symptoms"] == "fever\ncough"
    assert sections["medical_examinations"] == "CBC"
    assert sections["treatment_plan"] == "rest"
    assert len(sections) == 5


def test_heading_words_inside_text_are_not_headings():
    sections = parse_report("Symptoms: the treatment plan was discussed\nTreatment Plan: none")
    assert sections["symptoms"] == "the treatment plan was discussed"


def test_parse_action_round_trip_of_fallback(case):
    decision = choose_action(initial_state(), MemoryBank(), TAX, scripted("", "", ""))
    assert parse_action(f"<{decision.action.phase.value}>: {decision.action.category}. "
                        f"{decision.action.utterance}", TAX) == decision.action
