"""Synthetic cases and scripted doctor/evaluator fixtures for offline runs.

The doctor scripts key their replies on phrases from the packaged prompt
templates, so they only work with the default prompts.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .backend import FixtureEntry, dump_fixture
from .cases import CaseRecord, Modality, case_from_dict, dump_corpus
from .taxonomy import Action, Phase, render_action

DOCTOR_TURN = "Choose the next action"
BLOCKED = "Progression blocked"
REPORT = "final consultation report"
EVALUATION = "Score the consultation report"

_CASES = [
    {
        "case_id": "syn-001",
        "profile": "24-year-old man, university student.",
        "self_report": {
            "Chief Complaint": "I have had pain in my lower right belly since yesterday.",
            "History of Present Illness": "It started around my belly button and moved to the right side. "
                                          "I feel sick and threw up twice. My friend thinks it is acute appendicitis.",
            "Past Medical History": "Nothing serious, I have never had surgery.",
            "Medication and Allergy History": "No regular medicines, no allergies.",
        },
        "examinations": [
            {"test_name": "Physical Examination", "modality": "physical",
             "result_text": "Temperature 38.1 C. Tenderness and guarding at McBurney's point, positive Rovsing sign."},
            {"test_name": "Complete Blood Count", "modality": "laboratory",
             "result_text": "WBC 14.2 x10^9/L with neutrophilia; hemoglobin normal."},
            {"test_name": "Abdominal Ultrasound", "modality": "imaging",
             "result_text": "Non-compressible tubular structure 9 mm in the right lower quadrant with periappendiceal fluid."},
        ],
        "ground_truth": {
            "diagnosis_text": "Acute appendicitis",
            "diagnosis_entities": ["acute appendicitis"],
            "rationale_text": "Migratory right lower quadrant pain, fever, leukocytosis and ultrasound findings.",
            "treatment_text": "Laparoscopic appendectomy with perioperative antibiotics.",
        },
    },
    {
        "case_id": "syn-002",
        "profile": "61-year-old man, retired driver, smoker.",
        "self_report": {
            "Chief Complaint": "Crushing chest pain for the last two hours.",
            "History of Present Illness": "The pain spreads to my left arm and jaw, I am sweating and short of breath.",
            "Past Medical History": "I have had high blood pressure readings for ten years.",
            "Personal and Family History": "I smoke a pack a day. My father died of a heart problem at 58.",
            "Medication and Allergy History": "Amlodipine 5 mg daily. No allergies.",
        },
        "examinations": [
            {"test_name": "Physical Examination", "modality": "physical",
             "result_text": "BP 165/95, HR 104, diaphoretic, lungs clear."},
            {"test_name": "ECG", "modality": "ecg",
             "result_text": "ST elevation of 3 mm in leads II, III and aVF with reciprocal changes in I and aVL."},
            {"test_name": "Troponin", "modality": "laboratory",
             "result_text": "High-sensitivity troponin T 850 ng/L (reference < 14)."},
        ],
        "ground_truth": {
            "diagnosis_text": "Acute myocardial infarction (inferior STEMI); essential hypertension",
            "diagnosis_entities": ["acute myocardial infarction", "essential hypertension"],
            "rationale_text": "Typical ischemic pain, inferior ST elevation and raised troponin; long-standing high blood pressure.",
            "treatment_text": "Emergency PCI, dual antiplatelet therapy, statin, beta blocker; blood pressure control.",
        },
    },
    {
        "case_id": "syn-003",
        "profile": "72-year-old woman living alone.",
        "self_report": {
            "Chief Complaint": "Cough with fever for four days.",
            "History of Present Illness": "The cough brings up yellow-green sputum and I get breathless climbing stairs.",
            "Past Medical History": "Type 2 diabetes for fifteen years.",
            "Medication and Allergy History": "Metformin. Allergic to penicillin.",
        },
        "examinations": [
            {"test_name": "Physical Examination", "modality": "physical",
             "result_text": "Temperature 38.9 C, RR 24, SpO2 91% on air, crackles at the right base."},
            {"test_name": "Chest X-ray", "modality": "imaging",
             "result_text": "Right lower lobe consolidation with air bronchograms."},
            {"test_name": "Complete Blood Count", "modality": "laboratory",
             "result_text": "WBC 16.8 x10^9/L; CRP 182 mg/L."},
        ],
        "ground_truth": {
            "diagnosis_text": "Community-acquired pneumonia of the right lower lobe; type 2 diabetes mellitus",
            "diagnosis_entities": ["community-acquired pneumonia", "type 2 diabetes mellitus"],
            "rationale_text": "Productive cough, fever, hypoxia, focal crackles and lobar consolidation.",
            "treatment_text": "Non-penicillin antibiotics (e.g. levofloxacin), oxygen, glucose monitoring.",
        },
    },
    {
        "case_id": "syn-004",
        "profile": "35-year-old woman, office worker.",
        "self_report": {
            "Chief Complaint": "Burning when I pass urine and going very often.",
            "History of Present Illness": "It began three days ago; since yesterday I have fever, chills and pain in my right flank.",
            "Personal and Family History": "Non-smoker, drinks rarely.",
        },
        "examinations": [
            {"test_name": "Physical Examination", "modality": "physical",
             "result_text": "Temperature 38.7 C, right costovertebral angle tenderness."},
            {"test_name": "Urinalysis", "modality": "laboratory",
             "result_text": "Nitrite positive, leukocyte esterase 3+, white cell casts."},
            {"test_name": "Renal Ultrasound", "modality": "imaging",
             "result_text": "No hydronephrosis, no calculi."},
        ],
        "ground_truth": {
            "diagnosis_text": "Acute pyelonephritis",
            "diagnosis_entities": ["acute pyelonephritis"],
            "rationale_text": "Cystitis symptoms followed by fever and flank tenderness with white cell casts.",
            "treatment_text": "Oral fluoroquinolone for 7 days guided by urine culture.",
        },
    },
    {
        "case_id": "syn-005",
        "profile": "19-year-old woman.",
        "self_report": {
            "Chief Complaint": "I have been wheezing and short of breath since this morning.",
            "History of Present Illness": "It got worse after cleaning a dusty room; my inhaler helps a little.",
            "Past Medical History": "I had similar episodes as a child.",
            "Medication and Allergy History": "Salbutamol inhaler when needed. Allergic to cats.",
        },
        "examinations": [
            {"test_name": "Physical Examination", "modality": "physical",
             "result_text": "RR 26, diffuse expiratory wheeze, speaks in full sentences, SpO2 95%."},
            {"test_name": "Peak Flow", "modality": "other",
             "result_text": "Peak expiratory flow 58% of predicted, improving to 80% after bronchodilator."},
        ],
        "ground_truth": {
            "diagnosis_text": "Asthma exacerbation",
            "diagnosis_entities": ["asthma"],
            "rationale_text": "Episodic wheeze with a trigger and reversible airflow limitation.",
            "treatment_text": "Nebulised salbutamol, oral prednisolone, start inhaled corticosteroid.",
        },
    },
    {
        "case_id": "syn-006",
        "profile": "68-year-old man.",
        "self_report": {
            "Chief Complaint": "My heart is racing and I feel light-headed.",
            "History of Present Illness": "It comes and goes for two weeks; today it has not stopped for six hours.",
            "Past Medical History": "Heart failure diagnosed two years ago.",
        },
        "examinations": [
            {"test_name": "Physical Examination", "modality": "physical",
             "result_text": "Irregularly irregular pulse 132/min, bibasal crackles, ankle oedema."},
            {"test_name": "ECG", "modality": "ecg",
             "result_text": "Irregular narrow-complex tachycardia without P waves, rate 130."},
            {"test_name": "Echocardiogram", "modality": "imaging",
             "result_text": "LVEF 35%, dilated left atrium."},
        ],
        "ground_truth": {
            "diagnosis_text": "Atrial fibrillation with rapid ventricular response; heart failure",
            "diagnosis_entities": ["atrial fibrillation", "heart failure"],
            "rationale_text": "Irregular tachycardia without P waves on a background of reduced ejection fraction.",
            "treatment_text": "Rate control, anticoagulation, diuretics and optimisation of heart failure therapy.",
        },
    },
]

_CATEGORY_FOR_MODALITY = {
    Modality.IMAGING: "Imaging Examination",
    Modality.ECG: "ECG",
    Modality.LABORATORY: "Laboratory Tests",
    Modality.OTHER: "Laboratory Tests",
    Modality.PHYSICAL: "Physical Examination",
}


def synthetic_cases(n: int | None = None) -> list[CaseRecord]:
    """Up to six hand-written cases; ``n`` larger than that cycles with new ids."""
    n = len(_CASES) if n is None else n
    out = []
    for i in range(n):
        data = dict(_CASES[i % len(_CASES)])
        if i >= len(_CASES):
            data["case_id"] = f"{data['case_id']}-{i // len(_CASES)}"
        out.append(case_from_dict(data))
    return out


def _doctor(action: Action, match: str = DOCTOR_TURN) -> FixtureEntry:
    return FixtureEntry(match, render_action(action))


def report_text(record: CaseRecord, diagnosis: str | None = None) -> str:
    gt = record.ground_truth
    exams = ", ".join(e.test_name for e in record.examinations)
    return "\n".join([
        f"Symptoms: {record.self_report['Chief Complaint']}",
        f"Medical Examinations: {exams}",
        f"Diagnostic Results: {gt.diagnosis_text if diagnosis is None else diagnosis}",
        f"Diagnostic Rationales: {gt.rationale_text}",
        f"Treatment Plan: {gt.treatment_text}",
    ])


def _exam_actions(record: CaseRecord) -> list[Action]:
    actions = [Action(Phase.EXAMINATION, "Physical Examination", "Perform a physical examination.")]
    for exam in record.examinations:
        if exam.modality is Modality.PHYSICAL:
            continue
        actions.append(Action(Phase.EXAMINATION, _CATEGORY_FOR_MODALITY[exam.modality],
                              f"Order {exam.test_name}."))
    return actions


def thorough_doctor_script(record: CaseRecord, *, retrospective: bool = False,
                           diagnosis: str | None = None) -> list[FixtureEntry]:
    """A doctor that covers every phase in order, optionally backtracking once."""
    final = record.ground_truth.diagnosis_text if diagnosis is None else diagnosis
    inquiry = [Action(Phase.INQUIRY, cat, f"Tell me about your {cat.lower()}.")
               for cat in ("Chief Complaint", "History of Present Illness", "Past Medical History",
                           "Personal and Family History", "Medication and Allergy History")
               if cat in record.self_report]
    exams = _exam_actions(record)
    diag = [Action(Phase.DIAGNOSIS, "Preliminary Diagnosis", f"The working diagnosis is {final}.")]
    if retrospective and len(exams) > 1:
        held_back = exams.pop()
        diag += [held_back]
    diag += [
        Action(Phase.DIAGNOSIS, "Diagnostic Rationale", record.ground_truth.rationale_text),
        Action(Phase.DIAGNOSIS, "Treatment Plan", record.ground_truth.treatment_text),
        Action(Phase.DIAGNOSIS, "Final Diagnosis", f"{final}."),
    ]
    entries = [_doctor(a) for a in inquiry + exams + diag]
    return entries + [FixtureEntry(REPORT, report_text(record, diagnosis))]


def eager_doctor_script(record: CaseRecord) -> list[FixtureEntry]:
    """A doctor that jumps to a final diagnosis whenever it can.

    Replies keyed on the blocked-progression message fill exactly the
    category the gate asked for, so the same script serves gated and
    ungated runs.
    """
    final = Action(Phase.DIAGNOSIS, "Final Diagnosis", f"{record.ground_truth.diagnosis_text}.")
    exams = _exam_actions(record)
    test = exams[1] if len(exams) > 1 else exams[0]
    return [
        _doctor(Action(Phase.INQUIRY, "Chief Complaint", "What brings you in today?")),
        _doctor(final),
        _doctor(Action(Phase.INQUIRY, "History of Present Illness", "How did it start?"), BLOCKED),
        _doctor(test),
        _doctor(final),
        _doctor(exams[0], BLOCKED),
        _doctor(final),
        FixtureEntry(REPORT, report_text(record)),
    ]


def evaluator_script(scores: Sequence[int] = (100, 100, 100, 100, 100)) -> list[FixtureEntry]:
    names = ("Symptoms", "Medical Examinations", "Diagnostic Results", "Diagnostic Rationales",
             "Treatment Plan")
    return [FixtureEntry(EVALUATION, "\n".join(f"{n}: {s}" for n, s in zip(names, scores)))]


def write_demo(directory: str | Path, n_cases: int = 4) -> dict[str, Path]:
    """Write a corpus plus thorough/eager doctor fixtures and evaluator fixtures."""
    root = Path(directory)
    cases = synthetic_cases(n_cases)
    paths = {"corpus": root / "corpus.jsonl", "thorough": root / "fixtures" / "thorough",
             "eager": root / "fixtures" / "eager", "evaluator": root / "fixtures" / "evaluator"}
    for key in ("thorough", "eager", "evaluator"):
        paths[key].mkdir(parents=True, exist_ok=True)
    dump_corpus(cases, paths["corpus"])
    for i, record in enumerate(cases):
        dump_fixture(thorough_doctor_script(record, retrospective=i % 2 == 1),
                     paths["thorough"] / f"{record.case_id}.json")
        dump_fixture(eager_doctor_script(record), paths["eager"] / f"{record.case_id}.json")
        dump_fixture(evaluator_script((80, 70, 60 + 5 * i, 65, 55)), paths["evaluator"] / f"{record.case_id}.json")
    return paths
