"""Case records: schema, JSONL corpus ingestion, validation and exam lookup."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable


CHIEF_COMPLAINT = "Chief Complaint"


class Modality(str, Enum):
    IMAGING = "imaging"
    ECG = "ecg"
    LABORATORY = "laboratory"
    PHYSICAL = "physical"
    OTHER = "other"


class CorpusError(ValueError):
    """Raised when a corpus file cannot be turned into valid case records."""


@dataclass(frozen=True)
class ExamResult:
    test_name: str
    modality: Modality
    result_text: str


@dataclass(frozen=True)
class GroundTruth:
    diagnosis_text: str
    diagnosis_entities: tuple[str, ...]
    rationale_text: str = ""
    treatment_text: str = ""


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    profile: str
    self_report: dict[str, str]
    examinations: tuple[ExamResult, ...]
    ground_truth: GroundTruth

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["examinations"] = [
            {"test_name": e.test_name, "modality": e.modality.value, "result_text": e.result_text}
            for e in self.examinations
        ]
        data["ground_truth"]["diagnosis_entities"] = list(self.ground_truth.diagnosis_entities)
        return data


class _NotAvailable:
    """Sentinel returned by :func:`lookup_exam` when the case lacks the test."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotAvailable"

    def __bool__(self) -> bool:
        return False


NotAvailable = _NotAvailable()


def _exam_key(name: str) -> str:
    return " ".join(name.split()).casefold()


def case_from_dict(data: dict[str, Any]) -> CaseRecord:
    """Build a record from its JSON object form. Shape errors raise CorpusError."""
    try:
        exams = tuple(
            ExamResult(
                test_name=str(e["test_name"]),
                modality=Modality(str(e.get("modality", "other")).lower()),
                result_text=str(e["result_text"]),
            )
            for e in data.get("examinations", [])
        )
        gt = data["ground_truth"]
        truth = GroundTruth(
            diagnosis_text=str(gt["diagnosis_text"]),
            diagnosis_entities=tuple(str(x) for x in gt.get("diagnosis_entities", [])),
            rationale_text=str(gt.get("rationale_text", "")),
            treatment_text=str(gt.get("treatment_text", "")),
        )
        self_report = data.get("self_report", {})
        if not isinstance(self_report, dict):
            raise TypeError("self_report must be an object")
        return CaseRecord(
            case_id=str(data["case_id"]),
            profile=str(data.get("profile", "")),
            self_report={str(k): str(v) for k, v in self_report.items()},
            examinations=exams,
            ground_truth=truth,
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorpusError(f"malformed case object: {exc!r}") from exc


def validate_case(record: CaseRecord) -> list[str]:
    """Return human-readable invariant violations; an empty list means valid."""
    problems: list[str] = []
    if not record.case_id.strip():
        problems.append("case_id: must be nonempty")
    if not record.self_report.get(CHIEF_COMPLAINT, "").strip():
        problems.append(f"self_report: missing required entry {CHIEF_COMPLAINT!r}")

    seen: dict[str, str] = {}
    for i, exam in enumerate(record.examinations):
        if not exam.test_name.strip():
            problems.append(f"examinations[{i}].test_name: must be nonempty")
            continue
        if not exam.result_text.strip():
            problems.append(f"examinations[{i}].result_text: must be nonempty")
        key = _exam_key(exam.test_name)
        if key in seen:
            problems.append(
                f"examinations[{i}].test_name: duplicate examination {exam.test_name!r}"
            )
        else:
            seen[key] = exam.test_name

    entities = record.ground_truth.diagnosis_entities
    if not entities:
        problems.append("ground_truth.diagnosis_entities: must be nonempty")
    elif any(not e.strip() for e in entities):
        problems.append("ground_truth.diagnosis_entities: entries must be nonempty strings")
    return problems


def lookup_exam(record: CaseRecord, test_name: str) -> ExamResult | _NotAvailable:
    key = _exam_key(test_name)
    if not key:
        return NotAvailable
    for exam in record.examinations:
        if _exam_key(exam.test_name) == key:
            return exam
    return NotAvailable


def parse_corpus(lines: Iterable[str], source: str = "<corpus>") -> list[CaseRecord]:
    records: list[CaseRecord] = []
    ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise CorpusError(f"{source}:{lineno}: expected a JSON object per line")
        try:
            record = case_from_dict(obj)
        except CorpusError as exc:
            raise CorpusError(f"{source}:{lineno}: {exc}") from exc
        problems = validate_case(record)
        if problems:
            raise CorpusError(
                f"{source}:{lineno}: case {record.case_id!r} invalid: " + "; ".join(problems)
            )
        if record.case_id in ids:
            raise CorpusError(f"{source}:{lineno}: duplicate case_id {record.case_id!r}")
        ids.add(record.case_id)
        records.append(record)
    return records


def load_corpus(path: str | Path) -> list[CaseRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return parse_corpus(fh, source=str(path))


def dump_corpus(records: Iterable[CaseRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
