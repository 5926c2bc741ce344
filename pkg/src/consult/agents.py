"""Doctor, patient and examiner agents plus the memory bank and report composer."""

from __future__ import annotations

import json
import functools
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .backend import ChatBackend
from .cases import CaseRecord, lookup_exam
from .fsm import ConsultationState, GoalUnmet, subgoal_status
from .taxonomy import (
    FINAL_DIAGNOSIS,
    PHASES,
    Action,
    ActionParseError,
    ActionTaxonomy,
    Phase,
    parse_action,
)

MAX_ATTEMPTS = 3

ACTION_GRAMMAR = (
    "Reply with exactly one line of the form '<Phase>: Category. utterance', "
    "for example '<Inquiry>: Chief Complaint. Do you feel headache?'. "
    "Phase is one of Inquiry, Examination, Diagnosis and Category must be one of "
    "the listed categories for that phase."
)
EMPTY_MEMORY = "No information has been gathered yet."
NO_COMPLAINT = "No, I haven't noticed anything like that."
NOT_AVAILABLE = "The requested examination was not performed for this patient; no result is available."
WITHHELD = "[withheld]"

REPORT_SECTIONS: tuple[tuple[str, str], ...] = (
    ("symptoms", "Symptoms"),
    ("medical_examinations", "Medical Examinations"),
    ("diagnostic_results", "Diagnostic Results"),
    ("diagnostic_rationales", "Diagnostic Rationales"),
    ("treatment_plan", "Treatment Plan"),
)


class NonInquiryAction(ValueError):
    pass


class NonExaminationAction(ValueError):
    pass


class MemoryOrderError(ValueError):
    pass


class ObservationKind(str, Enum):
    SUBJECTIVE = "subjective"
    OBJECTIVE = "objective"
    # the doctor's own diagnosis-phase statement, routed to nobody
    REFLECTIVE = "reflective"


_SOURCE_FOR_KIND = {
    ObservationKind.SUBJECTIVE: "patient",
    ObservationKind.OBJECTIVE: "examiner",
    ObservationKind.REFLECTIVE: "doctor",
}
_PHASE_FOR_SOURCE = {"patient": Phase.INQUIRY, "examiner": Phase.EXAMINATION, "doctor": Phase.DIAGNOSIS}


@dataclass(frozen=True)
class Observation:
    kind: ObservationKind
    text: str


@dataclass(frozen=True)
class MemoryEntry:
    turn: int
    phase: Phase
    category: str
    question: str
    answer: str
    source: str


@dataclass(frozen=True)
class MemoryBank:
    entries: tuple[MemoryEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PatientPolicy:
    disruption_enabled: bool = False
    disruption_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.disruption_rate <= 1.0:
            raise ValueError(f"disruption_rate must be in [0, 1], got {self.disruption_rate}")


@dataclass(frozen=True)
class DiagnosticReport:
    symptoms: str = ""
    medical_examinations: str = ""
    diagnostic_results: str = ""
    diagnostic_rationales: str = ""
    treatment_plan: str = ""
    missing: tuple[str, ...] = ()

    def sections(self) -> dict[str, str]:
        return {key: getattr(self, key) for key, _ in REPORT_SECTIONS}

    def to_dict(self) -> dict:
        return {**self.sections(), "missing": list(self.missing)}

    @classmethod
    def from_dict(cls, data: dict) -> DiagnosticReport:
        return cls(**{k: str(data.get(k, "")) for k, _ in REPORT_SECTIONS},
                   missing=tuple(data.get("missing", ())))

    def render(self) -> str:
        return "\n".join(f"{title}: {getattr(self, key)}" for key, title in REPORT_SECTIONS)


class Prompts:
    """Prompt templates with ``{slot}`` placeholders, read from a directory.

    Files missing from ``directory`` fall back to the packaged defaults.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None

    @functools.lru_cache(maxsize=None)
    def template(self, name: str) -> str:
        if self.directory is not None:
            path = self.directory / f"{name}.txt"
            if path.is_file():
                return path.read_text(encoding="utf-8")
        return (resources.files("consult.data") / "prompts" / f"{name}.txt").read_text(encoding="utf-8")

    def render(self, name: str, **slots: str) -> str:
        return self.template(name).format_map(slots).strip()


DEFAULT_PROMPTS = Prompts()


@functools.lru_cache(maxsize=1)
def default_disruptions() -> tuple[str, ...]:
    text = (resources.files("consult.data") / "disruptions.json").read_text(encoding="utf-8")
    return tuple(json.loads(text))


# ---------------------------------------------------------------- memory


def memory_append(memory: MemoryBank, state: ConsultationState, action: Action,
                  observation: Observation) -> MemoryBank:
    """Record one exchange at ``state.turn`` (the state *after* the action was applied)."""
    if memory.entries and state.turn <= memory.entries[-1].turn:
        raise MemoryOrderError(
            f"turn {state.turn} does not follow last recorded turn {memory.entries[-1].turn}"
        )
    source = _SOURCE_FOR_KIND[observation.kind]
    if _PHASE_FOR_SOURCE[source] is not action.phase:
        raise ValueError(f"{observation.kind.value} observation cannot answer a {action.phase.value} action")
    entry = MemoryEntry(state.turn, action.phase, action.category, action.utterance,
                        observation.text, source)
    return MemoryBank(memory.entries + (entry,))


def memory_context(memory: MemoryBank) -> str:
    if not memory.entries:
        return EMPTY_MEMORY
    blocks = []
    for phase in PHASES:
        entries = [e for e in memory.entries if e.phase is phase]
        if not entries:
            continue
        lines = [f"[{phase.value}]"]
        for e in entries:
            lines.append(f"- ({e.category}, turn {e.turn}) Q: {e.question} / A: {e.answer}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


# ---------------------------------------------------------------- doctor


def _action_lists(state: ConsultationState, taxonomy: ActionTaxonomy) -> str:
    lines = []
    for phase in PHASES:
        lines.append(f"{phase.value}:")
        done = state.covered(phase)
        for c in taxonomy.categories_for(phase):
            mark = "*" if c.mandatory else " "
            status = " [done]" if c.name in done else ""
            lines.append(f"  {mark} {c.name}{status} -- {c.hint}")
    return "\n".join(lines)


def _subgoal_line(state: ConsultationState, taxonomy: ActionTaxonomy) -> str:
    status = subgoal_status(state, state.phase, taxonomy)
    line = f"{status.mandatory_visited}/{status.mandatory_total} required actions done"
    if status.missing:
        line += "; still open: " + ", ".join(status.missing)
    return line


def doctor_prompt(state: ConsultationState, memory: MemoryBank, taxonomy: ActionTaxonomy,
                  goal_unmet: GoalUnmet | None = None, prompts: Prompts = DEFAULT_PROMPTS) -> str:
    return prompts.render(
        "doctor",
        memory=memory_context(memory),
        phase=state.phase.value,
        subgoal=_subgoal_line(state, taxonomy),
        action_lists=_action_lists(state, taxonomy),
        grammar=ACTION_GRAMMAR,
        goal_unmet=(goal_unmet.message() + "\n") if goal_unmet else "",
    )


def fallback_action(state: ConsultationState, taxonomy: ActionTaxonomy) -> Action:
    """Forward-progress move used when the doctor's replies never parse.

    First open mandatory category of the current phase; otherwise the first
    category of the next phase (Final Diagnosis once there is no next phase).
    """
    status = subgoal_status(state, state.phase, taxonomy)
    if status.missing:
        cat = taxonomy.find(state.phase, status.missing[0])
    else:
        nxt = state.phase.next()
        if nxt is not None:
            cat = taxonomy.categories_for(nxt)[0]
        else:
            cat = taxonomy.find(Phase.DIAGNOSIS, FINAL_DIAGNOSIS) or taxonomy.categories_for(Phase.DIAGNOSIS)[0]
    return Action(cat.phase, cat.name, cat.hint.strip() or f"Proceed with {cat.name.lower()}.")


@dataclass
class DoctorDecision:
    action: Action
    attempts: int
    fell_back: bool = False
    errors: list[str] = field(default_factory=list)


def choose_action(state: ConsultationState, memory: MemoryBank, taxonomy: ActionTaxonomy,
                  backend: ChatBackend, *, goal_unmet: GoalUnmet | None = None,
                  prompts: Prompts = DEFAULT_PROMPTS, max_attempts: int = MAX_ATTEMPTS) -> DoctorDecision:
    messages = [
        {"role": "system", "content": prompts.render("doctor_system")},
        {"role": "user", "content": doctor_prompt(state, memory, taxonomy, goal_unmet, prompts)},
    ]
    errors: list[str] = []
    for attempt in range(1, max_attempts + 1):
        reply = backend.chat(messages).content
        try:
            return DoctorDecision(parse_action(reply, taxonomy), attempt, False, errors)
        except ActionParseError as exc:
            errors.append(str(exc))
            messages += [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": prompts.render("doctor_retry", error=str(exc),
                                                           grammar=ACTION_GRAMMAR)},
            ]
    return DoctorDecision(fallback_action(state, taxonomy), max_attempts, True, errors)


def doctor_select_action(state: ConsultationState, memory: MemoryBank, taxonomy: ActionTaxonomy,
                         backend: ChatBackend, *, goal_unmet: GoalUnmet | None = None,
                         prompts: Prompts = DEFAULT_PROMPTS) -> Action:
    return choose_action(state, memory, taxonomy, backend, goal_unmet=goal_unmet,
                         prompts=prompts).action


# ---------------------------------------------------------------- patient


def _redact(text: str, record: CaseRecord) -> str:
    secrets = {record.ground_truth.diagnosis_text.strip(),
               *(e.strip() for e in record.ground_truth.diagnosis_entities)}
    # longest first so a full diagnosis sentence is removed before its parts
    for secret in sorted((s for s in secrets if s), key=len, reverse=True):
        pattern = re.compile(re.escape(secret), re.IGNORECASE)
        for _ in range(10):
            text, n = pattern.subn(WITHHELD, text)
            if not n:
                break
    return text


def _disruption_fires(policy: PatientPolicy, record: CaseRecord, action: Action, turn: int) -> str | None:
    if not policy.disruption_enabled or policy.disruption_rate <= 0.0:
        return None
    rng = random.Random(f"{policy.seed}|{record.case_id}|{turn}|{action.category}|{action.utterance}")
    if rng.random() < policy.disruption_rate:
        sentences = default_disruptions()
        return sentences[rng.randrange(len(sentences))]
    return None


def patient_respond(record: CaseRecord, action: Action, policy: PatientPolicy = PatientPolicy(),
                    *, turn: int = 0, backend: ChatBackend | None = None,
                    prompts: Prompts = DEFAULT_PROMPTS) -> Observation:
    """Answer an inquiry from the matching self-report entry only.

    With ``backend`` given, the entry is paraphrased by the model instead of
    quoted. Ground-truth diagnosis strings are always scrubbed from the reply.
    """
    if action.phase is not Phase.INQUIRY:
        raise NonInquiryAction(f"patient only answers Inquiry actions, got {action.phase.value}")
    key = action.category.casefold()
    fact = next((v for k, v in record.self_report.items() if k.casefold() == key), None)

    if fact is None:
        text = NO_COMPLAINT
    elif backend is not None:
        prompt = prompts.render("patient", profile=_redact(record.profile, record),
                                facts=_redact(fact, record), question=action.utterance)
        text = backend.chat([{"role": "user", "content": prompt}]).content.strip() or fact
    else:
        text = fact.strip()

    disruption = _disruption_fires(policy, record, action, turn)
    if disruption:
        text = f"{text} {disruption}"
    return Observation(ObservationKind.SUBJECTIVE, _redact(text, record))


# ---------------------------------------------------------------- examiner

_LEAD_IN = re.compile(
    r"^(?:please\s+|let'?s\s+|i\s+(?:will|would\s+like\s+to)\s+)?"
    r"(?:order|perform|request)(?:\s+(?:an?|the))?\s+",
    re.IGNORECASE,
)


def ordered_test_name(action: Action) -> str:
    first = re.split(r"[.!?;\n]", action.utterance.strip(), maxsplit=1)[0]
    return _LEAD_IN.sub("", first.strip()).strip()


def examiner_respond(record: CaseRecord, action: Action) -> Observation:
    if action.phase is not Phase.EXAMINATION:
        raise NonExaminationAction(f"examiner only handles Examination actions, got {action.phase.value}")
    result = lookup_exam(record, ordered_test_name(action)) or lookup_exam(record, action.category)
    if not result:
        return Observation(ObservationKind.OBJECTIVE, NOT_AVAILABLE)
    return Observation(ObservationKind.OBJECTIVE, result.result_text)


def doctor_reflect(action: Action) -> Observation:
    return Observation(ObservationKind.REFLECTIVE, action.utterance)


# ---------------------------------------------------------------- report

_HEADING = re.compile(
    r"^[\s#*_>-]*(?P<head>symptoms?|medical\s+examinations?|diagnostic\s+results?|"
    r"diagnostic\s+rationales?|treatment\s+plans?)[\s*_]*(?::|$)[\s*_]*(?P<rest>.*)$",
    re.IGNORECASE,
)


def _section_key(head: str) -> str:
    norm = " ".join(head.lower().split()).rstrip("s")
    for key, title in REPORT_SECTIONS:
        if title.lower().rstrip("s") == norm:
            return key
    raise KeyError(head)


def parse_report(text: str) -> dict[str, str]:
    """Split a report into sections by heading (case-insensitive, ``Heading:`` form)."""
    found: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        m = _HEADING.match(line)
        if m:
            key = _section_key(m.group("head"))
            current = found.setdefault(key, [])
            if m.group("rest").strip():
                current.append(m.group("rest").strip())
        elif current is not None:
            current.append(line.rstrip())
    return {k: "\n".join(v).strip() for k, v in found.items()}


def compose_final_report(memory: MemoryBank, backend: ChatBackend, *,
                         prompts: Prompts = DEFAULT_PROMPTS,
                         max_attempts: int = MAX_ATTEMPTS) -> DiagnosticReport:
    headings = "\n".join(f"{title}:" for _, title in REPORT_SECTIONS)
    messages = [{"role": "user", "content": prompts.render("report", memory=memory_context(memory),
                                                            headings=headings)}]
    sections: dict[str, str] = {}
    for attempt in range(max_attempts):
        reply = backend.chat(messages).content
        sections = parse_report(reply)
        missing = [title for key, title in REPORT_SECTIONS if key not in sections]
        if not missing:
            break
        messages += [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": prompts.render("report_retry", missing=", ".join(missing),
                                                       headings=headings)},
        ]
    missing_keys = tuple(key for key, _ in REPORT_SECTIONS if key not in sections)
    return DiagnosticReport(**{key: sections.get(key, "") for key, _ in REPORT_SECTIONS},
                            missing=missing_keys)

