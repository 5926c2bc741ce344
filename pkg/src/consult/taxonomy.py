"""Hierarchical action set: phases, per-phase categories, and the action grammar.

Surface form of a doctor move::

    <Inquiry>: Chief Complaint. Do you feel headache?

The phase name sits in angle brackets, the category runs up to the first
period, and the utterance is the (trimmed) remainder.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any


@functools.total_ordering
class Phase(Enum):
    INQUIRY = "Inquiry"
    EXAMINATION = "Examination"
    DIAGNOSIS = "Diagnosis"

    @property
    def order(self) -> int:
        return _PHASE_ORDER[self]

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Phase):
            return NotImplemented
        return self.order < other.order

    def next(self) -> Phase | None:
        i = self.order + 1
        return PHASES[i] if i < len(PHASES) else None

    @classmethod
    def from_name(cls, name: str) -> Phase:
        key = name.strip().casefold()
        for phase in cls:
            if phase.value.casefold() == key:
                return phase
        raise UnknownPhase(name.strip())


PHASES: tuple[Phase, ...] = (Phase.INQUIRY, Phase.EXAMINATION, Phase.DIAGNOSIS)
_PHASE_ORDER = {p: i for i, p in enumerate(PHASES)}

FINAL_DIAGNOSIS = "Final Diagnosis"


class TaxonomyError(ValueError):
    pass


class ActionParseError(ValueError):
    """Base class for rejected action strings."""


class MalformedAction(ActionParseError):
    pass


class UnknownPhase(ActionParseError):
    def __init__(self, name: str):
        super().__init__(f"unknown phase {name!r}; expected one of "
                         + ", ".join(p.value for p in PHASES))
        self.name = name


class UnknownCategory(ActionParseError):
    def __init__(self, phase: Phase, name: str):
        super().__init__(f"unknown category {name!r} for phase {phase.value}")
        self.phase = phase
        self.name = name


@dataclass(frozen=True)
class ActionCategory:
    name: str
    phase: Phase
    mandatory: bool = False
    hint: str = ""


@dataclass(frozen=True)
class Action:
    phase: Phase
    category: str
    utterance: str


@dataclass(frozen=True)
class ActionTaxonomy:
    categories: tuple[ActionCategory, ...]

    def categories_for(self, phase: Phase) -> list[ActionCategory]:
        return [c for c in self.categories if c.phase is phase]

    def mandatory_for(self, phase: Phase) -> list[ActionCategory]:
        return [c for c in self.categories if c.phase is phase and c.mandatory]

    def find(self, phase: Phase, name: str) -> ActionCategory | None:
        key = name.strip().casefold()
        for c in self.categories:
            if c.phase is phase and c.name.casefold() == key:
                return c
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "phases": [
                {
                    "name": phase.value,
                    "categories": [
                        {"name": c.name, "mandatory": c.mandatory, "hint": c.hint}
                        for c in self.categories_for(phase)
                    ],
                }
                for phase in PHASES
            ]
        }


def taxonomy_from_dict(data: Any) -> ActionTaxonomy:
    if not isinstance(data, dict) or not isinstance(data.get("phases"), list):
        raise TaxonomyError("taxonomy document must be an object with a 'phases' array")
    cats: list[ActionCategory] = []
    seen_phases: set[Phase] = set()
    for entry in data["phases"]:
        if not isinstance(entry, dict) or "name" not in entry:
            raise TaxonomyError("each phase entry needs a 'name'")
        try:
            phase = Phase.from_name(str(entry["name"]))
        except UnknownPhase as exc:
            raise TaxonomyError(str(exc)) from exc
        if phase in seen_phases:
            raise TaxonomyError(f"phase {phase.value} listed more than once")
        seen_phases.add(phase)
        names: set[str] = set()
        for raw in entry.get("categories") or []:
            if not isinstance(raw, dict) or not str(raw.get("name", "")).strip():
                raise TaxonomyError(f"{phase.value}: category entries need a nonempty 'name'")
            name = str(raw["name"]).strip()
            # the grammar ends the category at the first period
            if "." in name or "\n" in name:
                raise TaxonomyError(f"{phase.value}: category name {name!r} may not contain '.'")
            if name.casefold() in names:
                raise TaxonomyError(f"{phase.value}: duplicate category {name!r}")
            names.add(name.casefold())
            cats.append(ActionCategory(name, phase, bool(raw.get("mandatory", False)),
                                       str(raw.get("hint", ""))))

    taxonomy = ActionTaxonomy(tuple(cats))
    for phase in PHASES:
        if not taxonomy.categories_for(phase):
            raise TaxonomyError(f"phase {phase.value} has no categories")
        if not taxonomy.mandatory_for(phase):
            raise TaxonomyError(f"phase {phase.value} has no mandatory category")
    return taxonomy


def load_taxonomy(path: str | Path) -> ActionTaxonomy:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"{path}: invalid JSON ({exc.msg})") from exc
    return taxonomy_from_dict(data)


@functools.lru_cache(maxsize=1)
def default_taxonomy() -> ActionTaxonomy:
    text = resources.files("consult.data").joinpath("taxonomy.json").read_text(encoding="utf-8")
    return taxonomy_from_dict(json.loads(text))


def categories_for(taxonomy: ActionTaxonomy, phase: Phase) -> list[ActionCategory]:
    return taxonomy.categories_for(phase)


_HEAD = re.compile(r"<([^<>\n]*)>\s*:", re.DOTALL)


def parse_action(text: str, taxonomy: ActionTaxonomy) -> Action:
    """Parse a doctor reply into an :class:`Action`.

    Leading chatter before the first ``<Phase>:`` head is ignored. Phase and
    category are matched case-insensitively and returned in canonical
    spelling.
    """
    m = _HEAD.search(text)
    if m is None:
        raise MalformedAction("missing '<Phase>:' head")
    phase = Phase.from_name(m.group(1))
    rest = text[m.end():]
    dot = rest.find(".")
    if dot < 0:
        raise MalformedAction("missing '.' after the category name")
    name = " ".join(rest[:dot].split())
    if not name:
        raise MalformedAction("empty category name")
    utterance = rest[dot + 1:].strip()
    category = taxonomy.find(phase, name)
    if category is None:
        raise UnknownCategory(phase, name)
    if not utterance:
        raise MalformedAction("empty utterance after the category")
    return Action(phase, category.name, utterance)


def render_action(action: Action) -> str:
    return f"<{action.phase.value}>: {action.category}. {action.utterance}"


def validate_action(action: Action, taxonomy: ActionTaxonomy) -> None:
    if taxonomy.find(action.phase, action.category) is None:
        raise UnknownCategory(action.phase, action.category)
    if not action.utterance.strip():
        raise MalformedAction("empty utterance")
