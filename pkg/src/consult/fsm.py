"""Consultation state, deterministic transitions and sub-goal gating."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping

from .taxonomy import FINAL_DIAGNOSIS, PHASES, Action, ActionTaxonomy, Phase, validate_action

DEFAULT_MAX_TURNS = 20
DEFAULT_RESERVE = 2
MIN_TURNS = len(PHASES)


class TransitionKind(str, Enum):
    STAY = "stay"
    PROGRESSIVE = "progressive"
    RETROSPECTIVE = "retrospective"


class ActionAfterTermination(RuntimeError):
    pass


@dataclass(frozen=True)
class ConsultationState:
    phase: Phase
    turn: int
    coverage: Mapping[Phase, frozenset[str]]
    terminated: bool
    max_turns: int

    def covered(self, phase: Phase) -> frozenset[str]:
        return self.coverage.get(phase, frozenset())

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "turn": self.turn,
            "coverage": {p.value: sorted(self.coverage[p]) for p in PHASES if p in self.coverage},
            "terminated": self.terminated,
            "max_turns": self.max_turns,
        }


@dataclass(frozen=True)
class SubGoalStatus:
    phase: Phase
    mandatory_total: int
    mandatory_visited: int
    missing: tuple[str, ...] = ()

    @property
    def met(self) -> bool:
        return self.mandatory_visited == self.mandatory_total


@dataclass(frozen=True)
class GoalUnmet:
    """Returned instead of a new state when a progressive move is blocked."""

    blocked_phase: Phase
    target_phase: Phase
    unmet: tuple[str, ...]
    attempted: Action | None = field(default=None, compare=False)

    def message(self) -> str:
        return (
            f"Progression blocked: you tried to move from {self.blocked_phase.value} to "
            f"{self.target_phase.value}, but these required actions are still open: "
            + ", ".join(self.unmet) + "."
        )


def initial_state(max_turns: int = DEFAULT_MAX_TURNS) -> ConsultationState:
    if max_turns < MIN_TURNS:
        raise ValueError(f"max_turns must be >= {MIN_TURNS}, got {max_turns}")
    return ConsultationState(Phase.INQUIRY, 0, MappingProxyType({}), False, max_turns)


def classify_transition(state: ConsultationState, action: Action) -> TransitionKind:
    if action.phase == state.phase:
        return TransitionKind.STAY
    if action.phase > state.phase:
        return TransitionKind.PROGRESSIVE
    return TransitionKind.RETROSPECTIVE


def subgoal_status(state: ConsultationState, phase: Phase, taxonomy: ActionTaxonomy) -> SubGoalStatus:
    mandatory = [c.name for c in taxonomy.mandatory_for(phase)]
    visited = state.covered(phase)
    missing = tuple(n for n in mandatory if n not in visited)
    return SubGoalStatus(phase, len(mandatory), len(mandatory) - len(missing), missing)


def is_terminal(state: ConsultationState) -> bool:
    return state.terminated or state.turn >= state.max_turns


def in_reserve(state: ConsultationState, reserve: int = DEFAULT_RESERVE) -> bool:
    """Whether the turn budget is low enough that progression bypasses the gate."""
    return state.turn >= state.max_turns - reserve


def apply_action(
    state: ConsultationState,
    action: Action,
    taxonomy: ActionTaxonomy,
    *,
    gating: bool = True,
    reserve: int = DEFAULT_RESERVE,
) -> ConsultationState | GoalUnmet:
    """Advance the consultation by one doctor action.

    A progressive move is admitted only when every phase it leaves behind
    (the current one and any skipped over) has its mandatory categories
    covered, unless gating is off or the turn budget is inside the reserve.
    Rejection returns :class:`GoalUnmet` and leaves ``state`` untouched.
    """
    if is_terminal(state):
        raise ActionAfterTermination(
            f"consultation already finished at turn {state.turn}"
        )
    validate_action(action, taxonomy)
    category = taxonomy.find(action.phase, action.category).name

    if (
        gating
        and classify_transition(state, action) is TransitionKind.PROGRESSIVE
        and not in_reserve(state, reserve)
    ):
        unmet: list[str] = []
        blocked = None
        for phase in PHASES[state.phase.order:action.phase.order]:
            status = subgoal_status(state, phase, taxonomy)
            if not status.met:
                blocked = blocked or phase
                unmet.extend(status.missing)
        if unmet:
            return GoalUnmet(blocked, action.phase, tuple(unmet), action)

    coverage = dict(state.coverage)
    coverage[action.phase] = state.covered(action.phase) | {category}
    terminated = action.phase is Phase.DIAGNOSIS and category == FINAL_DIAGNOSIS
    return ConsultationState(
        phase=action.phase,
        turn=state.turn + 1,
        coverage=MappingProxyType(coverage),
        terminated=terminated,
        max_turns=state.max_turns,
    )
