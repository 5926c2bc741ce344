from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from consult.fsm import (
    ActionAfterTermination,
    ConsultationState,
    GoalUnmet,
    TransitionKind,
    apply_action,
    classify_transition,
    in_reserve,
    initial_state,
    is_terminal,
    subgoal_status,
)
from consult.taxonomy import FINAL_DIAGNOSIS, Action, Phase, UnknownCategory, default_taxonomy

from properties import check_trajectory

TAX = default_taxonomy()


def act(phase, category, text="x"):
    return Action(phase, category, text)


CC = act(Phase.INQUIRY, "Chief Complaint", "Do you feel headache?")
HPI = act(Phase.INQUIRY, "History of Present Illness")
PE = act(Phase.EXAMINATION, "Physical Examination")
LAB = act(Phase.EXAMINATION, "Laboratory Tests")
FINAL = act(Phase.DIAGNOSIS, FINAL_DIAGNOSIS)


def run(actions, state=None, **kw):
    state = state or initial_state()
    for a in actions:
        nxt = apply_action(state, a, TAX, **kw)
        assert isinstance(nxt, ConsultationState), nxt
        state = nxt
    return state


def test_initial_state():
    s = initial_state(20)
    assert (s.phase, s.turn, dict(s.coverage), s.terminated) == (Phase.INQUIRY, 0, {}, False)
    assert initial_state(3).max_turns == 3
    with pytest.raises(ValueError):
        initial_state(2)


def test_classify():
    s = initial_state()
    assert classify_transition(s, CC) is TransitionKind.STAY
    assert classify_transition(s, PE) is TransitionKind.PROGRESSIVE
    diag = dataclasses.replace(s, phase=Phase.DIAGNOSIS)
    assert classify_transition(diag, LAB) is TransitionKind.RETROSPECTIVE


def test_apply_first_action():
    s = apply_action(initial_state(), CC, TAX)
    assert s.phase is Phase.INQUIRY and s.turn == 1
    assert dict(s.coverage) == {Phase.INQUIRY: frozenset({"Chief Complaint"})}


def test_gate_lists_unvisited_mandatory():
    s = run([CC])
    out = apply_action(s, PE, TAX)
    assert isinstance(out, GoalUnmet)
    assert out.unmet == ("History of Present Illness",)
    assert out.blocked_phase is Phase.INQUIRY and out.target_phase is Phase.EXAMINATION
    assert "History of Present Illness" in out.message()


def test_gate_opens_after_mandatory_coverage():
    s = run([CC, HPI, PE])
    assert s.phase is Phase.EXAMINATION and s.turn == 3


def test_gate_checks_skipped_phase():
    out = apply_action(run([CC, HPI]), FINAL, TAX)
    assert isinstance(out, GoalUnmet) and out.blocked_phase is Phase.EXAMINATION


def test_gating_off_admits_everything():
    s = run([FINAL], gating=False)
    assert s.terminated and s.turn == 1


def test_forced_progression_reserve():
    s = initial_state(5)
    s = run([CC, CC, CC], s)
    assert in_reserve(s)
    s = run([FINAL], s)
    assert s.terminated


def test_final_diagnosis_terminates_and_blocks_further_actions():
    s = run([CC, HPI, PE, FINAL])
    assert s.terminated and is_terminal(s)
    with pytest.raises(ActionAfterTermination):
        apply_action(s, CC, TAX)


def test_cap_is_terminal():
    s = run([CC, CC, CC], initial_state(3))
    assert is_terminal(s) and not s.terminated
    with pytest.raises(ActionAfterTermination):
        apply_action(s, CC, TAX)
    assert not is_terminal(initial_state())


def test_retrospective_never_gated():
    s = run([CC, HPI, PE, act(Phase.DIAGNOSIS, "Preliminary Diagnosis")])
    back = apply_action(s, LAB, TAX)
    assert back.phase is Phase.EXAMINATION and not back.terminated


def test_invalid_action_rejected():
    with pytest.raises(UnknownCategory):
        apply_action(initial_state(), act(Phase.EXAMINATION, "MRI Scan"), TAX)


def test_subgoal_status():
    s = initial_state()
    st0 = subgoal_status(s, Phase.INQUIRY, TAX)
    assert (st0.mandatory_total, st0.mandatory_visited, st0.met) == (2, 0, False)
    s = run([CC, HPI])
    assert subgoal_status(s, Phase.INQUIRY, TAX).met
    s2 = run([act(Phase.INQUIRY, "Past Medical History")], s)
    assert subgoal_status(s2, Phase.INQUIRY, TAX).met


# ------------------------------------------------------------- properties

actions = st.sampled_from(TAX.categories).flatmap(
    lambda c: st.just(Action(c.phase, c.name, "probe")))


@given(seq=st.lists(actions, max_size=60), max_turns=st.integers(3, 25), gating=st.booleans())
def test_fsm_invariants(seq, max_turns, gating):
    check_trajectory(seq, max_turns, gating)


@given(seq=st.lists(actions, min_size=1, max_size=40), max_turns=st.integers(3, 25))
def test_applied_moves_bounded_by_cap(seq, max_turns):
    state, _ = check_trajectory(seq, max_turns)
    assert state.turn <= max_turns
