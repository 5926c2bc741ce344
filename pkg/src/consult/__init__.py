"""Phase-gated multi-agent consultation engine with benchmark evaluation."""

from .agents import DiagnosticReport, MemoryBank, Observation, PatientPolicy
from .backend import BackendFailure, ChatRequest, ChatResponse, HttpBackend, ScriptedBackend
from .cases import CaseRecord, ExamResult, GroundTruth, NotAvailable, load_corpus, lookup_exam
from .fsm import ConsultationState, GoalUnmet, TransitionKind, apply_action, initial_state
from .taxonomy import Action, ActionTaxonomy, Phase, default_taxonomy, parse_action, render_action

__version__ = "0.1.0"

__all__ = [
    "Action", "ActionTaxonomy", "BackendFailure", "CaseRecord", "ChatRequest", "ChatResponse",
    "ConsultationState", "DiagnosticReport", "ExamResult", "GoalUnmet", "GroundTruth", "HttpBackend",
    "MemoryBank", "NotAvailable", "Observation", "PatientPolicy", "Phase", "ScriptedBackend",
    "TransitionKind", "apply_action", "default_taxonomy", "initial_state", "load_corpus",
    "lookup_exam", "parse_action", "render_action",
]
