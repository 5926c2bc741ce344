"""Run consultations over a corpus, persist transcripts, evaluate and summarise them."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .agents import (
    DEFAULT_PROMPTS,
    DiagnosticReport,
    MemoryBank,
    Observation,
    PatientPolicy,
    Prompts,
    choose_action,
    compose_final_report,
    doctor_reflect,
    examiner_respond,
    fallback_action,
    memory_append,
    patient_respond,
)
from .backend import BackendFailure, BackendSettings, ChatBackend, HttpBackend, ScriptedBackend
from .cases import CaseRecord, load_corpus
from .evaluation import (
    ASPECTS,
    ASPECT_TITLES,
    EvaluatorParseFailure,
    FiveScores,
    IcdIndex,
    MatchResult,
    aggregate_scores,
    corpus_metrics,
    extract_entities,
    f1 as f1_score,
    normalize_to_icd,
    score_histogram,
    score_report,
    set_overlap_metrics,
    turn_histogram,
)
from .fsm import (
    DEFAULT_MAX_TURNS,
    DEFAULT_RESERVE,
    MIN_TURNS,
    ConsultationState,
    GoalUnmet,
    apply_action,
    classify_transition,
    initial_state,
    is_terminal,
)
from .taxonomy import (
    Action,
    ActionTaxonomy,
    Phase,
    default_taxonomy,
    load_taxonomy,
    parse_action,
    render_action,
)

log = logging.getLogger(__name__)

TIMESTAMP_KEYS = ("started_at", "finished_at")
TURN_DEFINITION = "one applied doctor action, blocked progression attempts excluded"


class ConfigError(ValueError):
    pass


class MixedRunError(ValueError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    corpus: str
    out_dir: str = "runs"
    taxonomy: str | None = None
    backend: BackendSettings = field(default_factory=BackendSettings)
    max_turns: int = DEFAULT_MAX_TURNS
    patient: PatientPolicy = field(default_factory=PatientPolicy)
    concurrency: int = 1
    gating: bool = True
    reserve: int = DEFAULT_RESERVE
    max_rejections: int = 3
    patient_mode: str = "record"
    prompt_dir: str | None = None

    def validate(self) -> None:
        if self.concurrency < 1:
            raise ConfigError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.max_turns < MIN_TURNS:
            raise ConfigError(f"max_turns must be >= {MIN_TURNS}, got {self.max_turns}")
        if self.reserve < 0 or self.max_rejections < 1:
            raise ConfigError("reserve must be >= 0 and max_rejections >= 1")
        if self.patient_mode not in ("record", "paraphrase"):
            raise ConfigError(f"unknown patient mode {self.patient_mode!r}")
        if self.backend.mode not in ("scripted", "http"):
            raise ConfigError(f"unknown backend mode {self.backend.mode!r}")

    def describe(self) -> dict[str, Any]:
        """Settings that shape transcript content (output location and parallelism excluded)."""
        return {
            "corpus": self.corpus,
            "taxonomy": self.taxonomy,
            "backend": self.backend.fingerprint_fields(),
            "max_turns": self.max_turns,
            "patient": dataclasses.asdict(self.patient),
            "gating": self.gating,
            "reserve": self.reserve,
            "max_rejections": self.max_rejections,
            "patient_mode": self.patient_mode,
            "prompt_dir": self.prompt_dir,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- transcripts


@dataclass
class TurnRecord:
    turn: int
    action: str
    phase: str
    category: str
    transition: str
    observation: str
    observation_kind: str | None
    goal_unmet: bool = False
    unmet: list[str] = field(default_factory=list)
    fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"type": "turn", **dataclasses.asdict(self)}


@dataclass
class Transcript:
    case_id: str
    fingerprint: str
    config: dict[str, Any]
    turns: list[TurnRecord] = field(default_factory=list)
    report: DiagnosticReport | None = None
    termination_cause: str | None = None
    turn_count: int = 0
    final_phase: str | None = None
    terminal_reward: float | None = None
    status: str = "completed"
    error: str | None = None

    @property
    def applied_turns(self) -> list[TurnRecord]:
        return [t for t in self.turns if not t.goal_unmet]

    def header(self) -> dict[str, Any]:
        return {"type": "header", "case_id": self.case_id, "fingerprint": self.fingerprint,
                "config": self.config}

    def summary(self) -> dict[str, Any]:
        return {
            "type": "summary",
            "status": self.status,
            "error": self.error,
            "termination_cause": self.termination_cause,
            "turn_count": self.turn_count,
            "final_phase": self.final_phase,
            "goal_unmet_turns": sum(t.goal_unmet for t in self.turns),
            "report": self.report.to_dict() if self.report else None,
            "terminal_reward": self.terminal_reward,
        }


class TranscriptWriter:
    """Append-only JSONL sink: header, one line per turn, closing summary."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = path.open("w", encoding="utf-8", newline="\n")

    def _write(self, obj: dict[str, Any]) -> None:
        self._fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=False) + "\n")
        self._fh.flush()

    def header(self, transcript: Transcript) -> None:
        self._write({**transcript.header(), "started_at": _now()})

    def turn(self, record: TurnRecord) -> None:
        self._write(record.to_dict())

    def summary(self, transcript: Transcript) -> None:
        self._write({**transcript.summary(), "finished_at": _now()})
        self._fh.close()


def load_transcript(path: str | Path) -> Transcript:
    lines = [json.loads(ln) for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError(f"{path}: transcript must start with a header line")
    head = lines[0]
    t = Transcript(head["case_id"], head["fingerprint"], head.get("config", {}))
    turn_fields = {f.name for f in dataclasses.fields(TurnRecord)}
    summary = None
    for obj in lines[1:]:
        if obj.get("type") == "turn":
            t.turns.append(TurnRecord(**{k: v for k, v in obj.items() if k in turn_fields}))
        elif obj.get("type") == "summary":
            summary = obj
    if summary is None:
        t.status, t.error = "incomplete", "no summary line"
        t.turn_count = len(t.applied_turns)
        return t
    t.status = summary["status"]
    t.error = summary.get("error")
    t.termination_cause = summary.get("termination_cause")
    t.turn_count = summary.get("turn_count", 0)
    t.final_phase = summary.get("final_phase")
    t.terminal_reward = summary.get("terminal_reward")
    if summary.get("report"):
        t.report = DiagnosticReport.from_dict(summary["report"])
    return t


def strip_timestamps(text: str) -> str:
    """Transcript file text with the wall-clock fields removed, for byte comparison."""
    out = []
    for line in text.splitlines():
        obj = json.loads(line)
        for key in TIMESTAMP_KEYS:
            obj.pop(key, None)
        out.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- one consultation


@dataclass
class Backends:
    doctor: ChatBackend
    patient: ChatBackend | None = None

    def all(self) -> list[ChatBackend]:
        return [b for b in (self.doctor, self.patient) if b is not None]


def _observe(record: CaseRecord, action: Action, state: ConsultationState, config: RunConfig,
             backends: Backends, prompts: Prompts) -> Observation:
    if action.phase is Phase.INQUIRY:
        paraphraser = backends.patient if config.patient_mode == "paraphrase" else None
        return patient_respond(record, action, config.patient, turn=state.turn,
                               backend=paraphraser, prompts=prompts)
    if action.phase is Phase.EXAMINATION:
        return examiner_respond(record, action)
    return doctor_reflect(action)


def run_consultation(record: CaseRecord, config: RunConfig, backends: Backends, *,
                     taxonomy: ActionTaxonomy | None = None, prompts: Prompts = DEFAULT_PROMPTS,
                     writer: TranscriptWriter | None = None) -> Transcript:
    """Play one case to termination and compose its report.

    A blocked progression is logged as a ``goal_unmet`` turn sharing the
    index of the turn it tried to take, and its message is shown to the
    doctor on the next call. After ``max_rejections`` consecutive blocks the
    fallback action is applied instead of asking the doctor again.
    """
    taxonomy = taxonomy or default_taxonomy()
    transcript = Transcript(record.case_id, config.fingerprint(), config.describe())
    if writer:
        writer.header(transcript)

    def emit(rec: TurnRecord) -> None:
        transcript.turns.append(rec)
        if writer:
            writer.turn(rec)

    state = initial_state(config.max_turns)
    memory = MemoryBank()
    pending: GoalUnmet | None = None
    rejections = 0
    try:
        while not is_terminal(state):
            if rejections >= config.max_rejections:
                action, fell_back = fallback_action(state, taxonomy), True
            else:
                decision = choose_action(state, memory, taxonomy, backends.doctor,
                                         goal_unmet=pending, prompts=prompts)
                action, fell_back = decision.action, decision.fell_back
            kind = classify_transition(state, action)
            result = apply_action(state, action, taxonomy, gating=config.gating, reserve=config.reserve)
            if isinstance(result, GoalUnmet):
                pending, rejections = result, rejections + 1
                emit(TurnRecord(state.turn + 1, render_action(action), action.phase.value, action.category,
                                kind.value, result.message(), None, True, list(result.unmet), fell_back))
                continue
            pending, rejections = None, 0
            state = result
            obs = _observe(record, action, state, config, backends, prompts)
            memory = memory_append(memory, state, action, obs)
            emit(TurnRecord(state.turn, render_action(action), action.phase.value, action.category,
                            kind.value, obs.text, obs.kind.value, False, [], fell_back))
        transcript.report = compose_final_report(memory, backends.doctor, prompts=prompts)
    except BackendFailure as exc:
        transcript.status, transcript.error = "failed", f"{type(exc).__name__}: {exc}"

    transcript.turn_count = state.turn
    transcript.final_phase = state.phase.value
    if transcript.status == "completed":
        # an explicit Final Diagnosis wins over simultaneous cap exhaustion
        transcript.termination_cause = "final_diagnosis" if state.terminated else "turn_cap"
    if writer:
        writer.summary(transcript)
    return transcript


def replay_transcript(transcript: Transcript, taxonomy: ActionTaxonomy | None = None):
    """Re-apply a transcript's actions to a fresh FSM.

    Returns ``(kinds, blocked, final_state)`` where ``kinds`` lists the
    transition kind of every recorded turn and ``blocked`` whether the FSM
    rejected it.
    """
    taxonomy = taxonomy or default_taxonomy()
    cfg = transcript.config
    state = initial_state(cfg.get("max_turns", DEFAULT_MAX_TURNS))
    kinds: list[str] = []
    blocked: list[bool] = []
    for rec in transcript.turns:
        action = parse_action(rec.action, taxonomy)
        kinds.append(classify_transition(state, action).value)
        result = apply_action(state, action, taxonomy, gating=cfg.get("gating", True),
                              reserve=cfg.get("reserve", DEFAULT_RESERVE))
        blocked.append(isinstance(result, GoalUnmet))
        if not isinstance(result, GoalUnmet):
            state = result
    return kinds, blocked, state


# ---------------------------------------------------------------- benchmark


@dataclass
class RunSummary:
    total: int
    succeeded: list[str]
    failed: dict[str, str]
    usage: dict[str, int]
    out_dir: str

    @property
    def exit_status(self) -> int:
        return 0 if not self.failed else 1

    def to_dict(self) -> dict[str, Any]:
        return {"total": self.total, "succeeded": len(self.succeeded),
                "success_rate": f"{len(self.succeeded)}/{self.total}",
                "failed": self.failed, "usage": self.usage}


BackendFactory = Callable[[CaseRecord], Backends]


def default_backend_factory(config: RunConfig) -> BackendFactory:
    settings = config.backend
    opts = dict(model_name=settings.model_name, temperature=settings.temperature, seed=settings.seed)
    if settings.mode == "http":
        shared = HttpBackend(settings.base_url, **opts)
        return lambda record: Backends(shared, shared)

    if not settings.fixtures:
        raise ConfigError("scripted backend needs a fixtures path")
    root = Path(settings.fixtures)
    if not root.exists():
        raise ConfigError(f"fixtures path not found: {root}")

    def factory(record: CaseRecord) -> Backends:
        # fresh instance per case: fixture order is per run
        path = root / f"{record.case_id}.json" if root.is_dir() else root
        return Backends(ScriptedBackend.from_file(path, **opts))

    return factory


def _add_usage(total: dict[str, int], usage: Mapping[str, int]) -> None:
    for k, v in usage.items():
        total[k] = total.get(k, 0) + v


def run_benchmark(config: RunConfig, backend_factory: BackendFactory | None = None, *,
                  records: Sequence[CaseRecord] | None = None) -> RunSummary:
    config.validate()
    try:
        records = list(records) if records is not None else load_corpus(config.corpus)
        taxonomy = load_taxonomy(config.taxonomy) if config.taxonomy else default_taxonomy()
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    prompts = Prompts(config.prompt_dir) if config.prompt_dir else DEFAULT_PROMPTS
    backend_factory = backend_factory or default_backend_factory(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lock = threading.Lock()
    usage: dict[str, int] = {"requests": 0, "prompt_tokens": 0, "completion_tokens": 0}
    seen_backends: dict[int, ChatBackend] = {}

    def run_one(record: CaseRecord) -> tuple[str, str | None]:
        writer = None
        try:
            backends = backend_factory(record)
            with lock:
                for b in backends.all():
                    seen_backends[id(b)] = b
            writer = TranscriptWriter(out / f"{record.case_id}.jsonl")
            t = run_consultation(record, config, backends, taxonomy=taxonomy,
                                 prompts=prompts, writer=writer)
            return record.case_id, t.error
        except Exception as exc:  # isolate the case; the others keep running
            log.exception("case %s failed", record.case_id)
            if writer is not None and not writer._fh.closed:
                writer._fh.close()
            return record.case_id, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        results = list(pool.map(run_one, records))

    for b in seen_backends.values():
        _add_usage(usage, b.usage_totals())
    failed = {cid: err for cid, err in results if err}
    summary = RunSummary(len(records), [cid for cid, err in results if not err], failed, usage,
                         str(out))
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8")
    return summary


# ---------------------------------------------------------------- reward


@dataclass(frozen=True)
class RewardWeights:
    score_weights: Mapping[str, float] = field(default_factory=lambda: {a: 1 / 6 for a in ASPECTS})
    f1_weight: float = 1 / 6

    def __post_init__(self):
        if set(self.score_weights) != set(ASPECTS):
            raise ValueError(f"score weights must cover exactly {ASPECTS}")
        if any(w < 0 for w in self.score_weights.values()) or self.f1_weight < 0:
            raise ValueError("reward weights must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        return {"score_weights": dict(self.score_weights), "f1_weight": self.f1_weight}


@dataclass(frozen=True)
class TerminalReward:
    value: float
    weights: RewardWeights


def terminal_reward(scores: FiveScores, f1: float, weights: RewardWeights = RewardWeights()) -> TerminalReward:
    """Weighted sum of aspect scores (rescaled to [0, 1]) and diagnosis F1 (a fraction)."""
    value = sum(weights.score_weights[a] * getattr(scores, a) / 100 for a in ASPECTS)
    return TerminalReward(value + weights.f1_weight * f1, weights)


# ---------------------------------------------------------------- evaluation


def _codes_for(entities: Iterable[str], index: IcdIndex) -> tuple[frozenset[str], list[str]]:
    norm = normalize_to_icd(entities, index)
    codes, unmatched = set(norm.codes), []
    for entity in norm.unmatched:
        # longer free-text entities often contain an index term
        found = normalize_to_icd(index.find_terms(entity), index).codes
        if found:
            codes |= found
        else:
            unmatched.append(entity)
    return frozenset(codes), unmatched


def load_transcripts(directory: str | Path) -> dict[str, Transcript]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"transcript directory not found: {directory}")
    out = {}
    for path in sorted(directory.glob("*.jsonl")):
        t = load_transcript(path)
        out[t.case_id] = t
    return out


def evaluate_run(transcript_dir: str | Path, corpus: Sequence[CaseRecord], icd_index: IcdIndex,
                 evaluator: ChatBackend | Callable[[str], ChatBackend], *,
                 extraction_mode: str = "rule", extraction_backend: ChatBackend | None = None,
                 weights: RewardWeights = RewardWeights(), force: bool = False,
                 prompts: Prompts = DEFAULT_PROMPTS, concurrency: int = 1) -> dict[str, Any]:
    """Score every transcript's report and match its diagnoses against ground truth."""
    transcripts = load_transcripts(transcript_dir)
    fingerprints = sorted({t.fingerprint for t in transcripts.values()})
    if len(fingerprints) > 1 and not force:
        raise MixedRunError(f"transcripts come from {len(fingerprints)} different configs: {fingerprints}")

    evaluator_for = evaluator if callable(evaluator) else (lambda case_id: evaluator)
    warnings: list[str] = []
    excluded: list[dict[str, str]] = []
    pending: list[tuple[CaseRecord, Transcript]] = []
    for record in corpus:
        t = transcripts.get(record.case_id)
        if t is None:
            excluded.append({"case_id": record.case_id, "reason": "missing transcript"})
        elif t.status != "completed" or t.report is None:
            excluded.append({"case_id": record.case_id, "reason": f"transcript {t.status}: {t.error}"})
        else:
            pending.append((record, t))
    for ex in excluded:
        msg = f"case {ex['case_id']} excluded: {ex['reason']}"
        warnings.append(msg)
        log.warning(msg)

    def evaluate_one(item: tuple[CaseRecord, Transcript]) -> dict[str, Any]:
        record, t = item
        entry: dict[str, Any] = {"case_id": record.case_id, "turn_count": t.turn_count}
        try:
            entry["scores"] = score_report(t.report, record, evaluator_for(record.case_id),
                                           prompts=prompts).as_dict()
        except (EvaluatorParseFailure, BackendFailure) as exc:
            entry["scores"] = None
            entry["evaluator_error"] = f"{type(exc).__name__}: {exc}"
        predicted = extract_entities(t.report.diagnostic_results, extraction_mode, extraction_backend,
                                     index=icd_index, prompts=prompts)
        pred_codes, pred_unmatched = _codes_for(predicted, icd_index)
        truth_codes, truth_unmatched = _codes_for(record.ground_truth.diagnosis_entities, icd_index)
        entry.update(predicted_entities=predicted, predicted_codes=sorted(pred_codes),
                     truth_codes=sorted(truth_codes),
                     unmatched={"predicted": pred_unmatched, "truth": truth_unmatched})
        if truth_codes:
            m = set_overlap_metrics(pred_codes, truth_codes)
            entry.update(precision=m["precision"], recall=m["recall"],
                         f1=f1_score(m["precision"], m["recall"]))
        return entry

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        per_case = list(pool.map(evaluate_one, pending))

    scored = [FiveScores(**e["scores"]) for e in per_case if e["scores"] is not None]
    matches = [MatchResult(e["case_id"], frozenset(e["predicted_codes"]), frozenset(e["truth_codes"]))
               for e in per_case if e["truth_codes"]]
    failures = [e["case_id"] for e in per_case if e["scores"] is None]
    for cid in failures:
        warnings.append(f"case {cid}: evaluator failed; excluded from score aggregates")
    for e in per_case:
        if not e["truth_codes"]:
            warnings.append(f"case {e['case_id']}: no ground-truth entity maps to ICD-10; excluded from match metrics")
        if e["scores"] is not None and "f1" in e:
            e["terminal_reward"] = terminal_reward(FiveScores(**e["scores"]), e["f1"], weights).value

    score_block = None
    if scored:
        agg = aggregate_scores(scored)
        score_block = {
            "n": len(scored),
            "dispersion": "stderr = sample standard deviation / sqrt(n); ci95 = mean +/- 1.96 * stderr",
            "aspects": {a: {"title": ASPECT_TITLES[a], **dataclasses.asdict(agg[a])} for a in ASPECTS},
        }
    match_block = None
    if matches:
        cm = corpus_metrics(matches)
        match_block = {
            "n": len(matches),
            "scale": "fraction in [0, 1]",
            "micro": {"precision": cm["micro_precision"], "recall": cm["micro_recall"], "f1": cm["micro_f1"]},
            "macro": {"precision": cm["macro_precision"], "recall": cm["macro_recall"], "f1": cm["macro_f1"]},
        }
    evaluator_model = getattr(evaluator, "model_name", None) if isinstance(evaluator, ChatBackend) else (
        getattr(evaluator_for(pending[0][0].case_id), "model_name", None) if pending else None)
    return {
        "evaluator": {"model": evaluator_model, "extraction_mode": extraction_mode},
        "fingerprints": fingerprints,
        "n_cases": len(corpus),
        "n_evaluated": len(per_case),
        "scores": score_block,
        "match": match_block,
        "reward_weights": weights.to_dict(),
        "evaluator_failures": len(failures),
        "excluded": excluded,
        "unmatched_entities": {e["case_id"]: e["unmatched"] for e in per_case
                               if e["unmatched"]["predicted"] or e["unmatched"]["truth"]},
        "warnings": warnings,
        "per_case": per_case,
    }


# ---------------------------------------------------------------- analytics


def _bars(hist: Mapping[Any, int], label_width: int) -> list[str]:
    peak = max(hist.values(), default=0) or 1
    lines = []
    for key, count in hist.items():
        bar = "#" * round(30 * count / peak)
        lines.append(f"  {str(key):>{label_width}} | {bar:<30} {count}")
    return lines


def stats(transcript_dir: str | Path, metrics: str | Path | dict | None = None) -> tuple[dict[str, Any], str]:
    """Turn-count distribution plus, when metrics are supplied, per-aspect score histograms."""
    transcripts = list(load_transcripts(transcript_dir).values())
    if not transcripts:
        raise ValueError(f"no transcripts in {transcript_dir}")
    completed = [t for t in transcripts if t.status == "completed"]
    turns = turn_histogram(completed)
    doc: dict[str, Any] = {
        "n_transcripts": len(transcripts),
        "n_completed": len(completed),
        "turn_definition": TURN_DEFINITION,
        "turns": {**turns, "histogram": {str(k): v for k, v in turns["histogram"].items()}},
        "termination": {c: sum(t.termination_cause == c for t in completed)
                        for c in ("final_diagnosis", "turn_cap")},
        "goal_unmet_turns": sum(sum(r.goal_unmet for r in t.turns) for t in completed),
        "notes": [],
    }
    text = [f"Interaction turns; a turn is {TURN_DEFINITION}",
            f"  n={turns['n']} mode={turns['mode']} mean={_fmt(turns['mean'])} "
            f"variance={_fmt(turns['variance'])}"]
    text += _bars(turns["histogram"], 3)

    if metrics is None:
        note = "no metrics document given; score histograms omitted"
        doc["notes"].append(note)
        text.append(f"note: {note}")
    else:
        mdoc = metrics if isinstance(metrics, dict) else json.loads(Path(metrics).read_text(encoding="utf-8"))
        scored = [e["scores"] for e in mdoc.get("per_case", []) if e.get("scores")]
        doc["scores"] = {a: score_histogram(s[a] for s in scored) for a in ASPECTS}
        for a in ASPECTS:
            text.append(f"{ASPECT_TITLES[a]} scores (n={len(scored)}, bucket width 10)")
            text += _bars(doc["scores"][a], 6)
    return doc, "\n".join(text) + "\n"


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.2f}"
