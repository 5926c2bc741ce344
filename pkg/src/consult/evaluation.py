"""Rubric scoring, ICD-10 entity matching and corpus-level statistics."""

from __future__ import annotations

import functools
import json
import math
import re
import statistics
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agents import DEFAULT_PROMPTS, MAX_ATTEMPTS, REPORT_SECTIONS, DiagnosticReport, Prompts
from .backend import ChatBackend
from .cases import CaseRecord

ASPECTS: tuple[str, ...] = tuple(key for key, _ in REPORT_SECTIONS)
ASPECT_TITLES: dict[str, str] = dict(REPORT_SECTIONS)
Z95 = 1.96

SCORE_GRAMMAR = (
    "Reply with exactly five lines and nothing else, one per aspect, in the form "
    "'Aspect: integer' with integers from 0 to 100, using these aspect names: "
    + ", ".join(ASPECT_TITLES.values()) + "."
)

ICD_CODE = re.compile(r"^[A-Z][0-9]{2}(?:\.[0-9A-Z]{1,4})?$")


class EvaluatorParseFailure(RuntimeError):
    pass


class ScoreFormatError(ValueError):
    pass


class IcdIndexError(ValueError):
    pass


# ---------------------------------------------------------------- rubric scores


@dataclass(frozen=True)
class FiveScores:
    symptoms: int
    medical_examinations: int
    diagnostic_results: int
    diagnostic_rationales: int
    treatment_plan: int

    def __post_init__(self):
        for aspect in ASPECTS:
            v = getattr(self, aspect)
            if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= 100:
                raise ValueError(f"{aspect} must be an integer in [0, 100], got {v!r}")

    def as_dict(self) -> dict[str, int]:
        return {a: getattr(self, a) for a in ASPECTS}


def _aspect_key(name: str) -> str | None:
    norm = " ".join(name.lower().split())
    for key, title in ASPECT_TITLES.items():
        if norm == title.lower():
            return key
    return None


def parse_scores(text: str) -> FiveScores:
    """Parse the strict five-line ``Aspect: integer`` evaluator reply."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != len(ASPECTS):
        raise ScoreFormatError(f"expected {len(ASPECTS)} lines, got {len(lines)}")
    values: dict[str, int] = {}
    for line in lines:
        m = re.fullmatch(r"([A-Za-z ]+?)\s*:\s*(-?\d+)", line)
        if not m:
            raise ScoreFormatError(f"line {line!r} is not 'Aspect: integer'")
        key = _aspect_key(m.group(1))
        if key is None:
            raise ScoreFormatError(f"unknown aspect {m.group(1)!r}")
        if key in values:
            raise ScoreFormatError(f"aspect {m.group(1)!r} given twice")
        value = int(m.group(2))
        if not 0 <= value <= 100:
            raise ScoreFormatError(f"{m.group(1)} score {value} outside 0-100")
        values[key] = value
    return FiveScores(**values)


def render_record(record: CaseRecord) -> str:
    lines = [f"Profile: {record.profile}", "Self-reported history:"]
    lines += [f"- {k}: {v}" for k, v in record.self_report.items()]
    lines.append("Examinations:")
    lines += [f"- {e.test_name} ({e.modality.value}): {e.result_text}" for e in record.examinations]
    gt = record.ground_truth
    lines += [
        f"Diagnosis: {gt.diagnosis_text}",
        f"Diagnostic rationale: {gt.rationale_text}",
        f"Treatment: {gt.treatment_text}",
    ]
    return "\n".join(lines)


def score_report(report: DiagnosticReport, record: CaseRecord, backend: ChatBackend, *,
                 prompts: Prompts = DEFAULT_PROMPTS, max_attempts: int = MAX_ATTEMPTS) -> FiveScores:
    messages = [{"role": "user", "content": prompts.render(
        "evaluator", ground_truth=render_record(record), report=report.render(), grammar=SCORE_GRAMMAR)}]
    error = ""
    for _ in range(max_attempts):
        reply = backend.chat(messages).content
        try:
            return parse_scores(reply)
        except ScoreFormatError as exc:
            error = str(exc)
            messages += [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": prompts.render("evaluator_retry", error=error,
                                                           grammar=SCORE_GRAMMAR)},
            ]
    raise EvaluatorParseFailure(f"evaluator reply unusable after {max_attempts} attempts: {error}")


@dataclass(frozen=True)
class AspectStats:
    mean: float
    stderr: float
    ci95_low: float
    ci95_high: float
    n: int


def aggregate_scores(scores: Sequence[FiveScores]) -> dict[str, AspectStats]:
    """Per-aspect mean and standard error of the mean (sample sd / sqrt(n))."""
    if not scores:
        raise ValueError("cannot aggregate an empty score list")
    n = len(scores)
    out = {}
    for aspect in ASPECTS:
        values = [getattr(s, aspect) for s in scores]
        mean = statistics.fmean(values)
        stderr = statistics.stdev(values) / math.sqrt(n) if n > 1 else 0.0
        out[aspect] = AspectStats(mean, stderr, mean - Z95 * stderr, mean + Z95 * stderr, n)
    return out


# ---------------------------------------------------------------- ICD-10 matching


def normalize_term(term: str) -> str:
    return " ".join(term.split()).casefold()


@dataclass(frozen=True)
class IcdIndex:
    terms: Mapping[str, str]
    canonical: Mapping[str, str]

    def lookup(self, term: str) -> str | None:
        return self.terms.get(normalize_term(term))

    @functools.cached_property
    def _pattern(self) -> re.Pattern:
        alts = sorted(self.terms, key=len, reverse=True)
        return re.compile(r"(?<!\w)(?:" + "|".join(map(re.escape, alts)) + r")(?!\w)")

    def find_terms(self, text: str) -> list[str]:
        """Index terms occurring in ``text``, longest match first at each position."""
        if not self.terms:
            return []
        return [m.group(0) for m in self._pattern.finditer(normalize_term(text))]


def icd_index_from_dict(data: Any) -> IcdIndex:
    if not isinstance(data, dict) or not isinstance(data.get("codes"), list):
        raise IcdIndexError("ICD index must be an object with a 'codes' array")
    terms: dict[str, str] = {}
    canonical: dict[str, str] = {}
    for i, entry in enumerate(data["codes"]):
        code = str(entry.get("code", "")).strip().upper()
        if not ICD_CODE.match(code):
            raise IcdIndexError(f"codes[{i}]: {code!r} is not an ICD-10 code")
        if code in canonical:
            raise IcdIndexError(f"codes[{i}]: code {code} listed twice")
        name = normalize_term(str(entry.get("canonical", "")))
        if not name:
            raise IcdIndexError(f"codes[{i}]: missing canonical term")
        canonical[code] = name
        for surface in [name, *map(normalize_term, entry.get("synonyms", []))]:
            if not surface:
                continue
            if terms.get(surface, code) != code:
                raise IcdIndexError(f"term {surface!r} maps to both {terms[surface]} and {code}")
            terms[surface] = code
    return IcdIndex(terms, canonical)


def load_icd_index(path: str | Path) -> IcdIndex:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IcdIndexError(f"{path}: invalid JSON ({exc.msg})") from exc
    return icd_index_from_dict(data)


@functools.lru_cache(maxsize=1)
def default_icd_index() -> IcdIndex:
    text = (resources.files("consult.data") / "icd10_subset.json").read_text(encoding="utf-8")
    return icd_index_from_dict(json.loads(text))


_SEGMENT_SPLIT = re.compile(r"[;\n]|\.(?=\s|$)")
_LIST_MARKER = re.compile(r"^\s*(?:\(?\d+[.)]|[-*•])\s*")


def _dedup(items: Iterable[str]) -> list[str]:
    seen: dict[str, None] = {}
    for item in items:
        if item:
            seen.setdefault(item, None)
    return list(seen)


def extract_entities(diagnosis_text: str, mode: str = "rule", backend: ChatBackend | None = None, *,
                     index: IcdIndex | None = None, prompts: Prompts = DEFAULT_PROMPTS) -> list[str]:
    """Pull disease mentions out of free text, case-folded and deduplicated.

    ``rule`` splits on sentence, semicolon, line and list-number boundaries
    and keeps index terms found in each segment. Commas are not boundaries
    because inverted synonyms such as ``appendicitis, acute`` contain them.
    ``model`` asks ``backend`` for one entity per line.
    """
    if not diagnosis_text.strip():
        return []
    if mode == "rule":
        index = index or default_icd_index()
        found = []
        for segment in _SEGMENT_SPLIT.split(diagnosis_text):
            found += index.find_terms(_LIST_MARKER.sub("", segment))
        return _dedup(found)
    if mode == "model":
        if backend is None:
            raise ValueError("model-mode extraction needs a backend")
        reply = backend.chat([{"role": "user", "content": prompts.render("entities", text=diagnosis_text)}])
        return _dedup(normalize_term(_LIST_MARKER.sub("", line)).rstrip(".")
                      for line in reply.content.splitlines())
    raise ValueError(f"unknown extraction mode {mode!r}")


@dataclass(frozen=True)
class Normalized:
    codes: frozenset[str]
    unmatched: tuple[str, ...]


def normalize_to_icd(entities: Iterable[str], index: IcdIndex) -> Normalized:
    codes: set[str] = set()
    unmatched: list[str] = []
    for entity in entities:
        code = index.lookup(entity)
        if code is None:
            unmatched.append(normalize_term(entity))
        else:
            codes.add(code)
    return Normalized(frozenset(codes), tuple(unmatched))


# ---------------------------------------------------------------- overlap metrics


@dataclass(frozen=True)
class MatchResult:
    case_id: str
    predicted_codes: frozenset[str]
    truth_codes: frozenset[str]

    @property
    def intersection_size(self) -> int:
        return len(self.predicted_codes & self.truth_codes)

    def to_dict(self) -> dict[str, Any]:
        return {"case_id": self.case_id, "predicted_codes": sorted(self.predicted_codes),
                "truth_codes": sorted(self.truth_codes), "intersection_size": self.intersection_size}


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def _harmonic(p, r):
    return 2 * p * r / (p + r) if p + r else p * 0


def set_overlap_metrics(predicted: Iterable[str], truth: Iterable[str]) -> dict[str, float]:
    predicted, truth = set(predicted), set(truth)
    if not truth:
        raise ValueError("truth set is empty; exclude the case upstream")
    hits = len(predicted & truth)
    return {"precision": float(_ratio(hits, len(predicted))), "recall": hits / len(truth)}


def f1(precision: float, recall: float) -> float:
    """Harmonic mean on whatever common scale (fraction or percent) the inputs use."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def corpus_metrics(results: Sequence[MatchResult]) -> dict[str, float]:
    """Micro (pooled counts) and macro (mean of per-case) precision, recall and F1.

    Computed in exact rational arithmetic and rounded once to float.
    """
    if not results:
        raise ValueError("no match results to aggregate")
    if any(not r.truth_codes for r in results):
        raise ValueError("every result needs a nonempty truth set")
    hits = sum(r.intersection_size for r in results)
    n_pred = sum(len(r.predicted_codes) for r in results)
    n_truth = sum(len(r.truth_codes) for r in results)
    micro_p, micro_r = _ratio(hits, n_pred), _ratio(hits, n_truth)

    per_p = [_ratio(r.intersection_size, len(r.predicted_codes)) for r in results]
    per_r = [_ratio(r.intersection_size, len(r.truth_codes)) for r in results]
    per_f = [_harmonic(p, r) for p, r in zip(per_p, per_r)]
    n = len(results)
    return {
        "micro_precision": float(micro_p),
        "micro_recall": float(micro_r),
        "micro_f1": float(_harmonic(micro_p, micro_r)),
        "macro_precision": float(sum(per_p) / n),
        "macro_recall": float(sum(per_r) / n),
        "macro_f1": float(sum(per_f) / n),
    }


# ---------------------------------------------------------------- distributions


def _turns_of(item: Any) -> int:
    if isinstance(item, int):
        return item
    if isinstance(item, Mapping):
        return int(item["turn_count"])
    return int(item.turn_count)


def turn_histogram(transcripts: Iterable[Any]) -> dict[str, Any]:
    """Frequency of final turn counts, with mode and population variance."""
    turns = [_turns_of(t) for t in transcripts]
    counts = Counter(turns)
    hist = {t: counts[t] for t in sorted(counts)}
    if not turns:
        return {"histogram": {}, "n": 0, "mode": None, "variance": None, "mean": None}
    top = max(counts.values())
    return {
        "histogram": hist,
        "n": len(turns),
        "mode": min(t for t, c in counts.items() if c == top),
        "variance": statistics.pvariance(turns),
        "mean": statistics.fmean(turns),
    }


def score_histogram(values: Iterable[int], width: int = 10) -> dict[str, int]:
    """Bucket 0-100 scores; the top bucket is closed so 100 lands with 90-99."""
    edges = list(range(0, 100, width))
    hist = {f"{lo}-{min(lo + width, 100) - (0 if lo + width >= 100 else 1)}": 0 for lo in edges}
    labels = list(hist)
    for v in values:
        i = min(int(v) // width, len(edges) - 1)
        hist[labels[i]] += 1
    return hist
