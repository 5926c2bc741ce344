"""``consult`` command line: run, evaluate, stats."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .agents import PatientPolicy
from .backend import BackendSettings, HttpBackend, ScriptedBackend
from .cases import load_corpus
from .evaluation import default_icd_index, load_icd_index
from .harness import ConfigError, MixedRunError, RunConfig, evaluate_run, run_benchmark, stats

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consult", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="play consultations for every case in a corpus")
    run.add_argument("--corpus", required=True)
    run.add_argument("--taxonomy", default=None, help="taxonomy JSON (default: packaged)")
    run.add_argument("--backend", choices=("http", "scripted"), default="http")
    run.add_argument("--fixtures", default=None,
                     help="scripted mode: fixture file, or directory of {case_id}.json files")
    run.add_argument("--base-url", default=None, help="overrides CONSULT_BASE_URL")
    run.add_argument("--model", default="gpt-4o")
    run.add_argument("--temperature", type=float, default=0.0)
    run.add_argument("--max-turns", type=int, default=20)
    run.add_argument("--concurrency", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.add_argument("--no-gating", action="store_true")
    run.add_argument("--disrupt", type=float, default=None, metavar="RATE",
                     help="enable patient disruptions with this probability per answer")
    run.add_argument("--prompts", default=None, help="directory overriding prompt templates")

    ev = sub.add_parser("evaluate", help="score reports and compute entity-overlap metrics")
    ev.add_argument("--transcripts", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--icd", default=None, help="ICD-10 index JSON (default: packaged desk subset)")
    ev.add_argument("--evaluator", default="gpt-4o", help="evaluator model name")
    ev.add_argument("--backend", choices=("http", "scripted"), default="http")
    ev.add_argument("--fixtures", default=None,
                    help="scripted mode: fixture file, or directory of {case_id}.json files")
    ev.add_argument("--base-url", default=None)
    ev.add_argument("--extraction", choices=("rule", "model"), default="rule")
    ev.add_argument("--force", action="store_true", help="accept transcripts from mixed configs")
    ev.add_argument("--out", required=True)

    st = sub.add_parser("stats", help="turn and score distributions")
    st.add_argument("--transcripts", required=True)
    st.add_argument("--metrics", default=None)
    st.add_argument("--out", default=None, help="also write the JSON document here")
    return parser


def _run(args) -> int:
    if args.disrupt is not None and not 0.0 <= args.disrupt <= 1.0:
        raise ConfigError("--disrupt must be within [0, 1]")
    config = RunConfig(
        corpus=args.corpus,
        out_dir=args.out,
        taxonomy=args.taxonomy,
        backend=BackendSettings(mode=args.backend, base_url=args.base_url, model_name=args.model,
                                temperature=args.temperature, seed=args.seed, fixtures=args.fixtures),
        max_turns=args.max_turns,
        patient=PatientPolicy(args.disrupt is not None, args.disrupt or 0.0, args.seed),
        concurrency=args.concurrency,
        gating=not args.no_gating,
        prompt_dir=args.prompts,
    )
    summary = run_benchmark(config)
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK if summary.exit_status == 0 else EXIT_PARTIAL


def _evaluate(args) -> int:
    corpus = load_corpus(args.corpus)
    index = load_icd_index(args.icd) if args.icd else default_icd_index()
    if args.backend == "scripted":
        if not args.fixtures:
            raise ConfigError("scripted evaluator needs --fixtures")
        root = Path(args.fixtures)
        if root.is_dir():
            def evaluator(case_id: str) -> ScriptedBackend:
                return ScriptedBackend.from_file(root / f"{case_id}.json", model_name=args.evaluator)
        else:
            evaluator = ScriptedBackend.from_file(root, model_name=args.evaluator)
        extraction_backend = None
    else:
        evaluator = HttpBackend(args.base_url, model_name=args.evaluator)
        extraction_backend = evaluator
    doc = evaluate_run(args.transcripts, corpus, index, evaluator, extraction_mode=args.extraction,
                       extraction_backend=extraction_backend, force=args.force)
    Path(args.out).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    for w in doc["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    match = doc["match"] or {}
    print(json.dumps({"scores": doc["scores"] and {k: round(v["mean"], 2) for k, v in doc["scores"]["aspects"].items()},
                      "micro": match.get("micro"), "excluded": len(doc["excluded"]),
                      "evaluator_failures": doc["evaluator_failures"]}, indent=2))
    return EXIT_OK if not doc["excluded"] and not doc["evaluator_failures"] else EXIT_PARTIAL


def _stats(args) -> int:
    doc, text = stats(args.transcripts, args.metrics)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "evaluate": _evaluate, "stats": _stats}[args.command]
    try:
        return handler(args)
    except (ConfigError, MixedRunError, FileNotFoundError, ValueError) as exc:
        print(f"consult: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
